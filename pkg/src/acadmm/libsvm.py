"""LIBSVM text format reader.

One record per line: a numeric label followed by whitespace-separated
``index:value`` pairs with strictly increasing 1-based indices.  Blank
lines are skipped and ``#`` starts a comment running to the end of the
line.  Any violation raises :class:`~acadmm.errors.ParseError` carrying
the 1-based line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, TextIO, Union

import numpy as np

from .errors import ParseError
from .problem import SparseMatrix


@dataclass(frozen=True)
class LibsvmRecord:
    label: float
    features: tuple[tuple[int, float], ...]


def parse_libsvm(stream: Union[Iterable[str], TextIO]) -> list[LibsvmRecord]:
    """Parse a LIBSVM text stream into records.

    ``stream`` is any iterable of lines (an open text file works).
    """
    records: list[LibsvmRecord] = []
    for lineno, raw in enumerate(stream, start=1):
        cut = raw.find("#")
        if cut >= 0:
            raw = raw[:cut]
        tokens = raw.split()
        if not tokens:
            continue
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"nonnumeric label {tokens[0]!r}", lineno) from None
        if not math.isfinite(label):
            raise ParseError(f"non-finite label {tokens[0]!r}", lineno)
        features: list[tuple[int, float]] = []
        prev = 0
        for token in tokens[1:]:
            idx_text, sep, val_text = token.partition(":")
            if not sep or not idx_text or not val_text:
                raise ParseError(f"malformed index:value pair {token!r}", lineno)
            try:
                idx = int(idx_text)
            except ValueError:
                raise ParseError(f"nonnumeric feature index {idx_text!r}", lineno) from None
            try:
                value = float(val_text)
            except ValueError:
                raise ParseError(f"nonnumeric feature value {val_text!r}", lineno) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite feature value {val_text!r}", lineno)
            if idx <= prev:
                raise ParseError(
                    f"feature index {idx} not greater than previous index {prev}", lineno
                )
            prev = idx
            features.append((idx, value))
        records.append(LibsvmRecord(label=label, features=tuple(features)))
    return records


def records_to_arrays(records: list[LibsvmRecord],
                      n_features: int | None = None) -> tuple[SparseMatrix, np.ndarray]:
    """Assemble records into a sparse matrix and target vector.

    The feature dimension is the maximum index seen unless ``n_features``
    overrides it (which must not truncate any record).
    """
    max_idx = max((f[0] for rec in records for f in rec.features), default=0)
    if n_features is None:
        n_features = max_idx
    elif n_features < max_idx:
        raise ParseError(f"n_features={n_features} is below the maximum feature index {max_idx}")
    rows = [tuple((idx - 1, val) for idx, val in rec.features) for rec in records]
    matrix = SparseMatrix.from_rows(rows, n_features)
    targets = np.array([rec.label for rec in records], dtype=np.float64)
    return matrix, targets


def load_libsvm(path, n_features: int | None = None) -> tuple[SparseMatrix, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        records = parse_libsvm(fh)
    return records_to_arrays(records, n_features)
