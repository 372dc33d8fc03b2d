"""Synthetic dataset generators and sample-to-worker partitioning.

Two generators are provided.  ``synthetic1`` draws rows i.i.d. standard
normal (homogeneous).  ``synthetic2`` draws each worker's block from one
of ten Gaussian components whose scales span two orders of magnitude, so
different workers see very differently conditioned data.  Targets are
``X @ w + noise`` for regression and ``sign(X @ w)`` for classification,
with a sparse ground-truth ``w``.  All recipes are fixed, documented
constants; anything random flows from the single seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .problem import ConsensusProblem, Regularizer, SparseMatrix, WorkerShard

GROUND_TRUTH_DENSITY = 0.1  # fraction of nonzero coefficients in w
NOISE_STD = 0.1             # regression target noise
N_COMPONENTS = 10
COMPONENT_SCALES = np.logspace(-1.0, 1.0, N_COMPONENTS)  # 100x spread
COMPONENT_MEAN_SCALE = 10.0

PARTITION_MODES = ("round-robin", "contiguous-blocks")


@dataclass(frozen=True)
class Dataset:
    """Dense rows, targets, and (for the heterogeneous generator) the
    contiguous block sizes that keep per-worker components intact."""

    rows: np.ndarray
    targets: np.ndarray
    block_sizes: Optional[tuple[int, ...]] = None

    @property
    def n_samples(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]


def _ground_truth(features: int, rng: np.random.Generator) -> np.ndarray:
    w = np.zeros(features)
    k = max(1, int(round(GROUND_TRUTH_DENSITY * features)))
    support = rng.choice(features, size=k, replace=False)
    w[support] = rng.standard_normal(k)
    return w


def _targets(rows: np.ndarray, w: np.ndarray, task: str, rng: np.random.Generator) -> np.ndarray:
    signal = rows @ w
    if task == "regression":
        return signal + NOISE_STD * rng.standard_normal(rows.shape[0])
    if task == "classification":
        return np.where(signal >= 0.0, 1.0, -1.0)
    raise InvalidInputError(f"task must be 'regression' or 'classification', got {task!r}")


def gen_synthetic1(samples: int, features: int, seed: int, task: str = "regression") -> Dataset:
    """Homogeneous data: rows i.i.d. standard normal."""
    if samples < 1 or features < 1:
        raise InvalidInputError("samples and features must be at least 1")
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((samples, features))
    w = _ground_truth(features, rng)
    return Dataset(rows=rows, targets=_targets(rows, w, task, rng))


def gen_synthetic2(samples: int, features: int, nodes: int, seed: int,
                   task: str = "regression") -> Dataset:
    """Heterogeneous data: each node's block comes from one Gaussian component.

    Component ``c`` has mean ``COMPONENT_MEAN_SCALE * m_c`` with
    ``m_c ~ N(0, I)`` and scale ``COMPONENT_SCALES[c]``.  Node ``i`` draws
    its whole contiguous block from component ``i mod 10``; with a single
    node the block instead cycles through all ten components so the one
    worker sees the full mixture.
    """
    if samples < 1 or features < 1 or nodes < 1:
        raise InvalidInputError("samples, features and nodes must be at least 1")
    rng = np.random.default_rng(seed)
    means = COMPONENT_MEAN_SCALE * rng.standard_normal((N_COMPONENTS, features))
    w = _ground_truth(features, rng)

    if nodes == 1:
        sub_sizes = [len(chunk) for chunk in np.array_split(np.arange(samples), N_COMPONENTS)]
        components = [c for c, size in enumerate(sub_sizes) for _ in range(size)]
        block_sizes = (samples,)
        per_row_component = np.array(components)
    else:
        block_sizes = tuple(len(chunk) for chunk in np.array_split(np.arange(samples), nodes))
        per_row_component = np.concatenate([
            np.full(size, node % N_COMPONENTS) for node, size in enumerate(block_sizes)
        ])
    rows = np.empty((samples, features))
    start = 0
    # draw contiguous runs so each component's stream is one rng call
    while start < samples:
        end = start
        c = per_row_component[start]
        while end < samples and per_row_component[end] == c:
            end += 1
        rows[start:end] = means[c] + COMPONENT_SCALES[c] * rng.standard_normal((end - start, features))
        start = end
    return Dataset(rows=rows, targets=_targets(rows, w, task, rng), block_sizes=block_sizes)


def partition_indices(n_samples: int, workers: int, mode: str) -> list[np.ndarray]:
    """Assign every sample index to exactly one worker.

    ``round-robin`` deals samples cyclically; ``contiguous-blocks``
    preserves input order (required to keep the heterogeneous generator's
    per-node components intact).
    """
    if workers < 1:
        raise InvalidInputError("workers must be at least 1")
    if mode == "round-robin":
        return [np.arange(n_samples)[i::workers] for i in range(workers)]
    if mode == "contiguous-blocks":
        return list(np.array_split(np.arange(n_samples), workers))
    raise InvalidInputError(f"partition mode must be one of {PARTITION_MODES}, got {mode!r}")


def build_problem(rows: np.ndarray, targets: np.ndarray, workers: int, mode: str,
                  loss: str, regularizer: Regularizer, svm_c: float = 1.0) -> ConsensusProblem:
    """Shard a dense dataset across workers and wrap it as a problem."""
    shards = []
    for idx in partition_indices(rows.shape[0], workers, mode):
        shards.append(WorkerShard(data=SparseMatrix.from_dense(rows[idx]), targets=targets[idx]))
    return ConsensusProblem(
        dimension=rows.shape[1],
        shards=tuple(shards),
        loss=loss,
        regularizer=regularizer,
        svm_c=svm_c,
    )
