"""Consensus problem model: sharded data, iterate containers, objective.

A consensus instance distributes ``N`` data shards across workers.  Each
worker ``i`` holds a local copy ``u_i`` of the model coefficients plus a
dual vector ``lambda_i`` and a positive penalty ``tau_i``; a central
iterate ``v`` ties the copies together through the constraint
``u_i = v``.  Everything numeric is 64-bit and summations run in a fixed
node order so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError

LOSSES = ("squared", "logistic", "hinge")


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce ``x`` to a finite 1-d float64 array, optionally checking length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise InvalidInputError(f"{name} has length {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return v


class SparseMatrix:
    """Immutable row-major (CSR) sparse matrix.

    Column indices are strictly increasing within every row and all values
    are finite; both are validated at construction.  Matrix products are
    delegated to :mod:`scipy.sparse`, which iterates rows/columns in a
    fixed order, so repeated products are bit-identical.
    """

    __slots__ = ("n_rows", "n_cols", "indptr", "indices", "data", "_csr", "_row_norms_sq")

    def __init__(self, n_rows, n_cols, indptr, indices, data):
        n_rows = int(n_rows)
        n_cols = int(n_cols)
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        data = np.asarray(data, dtype=np.float64)
        if n_rows < 0 or n_cols < 0:
            raise InvalidInputError("matrix dimensions must be nonnegative")
        if indptr.shape != (n_rows + 1,):
            raise InvalidInputError("indptr must have length n_rows + 1")
        if indptr[0] != 0 or indptr[-1] != indices.shape[0] or indices.shape != data.shape:
            raise InvalidInputError("inconsistent CSR arrays")
        if np.any(np.diff(indptr) < 0):
            raise InvalidInputError("indptr must be nondecreasing")
        if indices.size:
            if indices.min() < 0 or indices.max() >= n_cols:
                raise InvalidInputError("column index out of range")
            # strictly increasing inside each row; row boundaries are exempt
            ok = np.diff(indices) > 0
            boundaries = indptr[1:-1][(indptr[1:-1] > 0) & (indptr[1:-1] < indices.size)]
            ok[boundaries - 1] = True
            if not np.all(ok):
                raise InvalidInputError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("matrix values must be finite")
        for arr in (indptr, indices, data):
            arr.setflags(write=False)
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.indptr = indptr
        self.indices = indices
        self.data = data
        self._csr = sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_cols))
        self._row_norms_sq = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[tuple[int, float]]], n_cols: int) -> "SparseMatrix":
        """Build from per-row ``(column, value)`` pair sequences."""
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for row in rows:
            for j, val in row:
                indices.append(j)
                data.append(val)
            indptr.append(len(indices))
        return cls(len(indptr) - 1, n_cols, indptr, indices, data)

    @classmethod
    def from_dense(cls, array) -> "SparseMatrix":
        a = np.asarray(array, dtype=np.float64)
        if a.ndim != 2:
            raise InvalidInputError("dense input must be 2-dimensional")
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for row in a:
            nz = np.nonzero(row)[0]
            indices.extend(int(j) for j in nz)
            data.extend(float(row[j]) for j in nz)
            indptr.append(len(indices))
        return cls(a.shape[0], a.shape[1], indptr, indices, data)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        r = np.arange(n + 1, dtype=np.int64)
        return cls(n, n, r, np.arange(n, dtype=np.int64), np.ones(n))

    # -- products ----------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``D @ x``."""
        if x.shape[0] != self.n_cols:
            raise InvalidInputError("matvec dimension mismatch")
        return self._csr @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """``D.T @ y``."""
        if y.shape[0] != self.n_rows:
            raise InvalidInputError("rmatvec dimension mismatch")
        return self._csr.T @ y

    def gram(self) -> np.ndarray:
        """Dense ``D.T @ D`` (d x d)."""
        return (self._csr.T @ self._csr).toarray()

    def gram_outer(self) -> np.ndarray:
        """Dense ``D @ D.T`` (n x n)."""
        return (self._csr @ self._csr.T).toarray()

    @property
    def row_norms_sq(self) -> np.ndarray:
        if self._row_norms_sq is None:
            out = np.zeros(self.n_rows)
            counts = np.diff(self.indptr)
            np.add.at(out, np.repeat(np.arange(self.n_rows), counts), self.data**2)
            out.setflags(write=False)
            self._row_norms_sq = out
        return self._row_norms_sq

    def row_slice(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.indptr[j], self.indptr[j + 1]
        return self.indices[s:e], self.data[s:e]

    def row_dot(self, j: int, x: np.ndarray) -> float:
        cols, vals = self.row_slice(j)
        return float(vals @ x[cols])

    def add_row(self, j: int, out: np.ndarray, scale: float) -> None:
        """``out[cols] += scale * vals`` for row ``j`` (in place)."""
        cols, vals = self.row_slice(j)
        out[cols] += scale * vals


# -- regularizers -----------------------------------------------------------


@dataclass(frozen=True)
class ElasticNet:
    """``g(v) = rho1 * |v|_1 + (rho2 / 2) * |v|_2^2``."""

    rho1: float
    rho2: float

    def __post_init__(self):
        if self.rho1 < 0 or self.rho2 < 0:
            raise InvalidInputError("elastic net weights must be nonnegative")


@dataclass(frozen=True)
class L1:
    """``g(v) = rho * |v|_1``."""

    rho: float

    def __post_init__(self):
        if self.rho < 0:
            raise InvalidInputError("l1 weight must be nonnegative")


@dataclass(frozen=True)
class Ridge:
    """``g(v) = |v|_2^2 / 2``."""


Regularizer = Union[ElasticNet, L1, Ridge]


def regularizer_value(reg: Regularizer, v: np.ndarray) -> float:
    if isinstance(reg, ElasticNet):
        return float(reg.rho1 * np.abs(v).sum() + 0.5 * reg.rho2 * np.dot(v, v))
    if isinstance(reg, L1):
        return float(reg.rho * np.abs(v).sum())
    if isinstance(reg, Ridge):
        return float(0.5 * np.dot(v, v))
    raise InvalidInputError(f"unknown regularizer {reg!r}")


# -- shards and problems -----------------------------------------------------


@dataclass(frozen=True)
class WorkerShard:
    """One worker's rows: an ``n_i x d`` data matrix plus ``n_i`` targets."""

    data: SparseMatrix
    targets: np.ndarray

    def __post_init__(self):
        t = as_vector(self.targets, name="targets")
        if t.shape[0] != self.data.n_rows:
            raise InvalidInputError("targets length must equal the number of data rows")
        t.setflags(write=False)
        object.__setattr__(self, "targets", t)

    @property
    def n_samples(self) -> int:
        return self.data.n_rows


@dataclass(frozen=True)
class ConsensusProblem:
    """A consensus model-fitting instance.

    Parameters
    ----------
    dimension : int
        Number of model coefficients ``d``.
    shards : sequence of WorkerShard
        One shard per worker; all must have ``d`` columns.
    loss : str
        One of ``"squared"`` (elastic net regression), ``"logistic"``
        (sparse logistic regression), ``"hinge"`` (linear SVM).
    regularizer : ElasticNet | L1 | Ridge
        The central penalty ``g(v)``.
    svm_c : float
        Hinge-loss weight ``C`` (ignored by the other losses).
    """

    dimension: int
    shards: tuple[WorkerShard, ...]
    loss: str
    regularizer: Regularizer
    svm_c: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shards", tuple(self.shards))
        if self.dimension < 1:
            raise InvalidInputError("dimension must be at least 1")
        if len(self.shards) < 1:
            raise InvalidInputError("at least one shard is required")
        if self.loss not in LOSSES:
            raise InvalidInputError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.svm_c < 0:
            raise InvalidInputError("svm_c must be nonnegative")
        for i, shard in enumerate(self.shards):
            if shard.data.n_cols != self.dimension:
                raise InvalidInputError(
                    f"shard {i} has {shard.data.n_cols} columns, expected {self.dimension}"
                )
            if self.loss in ("logistic", "hinge"):
                labels = shard.targets
                if labels.size and not np.all(np.isin(labels, (-1.0, 1.0))):
                    raise InvalidInputError(f"shard {i}: classification labels must be in {{-1, +1}}")

    @property
    def n_workers(self) -> int:
        return len(self.shards)


def shard_loss(shard: WorkerShard, loss: str, v: np.ndarray, svm_c: float = 1.0) -> float:
    """Evaluate one worker's loss term ``f_i`` at the point ``v``."""
    margins = shard.data.matvec(v)
    if loss == "squared":
        r = margins - shard.targets
        return float(0.5 * np.dot(r, r))
    if loss == "logistic":
        return float(np.logaddexp(0.0, -shard.targets * margins).sum())
    if loss == "hinge":
        return float(svm_c * np.maximum(1.0 - shard.targets * margins, 0.0).sum())
    raise InvalidInputError(f"unknown loss {loss!r}")


def loss_gradient(shard: WorkerShard, loss: str, u: np.ndarray, svm_c: float = 1.0) -> np.ndarray:
    """Gradient of a smooth loss term (``squared`` or ``logistic``) at ``u``."""
    if loss == "squared":
        return shard.data.rmatvec(shard.data.matvec(u) - shard.targets)
    if loss == "logistic":
        from scipy.special import expit

        margins = shard.targets * shard.data.matvec(u)
        return shard.data.rmatvec(-shard.targets * expit(-margins))
    raise InvalidInputError(f"loss {loss!r} has no smooth gradient")


def evaluate_objective(problem: ConsensusProblem, v) -> float:
    """Full objective ``sum_i f_i(v) + g(v)`` at a consensus point.

    Shard terms are accumulated in node order so the result is
    deterministic for a given problem.
    """
    v = as_vector(v, dim=problem.dimension, name="v")
    total = 0.0
    for shard in problem.shards:
        total += shard_loss(shard, problem.loss, v, problem.svm_c)
    total += regularizer_value(problem.regularizer, v)
    return total


# -- iterate containers ------------------------------------------------------


@dataclass
class AdaptationSnapshot:
    """Iterates frozen at the last adaptation step ``k0``."""

    u: np.ndarray
    lam: np.ndarray
    hat_lam: np.ndarray
    k0: int


@dataclass
class WorkerState:
    """One worker's iterates: local copy ``u``, dual ``lam``, penalty ``tau``."""

    u: np.ndarray
    lam: np.ndarray
    tau: float
    snapshot: Optional[AdaptationSnapshot] = None

    def __post_init__(self):
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise InvalidInputError("tau must be positive and finite")


@dataclass
class GlobalState:
    """Central iterate ``v`` with its previous value and adaptation snapshot."""

    v: np.ndarray
    v_prev: np.ndarray
    v_snapshot: np.ndarray
    iter: int = 0


@dataclass(frozen=True)
class ResidualReport:
    """Squared residual norms plus the scale norms used by the stop rule.

    ``primal_sq`` is the squared norm of the stacked primal residual
    ``r_i = v - u_i`` and equals the sum of the per-node pieces;
    ``dual_sq`` stacks ``d_i = tau_i * (v_prev - v)``.
    """

    primal_sq: float
    dual_sq: float
    per_node: tuple[tuple[float, float], ...]
    sum_u_sq: float
    n_v_sq: float
    sum_lambda_sq: float


def local_norms(state: WorkerState) -> tuple[float, float]:
    """Squared Euclidean norms ``(|u_i|^2, |lambda_i|^2)`` of one worker."""
    return float(np.dot(state.u, state.u)), float(np.dot(state.lam, state.lam))
