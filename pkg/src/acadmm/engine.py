"""Consensus ADMM engine.

One iteration ``k`` performs, in order: the worker u-steps with the
penalties ``tau^k``, the central v-step, the dual ascent step, residual
and progress bookkeeping, the stop test, and finally (every ``t_f``
iterations) the penalty adaptation that produces ``tau^{k+1}``.

The per-worker arithmetic lives in :class:`WorkerContext`, which is shared
verbatim with the message-passing runtime so a sequential engine run and a
distributed run produce bit-identical iteration records.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .adaptation import (
    AdaptationDeltas,
    CurvatureEstimate,
    PolicyConfig,
    aadmm_update,
    acadmm_update,
    crb_update,
    estimate_pair,
    rb_update,
)
from .errors import InvalidInputError, SubproblemError
from .problem import (
    AdaptationSnapshot,
    ConsensusProblem,
    Regularizer,
    ResidualReport,
    WorkerState,
    as_vector,
    local_norms,
    regularizer_value,
    shard_loss,
)
from .subproblems import (
    FactorizationCache,
    InnerSolverConfig,
    SolveInfo,
    prox_regularizer,
    solve_u_enet,
    solve_u_logistic,
    solve_u_svm,
)


@dataclass
class EngineConfig:
    """Run-level settings: stop tolerance, iteration cap, policy, seed."""

    tol: float = 1e-5
    maxiter: int = 1000
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed: int = 0
    inner: InnerSolverConfig = field(default_factory=InnerSolverConfig)

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if self.maxiter < 1:
            raise InvalidInputError("maxiter must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    """Everything reported about one iteration."""

    k: int
    residuals: ResidualReport
    tau_min: float
    tau_mean: float
    tau_max: float
    objective: float
    h_progress: float
    wall_ms: float


@dataclass
class RunResult:
    v: np.ndarray
    records: list[IterationRecord]
    reason: str  # "converged" or "maxiter"
    inner_warnings: int = 0

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def converged(self) -> bool:
        return self.reason == "converged"


# -- single-step operations ----------------------------------------------------


def u_step(worker: WorkerState, v: np.ndarray, problem: ConsensusProblem, node: int = 0,
           inner: Optional[InnerSolverConfig] = None,
           cache: Optional[FactorizationCache] = None) -> np.ndarray:
    """One worker's local minimization given the current central iterate."""
    u, _ = _solve_worker(problem, node, worker, v, inner or InnerSolverConfig(), cache,
                         warm=worker.u, alpha0=None, perm=None)
    return u


def _solve_worker(problem, node, worker, v, inner, cache, warm, alpha0, perm):
    shard = problem.shards[node]
    if problem.loss == "squared":
        return solve_u_enet(shard, v, worker.lam, worker.tau, cache)
    if problem.loss == "logistic":
        return solve_u_logistic(shard, v, worker.lam, worker.tau, inner, warm=warm)
    return solve_u_svm(shard, v, worker.lam, worker.tau, problem.svm_c, inner,
                       alpha0=alpha0, perm=perm)


def v_step(u_list: Sequence[np.ndarray], lam_list: Sequence[np.ndarray],
           tau_list: Sequence[float], reg: Regularizer) -> np.ndarray:
    """Central update: ``prox_g(w, sigma)`` with ``sigma = sum tau_i`` and
    ``w = sum(tau_i u_i - lam_i) / sigma``, accumulated in node order."""
    if not len(u_list) or len(u_list) != len(lam_list) or len(u_list) != len(tau_list):
        raise InvalidInputError("u, lam, tau sequences must be nonempty and equally long")
    d = u_list[0].shape[0]
    sigma = 0.0
    acc = np.zeros(d)
    for u, lam, tau in zip(u_list, lam_list, tau_list):
        if u.shape[0] != d or lam.shape[0] != d:
            raise InvalidInputError("v_step dimension mismatch")
        if not tau > 0:
            raise InvalidInputError("all penalties must be positive")
        sigma += tau
        acc = acc + (tau * u - lam)
    return prox_regularizer(acc / sigma, sigma, reg)


def dual_step(worker: WorkerState, v_new: np.ndarray) -> np.ndarray:
    """``lam + tau * (v_new - u)`` (pure; the caller stores the result)."""
    return worker.lam + worker.tau * (v_new - worker.u)


def hat_lambda(worker: WorkerState, v_prev: np.ndarray) -> np.ndarray:
    """Intermediate multiplier ``lam + tau * (v_prev - u)``.

    Must be called with the multiplier from before this iteration's dual
    step; for a smooth loss solved exactly it equals the loss gradient at
    the current local iterate.
    """
    return worker.lam + worker.tau * (v_prev - worker.u)


def compute_residuals(states: Sequence[WorkerState], v: np.ndarray,
                      v_prev: np.ndarray) -> ResidualReport:
    """Primal/dual residual norms, per node and stacked, plus scale norms."""
    v = as_vector(v, name="v")
    v_prev = as_vector(v_prev, dim=v.shape[0], name="v_prev")
    dv = v_prev - v
    dv_sq = float(np.dot(dv, dv))
    per_node = []
    primal_sq = 0.0
    dual_sq = 0.0
    sum_u_sq = 0.0
    sum_lambda_sq = 0.0
    for st in states:
        r = v - st.u
        r_sq = float(np.dot(r, r))
        d_sq = (st.tau * st.tau) * dv_sq
        per_node.append((r_sq, d_sq))
        primal_sq += r_sq
        dual_sq += d_sq
        u_sq, lam_sq = local_norms(st)
        sum_u_sq += u_sq
        sum_lambda_sq += lam_sq
    return ResidualReport(
        primal_sq=primal_sq,
        dual_sq=dual_sq,
        per_node=tuple(per_node),
        sum_u_sq=sum_u_sq,
        n_v_sq=len(states) * float(np.dot(v, v)),
        sum_lambda_sq=sum_lambda_sq,
    )


def check_stop(report: ResidualReport, tol: float) -> bool:
    """Relative stop rule on squared norms.

    True iff ``|r|^2 <= tol * max(sum |u_i|^2, N |v|^2)`` and
    ``|d|^2 <= tol * sum |lam_i|^2``.
    """
    return (
        report.primal_sq <= tol * max(report.sum_u_sq, report.n_v_sq)
        and report.dual_sq <= tol * report.sum_lambda_sq
    )


def h_norm_progress(states: Sequence[WorkerState], v: np.ndarray, v_prev: np.ndarray,
                    lam_prev_list: Sequence[np.ndarray]) -> float:
    """Weighted progress norm ``sum_i tau_i |dv|^2 + sum_i |dlam_i|^2 / tau_i``.

    Decays to zero on convergent runs; its per-iteration value is the
    monitored certificate that the combined iterate is still moving.
    """
    dv = v - v_prev
    dv_sq = float(np.dot(dv, dv))
    total = 0.0
    for st, lam_prev in zip(states, lam_prev_list):
        dl = st.lam - lam_prev
        total += st.tau * dv_sq + float(np.dot(dl, dl)) / st.tau
    return total


# -- per-worker context ----------------------------------------------------------


@dataclass
class LocalRound:
    """One worker's per-iteration scalars, produced after the dual step."""

    node: int
    tau: float  # penalty used during this iteration
    r_sq: float
    d_sq: float
    u_sq: float
    lam_sq: float
    h_term: float
    f_term: float
    gather: Optional[tuple] = None  # payload for coordinator-side policies


@dataclass
class AdaptationEvent:
    """Diagnostic trace of one local spectral adaptation."""

    k: int
    alpha: CurvatureEstimate
    beta: CurvatureEstimate
    tau_new: float


class WorkerContext:
    """All state confined to one worker: iterates, caches, adaptation trace.

    Both the sequential engine and the message-passing runtime drive
    workers exclusively through :meth:`solve_u`, :meth:`round_local` and
    :meth:`apply_shared_tau`, which keeps the two execution paths
    arithmetically identical.
    """

    def __init__(self, problem: ConsensusProblem, node: int, cfg: EngineConfig):
        self.problem = problem
        self.node = node
        self.shard = problem.shards[node]
        self.policy = cfg.policy
        self.inner = cfg.inner
        d = problem.dimension
        zeros = np.zeros(d)
        self.state = WorkerState(
            u=zeros.copy(),
            lam=zeros.copy(),
            tau=cfg.policy.tau0,
            snapshot=AdaptationSnapshot(u=zeros.copy(), lam=zeros.copy(),
                                        hat_lam=zeros.copy(), k0=0),
        )
        self.v_snap = zeros.copy()
        self.cache = FactorizationCache()
        self.alpha: Optional[np.ndarray] = None
        if problem.loss == "hinge":
            rng = np.random.default_rng([cfg.seed, node])
            self.perm = rng.permutation(self.shard.n_samples)
        else:
            self.perm = None
        self.last_info: Optional[SolveInfo] = None
        self.last_hat: Optional[np.ndarray] = None
        self.last_adaptation: Optional[AdaptationEvent] = None
        self.warnings = 0

    @property
    def _spectral(self) -> bool:
        return self.policy.kind in ("acadmm", "aadmm")

    def solve_u(self, v: np.ndarray, k: int) -> None:
        """Local minimization for iteration ``k`` (stores ``u^k``)."""
        try:
            u, info = _solve_worker(self.problem, self.node, self.state, v, self.inner,
                                    self.cache, warm=self.state.u, alpha0=self.alpha,
                                    perm=self.perm)
        except (InvalidInputError, RuntimeError) as exc:
            raise SubproblemError(self.node, k, str(exc)) from exc
        self.state.u = u
        self.last_info = info
        if info.alpha is not None:
            self.alpha = info.alpha
        if not info.converged:
            self.warnings += 1

    def weighted_vector(self) -> np.ndarray:
        return self.state.tau * self.state.u - self.state.lam

    def round_local(self, k: int, v_new: np.ndarray, v_prev: np.ndarray) -> LocalRound:
        """Dual step, residual scalars and local adaptation for iteration ``k``."""
        st = self.state
        tau_used = st.tau
        adapt = self.policy.is_adaptation_iteration(k) and self.policy.kind != "fixed"
        hat = hat_lambda(st, v_prev) if (adapt and self._spectral) else None
        self.last_hat = hat

        lam_prev = st.lam
        st.lam = dual_step(st, v_new)

        r = v_new - st.u
        r_sq = float(np.dot(r, r))
        dv = v_prev - v_new
        dv_sq = float(np.dot(dv, dv))
        d_sq = (tau_used * tau_used) * dv_sq
        u_sq, lam_sq = local_norms(st)
        dl = st.lam - lam_prev
        h_term = tau_used * dv_sq + float(np.dot(dl, dl)) / tau_used
        f_term = shard_loss(self.shard, self.problem.loss, v_new, self.problem.svm_c)

        gather = None
        if adapt:
            if self.policy.kind == "acadmm":
                deltas = self._make_deltas(hat, v_new)
                st.tau = acadmm_update(st, deltas, k, self.policy)
                self.last_adaptation = AdaptationEvent(
                    k=k,
                    alpha=estimate_pair(deltas.du, deltas.dhl),
                    beta=estimate_pair(deltas.dv, deltas.dl),
                    tau_new=st.tau,
                )
                self._take_snapshot(hat, v_new, k)
            elif self.policy.kind == "crb":
                st.tau = crb_update(r_sq, d_sq, st.tau, k, self.policy)
            elif self.policy.kind == "rb":
                gather = ("rb", r_sq, d_sq)
            elif self.policy.kind == "aadmm":
                deltas = self._make_deltas(hat, v_new)
                gather = ("aadmm", deltas)
                self._take_snapshot(hat, v_new, k)
        return LocalRound(node=self.node, tau=tau_used, r_sq=r_sq, d_sq=d_sq,
                          u_sq=u_sq, lam_sq=lam_sq, h_term=h_term, f_term=f_term,
                          gather=gather)

    def _make_deltas(self, hat: np.ndarray, v_new: np.ndarray) -> AdaptationDeltas:
        snap = self.state.snapshot
        return AdaptationDeltas(
            du=self.state.u - snap.u,
            dhl=hat - snap.hat_lam,
            dv=self.v_snap - v_new,
            dl=self.state.lam - snap.lam,
        )

    def _take_snapshot(self, hat: np.ndarray, v_new: np.ndarray, k: int) -> None:
        self.state.snapshot = AdaptationSnapshot(u=self.state.u, lam=self.state.lam,
                                                 hat_lam=hat, k0=k)
        self.v_snap = v_new

    def apply_shared_tau(self, tau: float) -> None:
        """Install a coordinator-computed shared penalty (rb / aadmm)."""
        self.state.tau = tau


# -- iteration assembly ------------------------------------------------------------


def assemble_iteration(k: int, rounds: Sequence[LocalRound], v: np.ndarray,
                       v_prev: np.ndarray, reg: Regularizer,
                       wall_ms: float) -> tuple[ResidualReport, IterationRecord]:
    """Fold per-node round scalars (in node order) into a report and record."""
    primal_sq = 0.0
    dual_sq = 0.0
    sum_u_sq = 0.0
    sum_lambda_sq = 0.0
    h_total = 0.0
    f_total = 0.0
    tau_sum = 0.0
    per_node = []
    for lr in rounds:
        primal_sq += lr.r_sq
        dual_sq += lr.d_sq
        sum_u_sq += lr.u_sq
        sum_lambda_sq += lr.lam_sq
        h_total += lr.h_term
        f_total += lr.f_term
        tau_sum += lr.tau
        per_node.append((lr.r_sq, lr.d_sq))
    report = ResidualReport(
        primal_sq=primal_sq,
        dual_sq=dual_sq,
        per_node=tuple(per_node),
        sum_u_sq=sum_u_sq,
        n_v_sq=len(rounds) * float(np.dot(v, v)),
        sum_lambda_sq=sum_lambda_sq,
    )
    taus = [lr.tau for lr in rounds]
    record = IterationRecord(
        k=k,
        residuals=report,
        tau_min=min(taus),
        tau_mean=tau_sum / len(taus),
        tau_max=max(taus),
        objective=f_total + regularizer_value(reg, v),
        h_progress=h_total,
        wall_ms=wall_ms,
    )
    return report, record


def shared_tau_from_gathers(kind: str, rounds: Sequence[LocalRound], report: ResidualReport,
                            dv: np.ndarray, tau_cur: float, k: int,
                            cfg: PolicyConfig) -> float:
    """Coordinator-side shared penalty for the rb and aadmm policies."""
    if kind == "rb":
        return rb_update(report, tau_cur, k, cfg)
    deltas = []
    for lr in rounds:
        tag, payload = lr.gather[0], lr.gather[1]
        if tag != "aadmm":
            raise InvalidInputError("mixed gather payloads")
        deltas.append(AdaptationDeltas(du=payload.du, dhl=payload.dhl, dv=dv, dl=payload.dl))
    return aadmm_update(deltas, tau_cur, k, cfg)


# -- the engine --------------------------------------------------------------------


class AdmmEngine:
    """Sequential reference implementation of the iteration loop.

    Exposes :meth:`step` so tests and diagnostics can observe worker state
    between iterations; :func:`run` is the one-call entry point.
    """

    def __init__(self, problem: ConsensusProblem, cfg: EngineConfig):
        self.problem = problem
        self.cfg = cfg
        self.workers = [WorkerContext(problem, i, cfg) for i in range(problem.n_workers)]
        d = problem.dimension
        self.v = np.zeros(d)
        self.v_prev = np.zeros(d)
        self.v_snap = np.zeros(d)  # coordinator-side snapshot for aadmm
        self.k = 0
        self.records: list[IterationRecord] = []
        self.finished = False
        self.reason = "maxiter"

    def step(self) -> IterationRecord:
        if self.finished:
            raise RuntimeError("run already finished")
        k = self.k + 1
        t0 = time.perf_counter()
        for ctx in self.workers:
            ctx.solve_u(self.v, k)
        v_new = v_step(
            [ctx.state.u for ctx in self.workers],
            [ctx.state.lam for ctx in self.workers],
            [ctx.state.tau for ctx in self.workers],
            self.problem.regularizer,
        )
        rounds = [ctx.round_local(k, v_new, self.v) for ctx in self.workers]
        wall_ms = (time.perf_counter() - t0) * 1e3
        report, record = assemble_iteration(k, rounds, v_new, self.v,
                                            self.problem.regularizer, wall_ms)
        self.records.append(record)
        stopped = check_stop(report, self.cfg.tol)
        if stopped:
            self.finished = True
            self.reason = "converged"
        elif k >= self.cfg.maxiter:
            self.finished = True
            self.reason = "maxiter"
        elif rounds[0].gather is not None:
            # coordinator-side policies: fold the gathered payloads
            kind = rounds[0].gather[0]
            if kind == "rb":
                tau = shared_tau_from_gathers("rb", rounds, report, None,
                                              rounds[0].tau, k, self.cfg.policy)
            else:
                dv = self.v_snap - v_new
                tau = shared_tau_from_gathers("aadmm", rounds, report, dv,
                                              rounds[0].tau, k, self.cfg.policy)
                self.v_snap = v_new
            for ctx in self.workers:
                ctx.apply_shared_tau(tau)
        self.v_prev = self.v
        self.v = v_new
        self.k = k
        return record

    def run_to_end(self) -> RunResult:
        while not self.finished:
            self.step()
        return RunResult(
            v=self.v,
            records=self.records,
            reason=self.reason,
            inner_warnings=sum(ctx.warnings for ctx in self.workers),
        )


def run(problem: ConsensusProblem, cfg: Optional[EngineConfig] = None) -> RunResult:
    """Run consensus ADMM to convergence or the iteration cap."""
    return AdmmEngine(problem, cfg or EngineConfig()).run_to_end()
