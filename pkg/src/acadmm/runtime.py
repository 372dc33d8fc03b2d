"""Coordinator/worker runtime with synchronous per-iteration barriers.

Workers and the coordinator communicate exclusively through immutable
messages.  A round trip for iteration ``k`` looks like::

    coordinator --- BroadcastMsg(k, v^k, v^{k-1}) ---> workers
    workers: dual step k, local norms, local adaptation, u-step k+1
    workers --- WorkerReportMsg (u^{k+1} info + iteration-k norms) ---> coordinator
    coordinator: v^{k+1}, iteration-k record, stop test

Because the iteration-k norms ride on the round k+1 report, the stop
decision is embedded in the *next* broadcast; one speculative u/v step is
computed after the stopping iteration and discarded.  Policies whose
penalty is computed centrally (``rb``, ``aadmm``) insert one extra
gather/share message pair at adaptation iterations, since the new shared
penalty must reach the workers before their next u-step.

All coordinator reductions run in ascending node-id order regardless of
arrival order, so runs are bit-identical for any worker-thread count.  An
optional pairwise-tree reduction is faster for very wide fan-in but gives
up that guarantee.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .adaptation import AdaptationDeltas, PolicyConfig, aadmm_update, rb_update
from .engine import (
    AdmmEngine,
    EngineConfig,
    IterationRecord,
    LocalRound,
    RunResult,
    WorkerContext,
    assemble_iteration,
    check_stop,
)
from .errors import ProtocolError, SubproblemError
from .problem import ConsensusProblem, ResidualReport
from .subproblems import prox_regularizer


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class BroadcastMsg:
    """Coordinator to all workers: the central iterates and the stop flag."""

    k: int
    v: np.ndarray
    v_prev: np.ndarray
    stop: bool
    reason: Optional[str] = None


@dataclass(frozen=True, eq=False)
class WorkerReportMsg:
    """Worker to coordinator: u-step output plus the previous iteration's norms.

    ``weighted`` is ``tau_i * u_i - lam_i`` and ``tau`` the penalty used for
    this u-step; the scalar norms, progress and loss terms belong to the
    iteration that the last broadcast completed.
    """

    node: int
    weighted: np.ndarray
    tau: float
    u_sq: float
    lambda_sq: float
    r_sq: float
    d_sq: float
    h_term: float
    f_term: float


@dataclass(frozen=True, eq=False)
class AdaptGatherMsg:
    """Worker to coordinator at rb/aadmm adaptation iterations."""

    node: int
    k: int
    r_sq: float
    d_sq: float
    du: Optional[np.ndarray] = None
    dhl: Optional[np.ndarray] = None
    dl: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class AdaptShareMsg:
    """Coordinator to all workers: the new shared penalty."""

    k: int
    tau: float


@dataclass(frozen=True, eq=False)
class ErrorMsg:
    node: int
    k: int
    message: str


@dataclass(frozen=True)
class RunTopology:
    """How worker contexts are scheduled and reduced."""

    mode: str = "sequential"  # "sequential" or "parallel-threads"
    threads: Optional[int] = None
    deterministic: bool = True

    def __post_init__(self):
        if self.mode not in ("sequential", "parallel-threads"):
            raise ProtocolError(f"unknown execution mode {self.mode!r}")
        if self.threads is not None and self.threads < 1:
            raise ProtocolError("threads must be at least 1")


def deterministic_reduce(values: Union[Mapping[int, object], Sequence[tuple[int, object]]]):
    """Sum values keyed by node id in strictly ascending id order.

    Requires the complete key set ``0..N-1``; the result is then
    independent of arrival order, bit for bit.
    """
    items = dict(values)
    n = len(items)
    if sorted(items) != list(range(n)):
        raise ProtocolError(f"expected node ids 0..{n - 1}, got {sorted(items)}")
    total = None
    for node in range(n):
        total = items[node] if total is None else total + items[node]
    return total


def pairwise_reduce(values: Union[Mapping[int, object], Sequence[tuple[int, object]]]):
    """Tree-shaped sum over node ids; faster fan-in, not bit-stable."""
    items = dict(values)
    n = len(items)
    if sorted(items) != list(range(n)):
        raise ProtocolError(f"expected node ids 0..{n - 1}, got {sorted(items)}")
    level = [items[node] for node in range(n)]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(level[i] + level[i + 1])
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


class WorkerNode:
    """Message-driven wrapper around a :class:`WorkerContext`."""

    def __init__(self, ctx: WorkerContext):
        self.ctx = ctx
        self.node = ctx.node
        self.done = False
        self._last_round: Optional[LocalRound] = None
        self._pending_v: Optional[np.ndarray] = None

    def on_message(self, msg) -> list:
        if isinstance(msg, BroadcastMsg):
            return self._on_broadcast(msg)
        if isinstance(msg, AdaptShareMsg):
            self.ctx.apply_shared_tau(msg.tau)
            return [self._u_report(self._pending_v, msg.k + 1)]
        raise ProtocolError(f"worker {self.node}: unexpected message {type(msg).__name__}")

    def _on_broadcast(self, b: BroadcastMsg) -> list:
        if b.stop:
            self.done = True
            return []
        if b.k >= 1:
            lr = self.ctx.round_local(b.k, b.v, b.v_prev)
            self._last_round = lr
            if lr.gather is not None:
                self._pending_v = b.v
                payload = lr.gather
                if payload[0] == "rb":
                    return [AdaptGatherMsg(node=self.node, k=b.k, r_sq=lr.r_sq, d_sq=lr.d_sq)]
                deltas: AdaptationDeltas = payload[1]
                return [AdaptGatherMsg(node=self.node, k=b.k, r_sq=lr.r_sq, d_sq=lr.d_sq,
                                       du=_frozen(deltas.du), dhl=_frozen(deltas.dhl),
                                       dl=_frozen(deltas.dl))]
        return [self._u_report(b.v, b.k + 1)]

    def _u_report(self, v: np.ndarray, k: int) -> WorkerReportMsg:
        self.ctx.solve_u(v, k)
        lr = self._last_round
        if lr is None:  # round 0: all iterates are zero, norms are zero
            lr = LocalRound(node=self.node, tau=self.ctx.state.tau, r_sq=0.0, d_sq=0.0,
                            u_sq=0.0, lam_sq=0.0, h_term=0.0, f_term=0.0)
        return WorkerReportMsg(
            node=self.node,
            weighted=_frozen(self.ctx.weighted_vector()),
            tau=self.ctx.state.tau,
            u_sq=lr.u_sq,
            lambda_sq=lr.lam_sq,
            r_sq=lr.r_sq,
            d_sq=lr.d_sq,
            h_term=lr.h_term,
            f_term=lr.f_term,
        )


class Coordinator:
    """Central v-step, record assembly, stop decision, shared-tau policies."""

    def __init__(self, problem: ConsensusProblem, cfg: EngineConfig,
                 deterministic: bool = True):
        self.problem = problem
        self.cfg = cfg
        self.n = problem.n_workers
        self._reduce = deterministic_reduce if deterministic else pairwise_reduce
        d = problem.dimension
        self.v = np.zeros(d)
        self.v_prev = np.zeros(d)
        self.v_snap = np.zeros(d)
        self.k = 0
        self.prev_taus: Optional[list[float]] = None
        self.records: list[IterationRecord] = []
        self.reason = "maxiter"
        self.stopped = False
        self._round_start = time.perf_counter()

    def initial_broadcast(self) -> BroadcastMsg:
        self._round_start = time.perf_counter()
        return BroadcastMsg(k=0, v=_frozen(self.v), v_prev=_frozen(self.v_prev), stop=False)

    def expects_gather(self, k: int) -> bool:
        return (
            self.cfg.policy.kind in ("rb", "aadmm")
            and k >= 1
            and self.cfg.policy.is_adaptation_iteration(k)
        )

    def on_gathers(self, gathers: Sequence[AdaptGatherMsg]) -> AdaptShareMsg:
        self._validate_ids([g.node for g in gathers])
        by_node = {g.node: g for g in gathers}
        k = by_node[0].k
        tau_cur = self.prev_taus[0] if self.prev_taus else self.cfg.policy.tau0
        if self.cfg.policy.kind == "rb":
            report = ResidualReport(
                primal_sq=self._reduce({n: by_node[n].r_sq for n in range(self.n)}),
                dual_sq=self._reduce({n: by_node[n].d_sq for n in range(self.n)}),
                per_node=tuple((by_node[n].r_sq, by_node[n].d_sq) for n in range(self.n)),
                sum_u_sq=0.0,  # scale norms are not gathered; the rule reads residuals only
                n_v_sq=0.0,
                sum_lambda_sq=0.0,
            )
            tau = rb_update(report, tau_cur, k, self.cfg.policy)
        else:
            dv = self.v_snap - self.v
            deltas = [
                AdaptationDeltas(du=by_node[n].du, dhl=by_node[n].dhl, dv=dv, dl=by_node[n].dl)
                for n in range(self.n)
            ]
            tau = aadmm_update(deltas, tau_cur, k, self.cfg.policy)
            self.v_snap = self.v
        return AdaptShareMsg(k=k, tau=tau)

    def on_reports(self, reports: Sequence[WorkerReportMsg]) -> BroadcastMsg:
        """Fold one round of reports; returns the next broadcast."""
        self._validate_ids([r.node for r in reports])
        by_node = {r.node: r for r in reports}
        sigma = self._reduce({n: by_node[n].tau for n in range(self.n)})
        acc = self._reduce({n: by_node[n].weighted for n in range(self.n)})
        v_new = prox_regularizer(acc / sigma, sigma, self.problem.regularizer)

        stop = False
        if self.k >= 1:
            # the reports carry the norms of generation self.k
            rounds = [
                LocalRound(node=n, tau=self.prev_taus[n], r_sq=by_node[n].r_sq,
                           d_sq=by_node[n].d_sq, u_sq=by_node[n].u_sq,
                           lam_sq=by_node[n].lambda_sq, h_term=by_node[n].h_term,
                           f_term=by_node[n].f_term)
                for n in range(self.n)
            ]
            wall_ms = (time.perf_counter() - self._round_start) * 1e3
            report, record = assemble_iteration(self.k, rounds, self.v, self.v_prev,
                                                self.problem.regularizer, wall_ms)
            self.records.append(record)
            if check_stop(report, self.cfg.tol):
                stop = True
                self.reason = "converged"
            elif self.k >= self.cfg.maxiter:
                stop = True
                self.reason = "maxiter"
        self._round_start = time.perf_counter()
        if stop:
            self.stopped = True
            return BroadcastMsg(k=self.k, v=_frozen(self.v), v_prev=_frozen(self.v_prev),
                                stop=True, reason=self.reason)
        self.v_prev = self.v
        self.v = v_new
        self.k += 1
        self.prev_taus = [by_node[n].tau for n in range(self.n)]
        return BroadcastMsg(k=self.k, v=_frozen(self.v), v_prev=_frozen(self.v_prev), stop=False)

    def _validate_ids(self, ids: Sequence[int]) -> None:
        if sorted(ids) != list(range(self.n)):
            raise ProtocolError(f"expected one message from each of nodes 0..{self.n - 1}, "
                                f"got {sorted(ids)}")

    def result(self) -> RunResult:
        return RunResult(v=self.v, records=self.records, reason=self.reason)


# -- drivers -------------------------------------------------------------------


def run_distributed(problem: ConsensusProblem, cfg: Optional[EngineConfig] = None,
                    topology: Optional[RunTopology] = None) -> RunResult:
    """Execute the consensus iteration through the message protocol."""
    cfg = cfg or EngineConfig()
    topology = topology or RunTopology()
    nodes = [WorkerNode(WorkerContext(problem, i, cfg)) for i in range(problem.n_workers)]
    coord = Coordinator(problem, cfg, deterministic=topology.deterministic)
    if topology.mode == "sequential":
        result = _drive_sequential(nodes, coord)
    else:
        result = _drive_threads(nodes, coord, topology.threads or problem.n_workers)
    result.inner_warnings = sum(node.ctx.warnings for node in nodes)
    return result


def _drive_sequential(nodes: list[WorkerNode], coord: Coordinator) -> RunResult:
    b = coord.initial_broadcast()
    while True:
        outgoing = []
        for node in nodes:
            outgoing.extend(node.on_message(b))
        if b.stop:
            return coord.result()
        if coord.expects_gather(b.k):
            share = coord.on_gathers(outgoing)
            outgoing = []
            for node in nodes:
                outgoing.extend(node.on_message(share))
        b = coord.on_reports(outgoing)


def _drive_threads(nodes: list[WorkerNode], coord: Coordinator, threads: int) -> RunResult:
    n = len(nodes)
    threads = min(threads, n)
    inboxes = [queue.SimpleQueue() for _ in range(n)]
    to_coord: queue.SimpleQueue = queue.SimpleQueue()
    groups = np.array_split(np.arange(n), threads)

    def worker_loop(group: np.ndarray) -> None:
        live = [nodes[i] for i in group]
        while live:
            for node in list(live):
                msg = inboxes[node.node].get()
                try:
                    outs = node.on_message(msg)
                except Exception as exc:  # surfaced as a run abort
                    to_coord.put(ErrorMsg(node=node.node, k=getattr(msg, "k", -1),
                                          message=str(exc)))
                    node.done = True
                    outs = []
                for out in outs:
                    to_coord.put(out)
                if node.done:
                    live.remove(node)

    pool = [threading.Thread(target=worker_loop, args=(g,), daemon=True) for g in groups]
    for t in pool:
        t.start()

    def broadcast(msg) -> None:
        for box in inboxes:
            box.put(msg)

    def collect(expected_type) -> list:
        got = []
        for _ in range(n):
            msg = to_coord.get()
            if isinstance(msg, ErrorMsg):
                broadcast(BroadcastMsg(k=coord.k, v=_frozen(coord.v),
                                       v_prev=_frozen(coord.v_prev), stop=True, reason="error"))
                for t in pool:
                    t.join()
                raise SubproblemError(msg.node, msg.k, msg.message)
            if not isinstance(msg, expected_type):
                raise ProtocolError(f"expected {expected_type.__name__}, got {type(msg).__name__}")
            got.append(msg)
        return got

    try:
        b = coord.initial_broadcast()
        while True:
            broadcast(b)
            if b.stop:
                break
            if coord.expects_gather(b.k):
                share = coord.on_gathers(collect(AdaptGatherMsg))
                broadcast(share)
            b = coord.on_reports(collect(WorkerReportMsg))
    finally:
        for t in pool:
            t.join(timeout=30.0)
    return coord.result()


def worker_round(node: WorkerNode, broadcast: BroadcastMsg) -> list:
    """Process one broadcast on a worker; returns its outgoing messages."""
    return node.on_message(broadcast)


def coordinator_round(coord: Coordinator, reports: Sequence[WorkerReportMsg]) -> BroadcastMsg:
    """Fold one complete round of worker reports on the coordinator."""
    return coord.on_reports(reports)
