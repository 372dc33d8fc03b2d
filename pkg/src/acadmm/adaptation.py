"""Penalty adaptation policies.

Five policies are provided:

* ``fixed``      -- the penalty never changes;
* ``rb``         -- residual balancing: one shared penalty is multiplied or
                    divided by a fixed factor whenever the global primal and
                    dual residual norms drift more than ``rb_mu`` apart;
* ``crb``        -- the same rule applied per node to the local residuals;
* ``aadmm``      -- spectral (Barzilai-Borwein style) curvature estimation on
                    the node-stacked iterate differences, producing one
                    shared penalty;
* ``acadmm``     -- the spectral rule applied per node in the d-dimensional
                    feature space, producing worker-specific penalties.

Every policy is clipped into the multiplicative band ``1 + c_cg / k^2``
around the current penalty, which keeps the total adaptivity summable and
preserves the convergence guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .problem import ResidualReport, WorkerState

POLICY_KINDS = ("fixed", "rb", "crb", "aadmm", "acadmm")


@dataclass(frozen=True)
class PolicyConfig:
    """Which adaptation policy runs and its constants.

    ``t_f`` is the adaptation period (the rule fires when
    ``k % t_f == 1 % t_f``), ``eps_cor`` the minimum correlation required
    to trust a curvature estimate, ``c_cg`` the convergence constant of
    the safeguard band, and ``rb_mu``/``rb_factor`` the residual-balancing
    thresholds.  ``tau0`` is the initial penalty on every node.
    """

    kind: str = "acadmm"
    t_f: int = 2
    eps_cor: float = 0.2
    c_cg: float = 1e10
    rb_mu: float = 10.0
    rb_factor: float = 2.0
    tau0: float = 1.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise InvalidInputError(f"policy kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if self.t_f < 1:
            raise InvalidInputError("t_f must be at least 1")
        if not self.eps_cor < 1:
            raise InvalidInputError("eps_cor must be below 1")
        if not self.c_cg > 0:
            raise InvalidInputError("c_cg must be positive")
        if not self.rb_mu > 1:
            raise InvalidInputError("rb_mu must exceed 1")
        if not self.rb_factor > 1:
            raise InvalidInputError("rb_factor must exceed 1")
        if not self.tau0 > 0:
            raise InvalidInputError("tau0 must be positive")

    def is_adaptation_iteration(self, k: int) -> bool:
        return k % self.t_f == 1 % self.t_f


@dataclass(frozen=True)
class AdaptationDeltas:
    """Iterate differences between the current iteration and snapshot ``k0``.

    ``du = u^k - u^k0``, ``dhl = hat_lam^k - hat_lam^k0``,
    ``dv = -v^k + v^k0`` (note the sign), ``dl = lam^k - lam^k0``.
    """

    du: np.ndarray
    dhl: np.ndarray
    dv: np.ndarray
    dl: np.ndarray


@dataclass(frozen=True)
class CurvatureEstimate:
    """A spectral stepsize estimate plus the correlation that gates it.

    ``value`` is None when the estimate is unreliable (degenerate deltas or
    a nonpositive inner product).
    """

    value: Optional[float]
    correlation: float

    @property
    def reliable(self) -> bool:
        return self.value is not None


def spectral_estimate(dx: np.ndarray, dy: np.ndarray) -> Optional[float]:
    """Hybrid steepest-descent / minimum-gradient secant estimate.

    Fits the coefficient ``c`` in ``dy ~ c * dx`` by the two classical
    least-squares estimators ``sd = <dy,dy>/<dx,dy>`` and
    ``mg = <dx,dy>/<dx,dx>``, returning ``mg`` when ``2 mg > sd`` and
    ``sd - mg/2`` otherwise.  Returns None (never raises) when the inner
    product ``<dx,dy>`` is not positive or either delta vanishes.
    """
    xy = float(np.dot(dx, dy))
    if xy <= 0.0:
        return None
    xx = float(np.dot(dx, dx))
    yy = float(np.dot(dy, dy))
    if xx == 0.0 or yy == 0.0:
        return None
    sd = yy / xy
    mg = xy / xx
    return mg if 2.0 * mg > sd else sd - mg / 2.0


def correlation(dx: np.ndarray, dy: np.ndarray) -> float:
    """Cosine similarity ``<dx,dy> / (|dx| |dy|)``; 0 when either norm is 0."""
    nx = float(np.linalg.norm(dx))
    ny = float(np.linalg.norm(dy))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.dot(dx, dy)) / (nx * ny)


def estimate_pair(dx: np.ndarray, dy: np.ndarray) -> CurvatureEstimate:
    """Correlation plus gated spectral estimate for one delta pair."""
    return CurvatureEstimate(value=spectral_estimate(dx, dy), correlation=correlation(dx, dy))


def acadmm_candidate(
    alpha: CurvatureEstimate,
    beta: CurvatureEstimate,
    tau_cur: float,
    eps_cor: float,
) -> float:
    """Safeguarded spectral penalty candidate.

    ``sqrt(alpha * beta)`` when both correlations pass ``eps_cor``, the one
    trusted estimate when only one passes, and the current penalty
    otherwise.  A passing correlation with an unusable estimate (possible
    only for ``eps_cor <= 0``) also falls back to the current penalty.
    """
    a_ok = alpha.correlation > eps_cor and alpha.reliable
    b_ok = beta.correlation > eps_cor and beta.reliable
    if a_ok and b_ok:
        return math.sqrt(alpha.value * beta.value)
    if a_ok:
        return alpha.value
    if b_ok:
        return beta.value
    return tau_cur


def safeguard_clip(tau_hat: float, tau_cur: float, k: int, c_cg: float) -> float:
    """Clip a penalty candidate into the band ``[tau/b, tau*b]``, ``b = 1 + c_cg/k^2``.

    The result is nudged by at most a couple of ulps so that the floating
    point ratios ``new/cur`` and ``cur/new`` never exceed ``b``; the
    per-step adaptivity bound can then be asserted exactly.
    """
    if not (tau_cur > 0 and np.isfinite(tau_cur)):
        raise InvalidInputError("current tau must be positive and finite")
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    band = 1.0 + c_cg / (k * k)
    if not np.isfinite(tau_hat) or tau_hat <= 0.0:
        return tau_cur
    t = min(max(tau_hat, tau_cur / band), tau_cur * band)
    while t > tau_cur and t / tau_cur > band:
        t = math.nextafter(t, 0.0)
    while t < tau_cur and tau_cur / t > band:
        t = math.nextafter(t, math.inf)
    return t


def acadmm_update(worker: WorkerState, deltas: AdaptationDeltas, k: int, cfg: PolicyConfig) -> float:
    """New worker-local penalty from that worker's deltas plus the shared ``dv``."""
    alpha = estimate_pair(deltas.du, deltas.dhl)
    beta = estimate_pair(deltas.dv, deltas.dl)
    tau_hat = acadmm_candidate(alpha, beta, worker.tau, cfg.eps_cor)
    return safeguard_clip(tau_hat, worker.tau, k, cfg.c_cg)


def rb_update(report: ResidualReport, tau_cur: float, k: int, cfg: PolicyConfig) -> float:
    """Residual balancing on the global residual norms, then the safeguard clip."""
    return _balance(math.sqrt(report.primal_sq), math.sqrt(report.dual_sq), tau_cur, k, cfg)


def crb_update(r_sq: float, d_sq: float, tau_cur: float, k: int, cfg: PolicyConfig) -> float:
    """Residual balancing on one node's local residual norms."""
    return _balance(math.sqrt(r_sq), math.sqrt(d_sq), tau_cur, k, cfg)


def _balance(r: float, d: float, tau_cur: float, k: int, cfg: PolicyConfig) -> float:
    if r > cfg.rb_mu * d:
        tau_hat = tau_cur * cfg.rb_factor
    elif d > cfg.rb_mu * r:
        tau_hat = tau_cur / cfg.rb_factor
    else:
        tau_hat = tau_cur
    return safeguard_clip(tau_hat, tau_cur, k, cfg.c_cg)


def aadmm_update(
    deltas: Sequence[AdaptationDeltas],
    tau_cur: float,
    k: int,
    cfg: PolicyConfig,
) -> float:
    """One shared penalty from the node-stacked deltas.

    The per-node ``du``/``dhl``/``dl`` vectors are concatenated in node
    order; the shared ``dv`` is duplicated once per node so the estimation
    runs in the full stacked space.  With a single node this coincides
    with the worker-local update.
    """
    if not deltas:
        raise InvalidInputError("aadmm_update needs at least one node")
    du = np.concatenate([d.du for d in deltas])
    dhl = np.concatenate([d.dhl for d in deltas])
    dl = np.concatenate([d.dl for d in deltas])
    dv = np.concatenate([deltas[0].dv for _ in deltas])
    alpha = estimate_pair(du, dhl)
    beta = estimate_pair(dv, dl)
    tau_hat = acadmm_candidate(alpha, beta, tau_cur, cfg.eps_cor)
    return safeguard_clip(tau_hat, tau_cur, k, cfg.c_cg)
