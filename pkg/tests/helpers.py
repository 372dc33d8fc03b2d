"""Independent oracles used by the test suite.

These deliberately avoid the library's own closed forms: scalar
minimization is golden-section search, the central-update oracle
minimizes the full objective per coordinate, and the elastic net oracle
is a plain proximal-gradient loop.
"""

from __future__ import annotations

import math

import numpy as np

from acadmm.problem import ElasticNet, L1, Ridge


def golden_section(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Minimize a unimodal scalar function on [lo, hi] by golden-section search."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - (b - a) * invphi
    d = a + (b - a) * invphi
    fc, fd = f(c), f(d)
    for _ in range(300):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - (b - a) * invphi
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + (b - a) * invphi
            fd = f(d)
    return (a + b) / 2.0


def reg_scalar_value(reg, x: float) -> float:
    if isinstance(reg, ElasticNet):
        return reg.rho1 * abs(x) + 0.5 * reg.rho2 * x * x
    if isinstance(reg, L1):
        return reg.rho * abs(x)
    if isinstance(reg, Ridge):
        return 0.5 * x * x
    raise TypeError(reg)


def prox_oracle(w: float, sigma: float, reg) -> float:
    """Scalar prox by direct minimization of g(x) + (sigma/2)(x - w)^2."""
    lo = min(0.0, w) - 1.0
    hi = max(0.0, w) + 1.0
    return golden_section(lambda x: reg_scalar_value(reg, x) + 0.5 * sigma * (x - w) ** 2, lo, hi)


def v_step_oracle(u_list, lam_list, tau_list, reg) -> np.ndarray:
    """Minimize g(v) + sum_i (tau_i/2) |v - u_i + lam_i/tau_i|^2 per coordinate."""
    d = u_list[0].shape[0]
    out = np.empty(d)
    for j in range(d):
        centers = [u[j] - lam[j] / tau for u, lam, tau in zip(u_list, lam_list, tau_list)]
        lo = min(centers + [0.0]) - 1.0
        hi = max(centers + [0.0]) + 1.0

        def phi(x, j=j):
            val = reg_scalar_value(reg, x)
            for u, lam, tau in zip(u_list, lam_list, tau_list):
                diff = x - u[j] + lam[j] / tau
                val += 0.5 * tau * diff * diff
            return val

        out[j] = golden_section(phi, lo, hi)
    return out


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def prox_grad_enet(X: np.ndarray, y: np.ndarray, rho1: float, rho2: float,
                   tol: float = 1e-12, max_iter: int = 2_000_000) -> np.ndarray:
    """Proximal gradient on 0.5|Xv - y|^2 + rho1 |v|_1 + (rho2/2)|v|^2.

    Runs until the gradient-mapping norm drops below ``tol``.
    """
    L = float(np.linalg.eigvalsh(X.T @ X).max()) + rho2 + 1e-12
    v = np.zeros(X.shape[1])
    for _ in range(max_iter):
        grad = X.T @ (X @ v - y) + rho2 * v
        v_new = soft_threshold(v - grad / L, rho1 / L)
        if L * float(np.linalg.norm(v_new - v)) <= tol:
            return v_new
        v = v_new
    raise AssertionError("proximal gradient oracle did not reach its tolerance")


def enet_objective(X: np.ndarray, y: np.ndarray, rho1: float, rho2: float, v: np.ndarray) -> float:
    r = X @ v - y
    return 0.5 * float(r @ r) + rho1 * float(np.abs(v).sum()) + 0.5 * rho2 * float(v @ v)


def logistic_scalar_root(tol: float = 1e-12) -> float:
    """Root of u (1 + e^u) = 1 by bisection; the one-sample subproblem optimum."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid * (1.0 + math.exp(mid)) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def random_enet_problem(seed: int, n: int, d: int, workers: int, rho1: float, rho2: float,
                        noise: float = 0.1):
    from acadmm.datagen import build_problem
    from acadmm.problem import ElasticNet as EN

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = np.zeros(d)
    w[rng.choice(d, size=max(1, d // 5), replace=False)] = rng.standard_normal(max(1, d // 5))
    y = X @ w + noise * rng.standard_normal(n)
    return build_problem(X, y, workers, "contiguous-blocks", "squared", EN(rho1, rho2)), X, y
