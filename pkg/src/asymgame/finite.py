"""Finite-horizon equilibrium by iterating forward and backward passes to a fixed point."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dp import BackwardResult, QBlocks, backward_pass, q_matrix, solve_equilibrium_gains, stationarity_residual
from .filtering import (
    DEFAULT_COND_CAP,
    FilterParams,
    ForwardResult,
    default_gamma,
    forward_pass,
    gain_residual,
    sign_flags,
)
from .model import GameModel, augment


@dataclass
class FiniteDiagnostics:
    iterations: int
    residual: float
    converged: bool
    history: list[float] = field(default_factory=list)
    gamma_flags: list[tuple[bool, bool]] = field(default_factory=list)
    refresh_gamma: bool = False
    damping: float = 1.0
    rejected_gamma_refreshes: int = 0


@dataclass(frozen=True)
class FiniteEquilibrium:
    model: GameModel
    K1: np.ndarray
    K2: np.ndarray
    Gamma: np.ndarray
    forward: ForwardResult
    backward: BackwardResult
    diagnostics: FiniteDiagnostics

    @property
    def filters(self) -> FilterParams:
        return self.forward.filters

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


def extract_gamma(P: np.ndarray) -> tuple[np.ndarray, list[tuple[bool, bool]]]:
    """Lower-right 2n x 2n blocks of a stack of cost matrices, with sign-condition flags."""
    P = np.asarray(P)
    single = P.ndim == 2
    if single:
        P = P[None]
    n = P.shape[-1] // 3
    G = np.ascontiguousarray(P[:, n:, n:])
    flags = [sign_flags(g) for g in G]
    return (G[0], flags) if single else (G, flags)


def _residual(K1, K2, F: FilterParams, K1p, K2p, Fp: FilterParams | None) -> float:
    if Fp is None:
        return math.inf
    dk = np.sqrt(np.sum((K1 - K1p) ** 2) + np.sum((K2 - K2p) ** 2))
    return float(dk + np.linalg.norm(F.stacked() - Fp.stacked()))


def solve_finite(
    model: GameModel,
    K_init: tuple[np.ndarray, np.ndarray] | None = None,
    Gamma_init: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 10000,
    damping: float = 1.0,
    refresh_gamma: bool = False,
    cond_cap: float = DEFAULT_COND_CAP,
    jitter: bool = False,
) -> FiniteEquilibrium:
    """Alternate forward and backward passes until gains and filters stop moving.

    The loop residual is ||K - K_prev|| + ||F - F_prev|| (Frobenius over all
    stages) and is +inf on the first iteration. Gamma stays at ``Gamma_init``
    (default blockdiag(I, -I)) unless ``refresh_gamma`` is set, in which case
    it is re-extracted from P after every backward pass; stages whose
    extracted blocks fail the sign conditions (Gamma11 > 0, Gamma22 < 0) keep
    their previous weights and are counted as rejected. With ``damping``
    below 1 the gains are relaxed as K <- (1 - a) K_prev + a K.

    If the tolerance is not met within ``max_iter`` iterations the lowest
    residual iterate is returned with ``converged = False``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    T, n = model.horizon, model.n
    if K_init is None:
        K1 = np.zeros((T, model.m1, n))
        K2 = np.zeros((T, model.m2, n))
    else:
        K1 = np.array(K_init[0], dtype=np.float64).reshape(T, model.m1, n)
        K2 = np.array(K_init[1], dtype=np.float64).reshape(T, model.m2, n)
    if Gamma_init is None:
        Gamma_init = default_gamma(n)
    Gam = np.asarray(Gamma_init, dtype=np.float64)
    if Gam.ndim == 2:
        Gam = np.broadcast_to(Gam, (T + 1, 2 * n, 2 * n))
    Gam = np.ascontiguousarray(Gam)

    history: list[float] = []
    best = None
    F_prev = None
    flags: list[tuple[bool, bool]] = []
    rejected = 0
    it = 0
    for it in range(1, max_iter + 1):
        fwd = forward_pass(model, K1, K2, Gam, cond_cap, jitter)
        bwd = backward_pass(model, fwd.filters, cond_cap)
        K1n, K2n = bwd.K1, bwd.K2
        if damping < 1.0:
            K1n = (1.0 - damping) * K1 + damping * K1n
            K2n = (1.0 - damping) * K2 + damping * K2n
        res = _residual(K1n, K2n, fwd.filters, K1, K2, F_prev)
        history.append(res)
        gamma_used = Gam
        K1, K2, F_prev = K1n, K2n, fwd.filters
        if refresh_gamma:
            G_new, flags = extract_gamma(bwd.P)
            bad = np.array([a or b for a, b in flags])
            rejected += int(bad.sum())
            Gam = np.ascontiguousarray(np.where(bad[:, None, None], Gam, G_new))
        if best is None or res < best[0]:
            best = (res, it, K1, K2, gamma_used, fwd, bwd)
        if res <= tol:
            break

    res, best_it, K1, K2, gamma_used, fwd, bwd = best
    if not flags:
        flags = [sign_flags(g) for g in gamma_used]
    diag = FiniteDiagnostics(
        iterations=it,
        residual=res,
        converged=res <= tol,
        history=history,
        gamma_flags=flags,
        refresh_gamma=refresh_gamma,
        damping=damping,
        rejected_gamma_refreshes=rejected,
    )
    return FiniteEquilibrium(model, K1, K2, gamma_used, fwd, bwd, diag)


def finite_value(eq: FiniteEquilibrium, x0_mean=None, X0=None, X_cov=None) -> float:
    """Expected total cost E[X_0' P_0 X_0] + r_0 with X_0 = (x_0, x_0 - xbar_0, x_0 - xbar_0).

    Both players start from the common prior mean, so the errors share the
    deviation of x_0 from its mean and Cov(X_0) is X0 tiled over the 3 x 3
    blocks. ``X_cov`` overrides that with an arbitrary 3n x 3n covariance of
    (x_0, e^1_0, e^2_0), for example a draw from a stationary distribution.
    """
    model = eq.model
    xbar = model.x0_mean if x0_mean is None else x0_mean
    if X_cov is not None:
        return value_from(eq.backward.P[0], eq.backward.r[0], xbar, X_cov=X_cov)
    X0 = model.x0_cov if X0 is None else X0
    return value_from(eq.backward.P[0], eq.backward.r[0], xbar, X0)


def value_from(P0, r0: float, x0_mean, X0=None, X_cov=None) -> float:
    P0 = np.asarray(P0, dtype=np.float64)
    xbar = np.asarray(x0_mean, dtype=np.float64)
    n = xbar.shape[0]
    mean = np.concatenate((xbar, np.zeros(2 * n)))
    if X_cov is None:
        X_cov = np.kron(np.ones((3, 3)), np.asarray(X0, dtype=np.float64))
    return float(mean @ P0 @ mean + np.trace(P0 @ np.asarray(X_cov, dtype=np.float64)) + r0)


def stage_residuals(eq: FiniteEquilibrium, cond_cap: float = DEFAULT_COND_CAP) -> tuple[float, float]:
    """Worst relative residuals of the filter-gain and feedback-gain conditions over all stages."""
    model = eq.model
    worst_L = 0.0
    worst_K = 0.0
    F = eq.filters
    for t in range(1, model.horizon):
        worst_L = max(worst_L, gain_residual(
            F.L1[t], F.L2[t], eq.forward.prior[t], eq.Gamma[t],
            model.C1[t], model.C2[t], model.V1[t], model.V2[t],
        ))
    for t in range(model.horizon):
        st = model.stage(t)
        aug = augment(st, F.stage(t))
        q: QBlocks = q_matrix(eq.backward.P[t + 1], aug, st.R, st.S)
        g = solve_equilibrium_gains(q, model.n, cond_cap)
        worst_K = max(worst_K, stationarity_residual(q, g.Kbar1, g.Kbar2))
    return worst_L, worst_K
