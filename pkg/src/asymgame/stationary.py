"""Infinite-horizon average-cost equilibrium by forward-backward value iteration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._status import raise_for_status
from .dp import QBlocks, q_matrix, solve_equilibrium_gains, stationarity_residual
from .errors import UnstableClosedLoop
from .filtering import DEFAULT_COND_CAP, JITTER, FilterStage, default_gamma, gain_residual, one_step_params, sign_flags
from .model import AugmentedStepMatrices, StationaryModel, augment

LYAPUNOV_DIRECT_MAX = 60


@dataclass
class StationaryDiagnostics:
    iterations: int
    residual: float
    converged: bool
    spectral_radius: float
    stable: bool = True
    history: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    gamma_flags: tuple[bool, bool] = (False, False)
    rejected_gamma_refreshes: int = 0
    refresh_gamma: bool = False
    init: str = "default"


@dataclass(frozen=True)
class StationarySolution:
    model: StationaryModel
    Sigma: np.ndarray
    P: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    filters: FilterStage
    Gamma: np.ndarray
    J: float
    diagnostics: StationaryDiagnostics

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged


def _c(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _model_args(model: StationaryModel, jitter: bool):
    V1, V2 = model.V1, model.V2
    if jitter:
        V1 = V1 + JITTER * np.eye(V1.shape[0])
        V2 = V2 + JITTER * np.eye(V2.shape[0])
    return (
        _c(model.A), _c(model.B1), _c(model.B2), _c(model.W), _c(model.C1), _c(model.C2),
        _c(V1), _c(V2), _c(model.Q), _c(model.R), _c(model.S),
    )


def forward_operator(model: StationaryModel, Sigma, K1, K2, Gamma, cond_cap: float = DEFAULT_COND_CAP):
    """Solve the equilibrium filter gains at Sigma and apply the covariance map once.

    Returns (Sigma', L1, L2) with
    Sigma' = Abar (J Sigma J' + L V L') Abar' + blockdiag(W, W),
    where J = blockdiag(I - L1 C1, I - L2 C2).
    """
    m = model
    Sn, L1, L2, status, value = _kernels.stationary_forward(
        m.A, m.B1, m.B2, m.W, m.C1, m.C2, m.V1, m.V2, _c(Sigma), _c(K1), _c(K2), _c(Gamma), cond_cap
    )
    raise_for_status(status, value)
    return Sn, L1, L2


def backward_operator(model: StationaryModel, P, filters: FilterStage, cond_cap: float = DEFAULT_COND_CAP):
    """One Bellman update of P under fixed filters; returns (P', K1, K2)."""
    m = model
    Pn, K1, K2, status, value = _kernels.stationary_backward(
        m.A, m.B1, m.B2, m.C1, m.C2, m.Q, m.R, m.S, _c(P),
        _c(filters.A1), _c(filters.A2), _c(filters.Lbar1), _c(filters.Lbar2), cond_cap,
    )
    raise_for_status(status, value)
    return Pn, K1, K2


def average_cost(P, filters: FilterStage, model: StationaryModel) -> float:
    """J = tr(P G W G') over the augmented noise (w, v1, v2)."""
    aug = augment(model, filters)
    return float(np.trace(np.asarray(P) @ aug.G_aug @ aug.W_aug @ aug.G_aug.T))


def closed_loop(model: StationaryModel, K1, K2, filters: FilterStage) -> tuple[np.ndarray, np.ndarray, AugmentedStepMatrices]:
    """Closed-loop augmented transition matrix and stage-cost matrix over X = (x, e1, e2)."""
    aug = augment(model, filters)
    KK1, KK2 = _kernels.closed_loop_embed(_c(K1), _c(K2))
    Acl = aug.A_aug + aug.B1_aug @ KK1 + aug.B2_aug @ KK2
    Lam = aug.Q_aug + KK1.T @ model.R @ KK1 + KK2.T @ model.S @ KK2
    return Acl, Lam, aug


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def stationary_state_cov(model: StationaryModel, K1, K2, filters: FilterStage) -> np.ndarray:
    """Stationary covariance of X = (x, e1, e2) under the closed loop."""
    Acl, _, aug = closed_loop(model, K1, K2, filters)
    rho = spectral_radius(Acl)
    if not rho < 1.0:
        raise UnstableClosedLoop(f"closed-loop spectral radius {rho:.6g} >= 1")
    Wcl = aug.G_aug @ aug.W_aug @ aug.G_aug.T
    if Acl.shape[0] <= LYAPUNOV_DIRECT_MAX:
        return _kernels.lyapunov_direct(_c(Acl), _c(Wcl))
    return _kernels.lyapunov_iterative(_c(Acl), _c(Wcl), 1e-12, 1_000_000)


def lyapunov_cost(model: StationaryModel, K1, K2, filters: FilterStage) -> float:
    """Average cost tr(Lambda Sigma_X) from the closed-loop Lyapunov equation.

    Independent of the value recursion: it only uses the gains and filters.
    """
    _, Lam, _ = closed_loop(model, K1, K2, filters)
    return float(np.trace(Lam @ stationary_state_cov(model, K1, K2, filters)))


def value_iterate(
    model: StationaryModel,
    init: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    refresh_gamma: bool = False,
    cond_cap: float = DEFAULT_COND_CAP,
    jitter: bool = False,
) -> StationarySolution:
    """Forward-backward value iteration for the stationary equilibrium.

    Each pass applies the forward operator, refreshes the filter parameters
    at the new covariance, applies the backward operator and refreshes the
    feedback gains. ``init`` is (Sigma0, P0, K1, K2, Gamma0); by default
    Sigma0 = I, P0 = blockdiag(Q, 0, 0), zero gains and Gamma0 =
    blockdiag(I, -I). Gamma is held fixed unless ``refresh_gamma`` is set, in
    which case it is replaced by the error block of P after every pass
    whenever that block has the required signs.

    A closed loop that is not mean-square stable (spectral radius >= 1) is
    reported through ``diagnostics.stable`` rather than raised, since J can
    still be finite (e.g. J = 0 when Q = 0 and nobody acts).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    n, m1, m2 = model.n, model.m1, model.m2
    if init is None:
        P0 = np.zeros((3 * n, 3 * n))
        P0[:n, :n] = model.Q
        Sig0, K1, K2 = np.eye(2 * n), np.zeros((m1, n)), np.zeros((m2, n))
        G0 = P0[n:, n:]
        Gam0 = default_gamma(n) if not np.any(G0) else G0
        label = "default"
    else:
        Sig0, P0, K1, K2, Gam0 = init
        label = "user"
    args = _model_args(model, jitter)
    out = _kernels.value_iterate_loop(
        *args, _c(Sig0).copy(), _c(P0).copy(), _c(K1).copy(), _c(K2).copy(), _c(Gam0).copy(),
        float(tol), int(max_iter), bool(refresh_gamma), float(cond_cap),
    )
    Sig, P, K1, K2, L1, L2, Gam, it, res, history, rejected, status, phase, value = out
    stage = ("forward operator", "filter refresh", "backward operator")[phase] if status else ""
    raise_for_status(status, value, f"in {stage} at iteration {it}")

    return _finish(model, Sig, P, K1, K2, L1, L2, Gam, it, res, history, rejected, tol, refresh_gamma, label)


def _finish(model, Sig, P, K1, K2, L1, L2, Gam, it, res, history, rejected, tol, refresh_gamma, label) -> StationarySolution:
    # filter parameters are rebuilt with the final gains so that the reported
    # (K, F) pair satisfies A^1 = A + B2 K2 and A^2 = A + B1 K1 exactly
    filters = one_step_params(model.A, model.B1, model.B2, K1, K2, L1, L2)
    Acl, _, _ = closed_loop(model, K1, K2, filters)
    rho = spectral_radius(Acl)
    diag = StationaryDiagnostics(
        iterations=int(it),
        residual=float(res),
        converged=bool(res <= tol),
        spectral_radius=rho,
        stable=bool(rho < 1.0),
        history=np.asarray(history),
        gamma_flags=sign_flags(Gam),
        rejected_gamma_refreshes=int(rejected),
        refresh_gamma=refresh_gamma,
        init=label,
    )
    return StationarySolution(model, Sig, P, K1, K2, filters, Gam, average_cost(P, filters, model), diag)


def gain_residuals(sol: StationarySolution, cond_cap: float = DEFAULT_COND_CAP) -> tuple[float, float]:
    """Relative residuals of the filter-gain and feedback-gain first-order conditions."""
    m = sol.model
    f = sol.filters
    rL = gain_residual(f.L1, f.L2, sol.Sigma, sol.Gamma, m.C1, m.C2, m.V1, m.V2)
    q: QBlocks = q_matrix(sol.P, augment(m, f), m.R, m.S)
    g = solve_equilibrium_gains(q, m.n, cond_cap)
    return rL, stationarity_residual(q, g.Kbar1, g.Kbar2)


def operator_moves(sol: StationarySolution, cond_cap: float = DEFAULT_COND_CAP) -> tuple[float, float]:
    """How far one more forward and one more backward application move Sigma and P."""
    m = sol.model
    Sn, _, _ = forward_operator(m, sol.Sigma, sol.K1, sol.K2, sol.Gamma, cond_cap)
    Pn, _, _ = backward_operator(m, sol.P, sol.filters, cond_cap)
    return float(np.linalg.norm(Sn - sol.Sigma)), float(np.linalg.norm(Pn - sol.P))
