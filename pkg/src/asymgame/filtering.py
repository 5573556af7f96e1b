"""Forward belief propagation: joint error covariance and equilibrium filter gains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._status import raise_for_status
from .errors import CovarianceIndefinite, DimensionMismatch
from .model import GameModel, Stage, StationaryModel

DEFAULT_COND_CAP = 1e12
JITTER = 1e-9
PSD_FLOOR = 1e-10


@dataclass(frozen=True)
class JointCovariance:
    """Second moment of the stacked estimation errors (e1, e2)."""

    Sigma: np.ndarray
    phase: str = "a_priori"
    t: int = 0

    @property
    def n(self) -> int:
        return self.Sigma.shape[0] // 2

    @property
    def S11(self) -> np.ndarray:
        return self.Sigma[: self.n, : self.n]

    @property
    def S12(self) -> np.ndarray:
        return self.Sigma[: self.n, self.n :]

    @property
    def S22(self) -> np.ndarray:
        return self.Sigma[self.n :, self.n :]


@dataclass(frozen=True)
class WeightMatrix:
    """Weights on the joint estimation error used to pick the filter gains."""

    Gamma: np.ndarray
    t: int = 0

    @property
    def n(self) -> int:
        return self.Gamma.shape[0] // 2

    @property
    def G11(self) -> np.ndarray:
        return self.Gamma[: self.n, : self.n]

    @property
    def G12(self) -> np.ndarray:
        return self.Gamma[: self.n, self.n :]

    @property
    def G22(self) -> np.ndarray:
        return self.Gamma[self.n :, self.n :]

    def sign_flags(self) -> tuple[bool, bool]:
        """(Gamma11 fails to be positive definite, Gamma22 fails to be negative definite)."""
        return sign_flags(self.Gamma)


def sign_flags(Gamma: np.ndarray) -> tuple[bool, bool]:
    n = Gamma.shape[0] // 2
    if n == 0:
        return False, False
    bad11 = bool(np.linalg.eigvalsh(Gamma[:n, :n])[0] <= 0.0)
    bad22 = bool(np.linalg.eigvalsh(Gamma[n:, n:])[-1] >= 0.0)
    return bad11, bad22


def default_gamma(n: int) -> np.ndarray:
    return np.diag(np.concatenate((np.ones(n), -np.ones(n))))


@dataclass(frozen=True)
class FilterStage:
    A1: np.ndarray
    A2: np.ndarray
    Bbar1: np.ndarray
    Bbar2: np.ndarray
    Lbar1: np.ndarray
    Lbar2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray


@dataclass(frozen=True)
class FilterParams:
    """One-step filter parameters stacked over stages t = 0..T-1."""

    A1: np.ndarray
    A2: np.ndarray
    Bbar1: np.ndarray
    Bbar2: np.ndarray
    Lbar1: np.ndarray
    Lbar2: np.ndarray
    L1: np.ndarray
    L2: np.ndarray

    @property
    def horizon(self) -> int:
        return self.A1.shape[0]

    def stage(self, t: int) -> FilterStage:
        return FilterStage(
            self.A1[t], self.A2[t], self.Bbar1[t], self.Bbar2[t],
            self.Lbar1[t], self.Lbar2[t], self.L1[t], self.L2[t],
        )

    def stacked(self) -> np.ndarray:
        """All parameters flattened, used for the outer-loop residual."""
        return np.concatenate([a.ravel() for a in (self.A1, self.A2, self.Bbar1, self.Bbar2, self.Lbar1, self.Lbar2)])


def one_step_params(A, B1, B2, K1, K2, L1, L2) -> FilterStage:
    """Filter parameters of one stage from the model, feedback and innovation gains."""
    A1 = A + B2 @ K2
    A2 = A + B1 @ K1
    return FilterStage(A1, A2, np.array(B1), np.array(B2), A1 @ L1, A2 @ L2, np.array(L1), np.array(L2))


def build_filter_params(model: GameModel, K1: np.ndarray, K2: np.ndarray, L1: np.ndarray, L2: np.ndarray) -> FilterParams:
    A1 = model.A + model.B2 @ K2
    A2 = model.A + model.B1 @ K1
    return FilterParams(
        A1=A1, A2=A2, Bbar1=np.array(model.B1), Bbar2=np.array(model.B2),
        Lbar1=A1 @ L1, Lbar2=A2 @ L2, L1=np.array(L1), L2=np.array(L2),
    )


def _mat(x) -> np.ndarray:
    if isinstance(x, JointCovariance):
        return x.Sigma
    if isinstance(x, WeightMatrix):
        return x.Gamma
    return np.asarray(x, dtype=np.float64)


def _jittered(V: np.ndarray, jitter: bool) -> np.ndarray:
    if not jitter:
        return V
    return V + JITTER * np.eye(V.shape[-1])


def solve_filter_gains(Sigma_minus, Gamma, C1, C2, V1, V2, cond_cap: float = DEFAULT_COND_CAP, jitter: bool = False):
    """Equilibrium innovation gains (L1, L2) at an a priori joint covariance.

    The two coupled gain equations are vectorised into one linear system in
    the stacked entries of L1 and L2 and solved directly.
    """
    S = _mat(Sigma_minus)
    G = _mat(Gamma)
    C1, C2 = _mat(C1), _mat(C2)
    V1, V2 = _jittered(_mat(V1), jitter), _jittered(_mat(V2), jitter)
    n = C1.shape[1]
    if S.shape != (2 * n, 2 * n) or G.shape != (2 * n, 2 * n):
        raise DimensionMismatch(f"Sigma and Gamma must be {2 * n}x{2 * n}, got {S.shape} and {G.shape}")
    L1, L2, status, value = _kernels.filter_gains(S, G, C1, C2, V1, V2, cond_cap)
    raise_for_status(status, value)
    return L1, L2


def gain_residual(L1, L2, Sigma_minus, Gamma, C1, C2, V1, V2) -> float:
    """Relative residual of the first-order conditions defining the filter gains.

    The conditions are the stationarity of trace(Gamma Sigma+) in L1 and L2:
    Gamma11 (L1 In1 - S11 C1') + Gamma12 (L2 C2 S12' C1' - S12' C1') = 0 and the
    mirrored equation for player 2, with In_i the innovation covariances.
    """
    S = _mat(Sigma_minus)
    G = _mat(Gamma)
    n = C1.shape[1]
    S11, S12, S22 = S[:n, :n], S[:n, n:], S[n:, n:]
    G11, G12, G22 = G[:n, :n], G[:n, n:], G[n:, n:]
    In1 = C1 @ S11 @ C1.T + V1
    In2 = C2 @ S22 @ C2.T + V2
    r1 = G11 @ (L1 @ In1 - S11 @ C1.T) + G12 @ (L2 @ C2 @ S12.T @ C1.T - S12.T @ C1.T)
    r2 = G22 @ (L2 @ In2 - S22 @ C2.T) + G12.T @ (L1 @ C1 @ S12 @ C2.T - S12 @ C2.T)
    scale1 = np.linalg.norm(G11) * np.linalg.norm(L1 @ In1) + np.linalg.norm(G12) * np.linalg.norm(S12 @ C1.T) + 1e-300
    scale2 = np.linalg.norm(G22) * np.linalg.norm(L2 @ In2) + np.linalg.norm(G12) * np.linalg.norm(S12 @ C2.T) + 1e-300
    return max(np.linalg.norm(r1) / scale1, np.linalg.norm(r2) / scale2)


def apriori_cov(Sigma_plus, K1, K2, stage: Stage | StationaryModel, t: int = 1) -> JointCovariance:
    """Sigma^-_{t+1} = Abar Sigma^+_t Abar' + blockdiag(W, W); Abar is block diagonal at t = 0."""
    S = _mat(Sigma_plus)
    A = stage.A
    if t == 0:
        Ab = _kernels.block_diag2(A, A)
    else:
        Ab = _kernels.coupled_abar(A, stage.B1, stage.B2, np.asarray(K1, float), np.asarray(K2, float))
    return JointCovariance(_kernels.apriori(S, Ab, stage.W), "a_priori", t + 1)


def aposteriori_cov(Sigma_minus, L1, L2, C1, C2, V1, V2) -> JointCovariance:
    """Joseph-form measurement update of the joint covariance."""
    S = _mat(Sigma_minus)
    t = Sigma_minus.t if isinstance(Sigma_minus, JointCovariance) else 0
    out = _kernels.aposteriori(S, np.asarray(L1, float), np.asarray(L2, float), C1, C2, V1, V2)
    return JointCovariance(out, "a_posteriori", t)


def check_floor(stack: np.ndarray, label: str = "joint covariance") -> None:
    """Raise when any covariance in the stack is indefinite beyond rounding."""
    stack = np.asarray(stack)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.shape[0] == 0 or stack.shape[-1] == 0:
        return
    eig = np.linalg.eigvalsh(stack)
    tr = np.abs(np.trace(stack, axis1=1, axis2=2))
    bad = np.nonzero(eig[:, 0] < -PSD_FLOOR * np.maximum(tr, 1e-300))[0]
    if bad.size:
        t = int(bad[0])
        raise CovarianceIndefinite(f"{label} at stage {t} has eigenvalue {eig[t, 0]:.3e}")


@dataclass(frozen=True)
class ForwardResult:
    """Covariance trajectory and filter parameters of a forward pass.

    ``prior[t]`` is Sigma^-_t and ``post[t]`` is Sigma^+_t. Index 0 holds the
    initial covariance blockdiag(X0, X0) in both, since no measurement update
    happens at t = 0; likewise ``post[T]`` equals ``prior[T]``. ``filters``
    covers stages 0..T-1.
    """

    prior: np.ndarray
    post: np.ndarray
    filters: FilterParams
    max_condition: float

    def covariance(self, t: int, phase: str = "a_priori") -> JointCovariance:
        src = self.prior if phase == "a_priori" else self.post
        return JointCovariance(src[t], phase, t)


def forward_pass(model: GameModel, K1, K2, Gammas, cond_cap: float = DEFAULT_COND_CAP, jitter: bool = False) -> ForwardResult:
    """Propagate the joint error covariance under fixed feedback gains.

    ``K1``, ``K2`` are stacks over t = 0..T-1 and ``Gammas`` a stack over
    t = 0..T (or a single 2n x 2n matrix used at every stage). The a priori
    step runs for t = 0..T-1; measurement updates run at t = 1..T-1, the
    stages whose filter parameters feed the dynamics.
    """
    T, n = model.horizon, model.n
    K1 = np.ascontiguousarray(K1, dtype=np.float64).reshape(T, model.m1, n)
    K2 = np.ascontiguousarray(K2, dtype=np.float64).reshape(T, model.m2, n)
    G = np.asarray(Gammas, dtype=np.float64)
    if G.ndim == 2:
        G = np.broadcast_to(G, (T + 1,) + G.shape)
    if G.shape != (T + 1, 2 * n, 2 * n):
        raise DimensionMismatch(f"Gamma stack must have shape {(T + 1, 2 * n, 2 * n)}, got {G.shape}")
    G = np.ascontiguousarray(G)
    V1 = _jittered(model.V1, jitter)
    V2 = _jittered(model.V2, jitter)
    prior, post, L1, L2, status, stage, value = _kernels.forward_pass(
        model.A, model.B1, model.B2, model.W, model.C1, model.C2, V1, V2,
        K1, K2, G, model.x0_cov, cond_cap,
    )
    raise_for_status(status, value, f"at stage {stage}")
    check_floor(prior, "a priori joint covariance")
    check_floor(post, "a posteriori joint covariance")
    L1, L2 = L1[:T], L2[:T]
    return ForwardResult(prior, post, build_filter_params(model, K1, K2, L1, L2), value)


def filter_step(z, u, y, params: FilterStage, player: int, C) -> np.ndarray:
    """z' = A^i z + Bbar^i u + Lbar^i (y - C^i z) for one player.

    ``C`` is the player's measurement matrix at the same stage.
    """
    if player == 1:
        A, B, L = params.A1, params.Bbar1, params.Lbar1
    elif player == 2:
        A, B, L = params.A2, params.Bbar2, params.Lbar2
    else:
        raise ValueError("player must be 1 or 2")
    return A @ z + B @ u + L @ (y - C @ z)
