"""Backward dynamic programming over the augmented state (x, e1, e2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._status import raise_for_status
from .filtering import DEFAULT_COND_CAP, FilterParams
from .model import AugmentedStepMatrices, GameModel


@dataclass(frozen=True)
class CostQuadratic:
    """Cost-to-go J_t(X) = X' P X + r."""

    P: np.ndarray
    r: float = 0.0
    t: int = 0


@dataclass(frozen=True)
class QBlocks:
    Q00: np.ndarray
    Q01: np.ndarray
    Q02: np.ndarray
    Q11: np.ndarray
    Q12: np.ndarray
    Q22: np.ndarray

    def full(self) -> np.ndarray:
        return np.block([
            [self.Q00, self.Q01, self.Q02],
            [self.Q01.T, self.Q11, self.Q12],
            [self.Q02.T, self.Q12.T, self.Q22],
        ])


@dataclass(frozen=True)
class GainPair:
    """Feedback gains u^i = K^i z^i, with the augmented-state gains when known."""

    K1: np.ndarray
    K2: np.ndarray
    Kbar1: np.ndarray | None = None
    Kbar2: np.ndarray | None = None

    @property
    def Kbar1_est(self) -> np.ndarray:
        n = self.K1.shape[1]
        return np.hstack((self.K1, np.zeros((self.K1.shape[0], 2 * n))))

    @property
    def Kbar2_est(self) -> np.ndarray:
        n = self.K2.shape[1]
        return np.hstack((self.K2, np.zeros((self.K2.shape[0], 2 * n))))

    @property
    def Kbb1(self) -> np.ndarray:
        return _kernels.closed_loop_embed(self.K1, self.K2)[0]

    @property
    def Kbb2(self) -> np.ndarray:
        return _kernels.closed_loop_embed(self.K1, self.K2)[1]


def q_matrix(P_next, aug: AugmentedStepMatrices, R, S) -> QBlocks:
    """Blocks of the stage Q-matrix over (X, u1, u2) given the next cost matrix."""
    P = P_next.P if isinstance(P_next, CostQuadratic) else np.asarray(P_next, float)
    n = aug.A_aug.shape[0] // 3
    Q = np.ascontiguousarray(aug.Q_aug[:n, :n])
    return QBlocks(*_kernels.q_blocks(P, aug.A_aug, aug.B1_aug, aug.B2_aug, Q, np.asarray(R, float), np.asarray(S, float)))


def solve_equilibrium_gains(q: QBlocks, n: int, cond_cap: float = DEFAULT_COND_CAP) -> GainPair:
    """Saddle-point gains of the stage Q-function.

    Raises ConvexityViolation / ConcavityViolation when Q11 or -Q22 is not
    positive definite, SchurSingular for singular Schur complements and
    GainConsistencyError when the Schur route and the joint solve disagree.
    """
    Kb1, Kb2, status, value = _kernels.equilibrium_gains(q.Q01, q.Q02, q.Q11, q.Q12, q.Q22, cond_cap)
    raise_for_status(status, value)
    return GainPair(Kb1[:, :n].copy(), Kb2[:, :n].copy(), Kb1, Kb2)


def stationarity_residual(q: QBlocks, Kbar1: np.ndarray, Kbar2: np.ndarray) -> float:
    """Relative residual of Q11 Kbar1 + Q12 Kbar2 + Q01' = 0 and Q12' Kbar1 + Q22 Kbar2 + Q02' = 0."""
    r1 = q.Q11 @ Kbar1 + q.Q12 @ Kbar2 + q.Q01.T
    r2 = q.Q12.T @ Kbar1 + q.Q22 @ Kbar2 + q.Q02.T
    s1 = np.linalg.norm(q.Q11 @ Kbar1) + np.linalg.norm(q.Q12 @ Kbar2) + np.linalg.norm(q.Q01) + 1e-300
    s2 = np.linalg.norm(q.Q12.T @ Kbar1) + np.linalg.norm(q.Q22 @ Kbar2) + np.linalg.norm(q.Q02) + 1e-300
    return max(np.linalg.norm(r1) / s1, np.linalg.norm(r2) / s2)


def cost_update(q: QBlocks, gains: GainPair, P_next, aug: AugmentedStepMatrices) -> CostQuadratic:
    """P_t = T' Q T with T = [I; [K1, -K1, 0]; [K2, 0, -K2]] and r_t = r_{t+1} + tr(P_{t+1} G W G')."""
    if isinstance(P_next, CostQuadratic):
        P, r, t = P_next.P, P_next.r, P_next.t - 1
    else:
        P, r, t = np.asarray(P_next, float), 0.0, 0
    Pt = _kernels.cost_update(q.Q00, q.Q01, q.Q02, q.Q11, q.Q12, q.Q22, gains.K1, gains.K2)
    rt = r + float(np.trace(P @ aug.G_aug @ aug.W_aug @ aug.G_aug.T))
    return CostQuadratic(Pt, rt, t)


@dataclass(frozen=True)
class BackwardResult:
    """Cost matrices P_0..P_T, offsets r_0..r_T and gains for t = 0..T-1."""

    P: np.ndarray
    r: np.ndarray
    K1: np.ndarray
    K2: np.ndarray

    def cost(self, t: int) -> CostQuadratic:
        return CostQuadratic(self.P[t], float(self.r[t]), t)

    def gains(self, t: int) -> GainPair:
        return GainPair(self.K1[t], self.K2[t])


def backward_pass(model: GameModel, filters: FilterParams, cond_cap: float = DEFAULT_COND_CAP) -> BackwardResult:
    """Backward recursion from P_T = blockdiag(Q_T, 0, 0), r_T = 0."""
    T = model.horizon
    f = filters
    Ps, rs, K1, K2, status, stage, value = _kernels.backward_pass(
        model.A, model.B1, model.B2, model.W, model.C1, model.C2, model.V1, model.V2,
        model.Q, model.R, model.S, model.Q_T,
        np.ascontiguousarray(f.A1), np.ascontiguousarray(f.A2),
        np.ascontiguousarray(f.Bbar1), np.ascontiguousarray(f.Bbar2),
        np.ascontiguousarray(f.Lbar1), np.ascontiguousarray(f.Lbar2),
        cond_cap,
    )
    raise_for_status(status, value, f"at stage {stage}")
    return BackwardResult(Ps, rs, K1[:T], K2[:T])
