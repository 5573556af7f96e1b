"""Single-player LQG reference: the minimizer alone, the maximizer's input absent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AsymGameError
from .model import StationaryModel


def control_riccati(A, B, Q, R, tol: float = 1e-14, max_iter: int = 1_000_000):
    """Stationary cost matrix P and gain K (u = K x) by Riccati iteration."""
    P = np.array(Q, dtype=float)
    for _ in range(max_iter):
        H = R + B.T @ P @ B
        K = -np.linalg.solve(H, B.T @ P @ A)
        Pn = Q + A.T @ P @ A + A.T @ P @ B @ K
        Pn = 0.5 * (Pn + Pn.T)
        if np.abs(Pn - P).max() <= tol * max(1.0, np.abs(Pn).max()):
            P = Pn
            break
        P = Pn
    else:
        raise AsymGameError("control Riccati iteration did not converge")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def filter_riccati(A, C, W, V, tol: float = 1e-14, max_iter: int = 1_000_000):
    """Stationary a priori error covariance and innovation gain L = S C'(C S C' + V)^-1."""
    S = np.array(W, dtype=float) + np.eye(A.shape[0])
    for _ in range(max_iter):
        In = C @ S @ C.T + V
        L = np.linalg.solve(In, C @ S).T
        Sp = S - L @ C @ S
        Sn = A @ Sp @ A.T + W
        Sn = 0.5 * (Sn + Sn.T)
        if np.abs(Sn - S).max() <= tol * max(1.0, np.abs(Sn).max()):
            S = Sn
            break
        S = Sn
    else:
        raise AsymGameError("filter Riccati iteration did not converge")
    L = np.linalg.solve(C @ S @ C.T + V, C @ S).T
    return S, L


@dataclass(frozen=True)
class LQGBaseline:
    J: float
    K: np.ndarray
    L: np.ndarray
    P: np.ndarray
    Sigma: np.ndarray


def lqg_baseline(model: StationaryModel) -> LQGBaseline:
    """Average cost of the minimizer's LQG controller acting on a one-step predictor.

    The control uses the predicted estimate (measurements up to t - 1), so
    J = tr(P W) + tr(K'(R + B'PB)K Sigma) with Sigma the a priori error covariance.
    """
    A, B, C = model.A, model.B1, model.C1
    P, K = control_riccati(A, B, model.Q, model.R)
    Sigma, L = filter_riccati(A, C, model.W, model.V1)
    H = model.R + B.T @ P @ B
    J = float(np.trace(P @ model.W) + np.trace(K.T @ H @ K @ Sigma))
    return LQGBaseline(J, K, L, P, Sigma)
