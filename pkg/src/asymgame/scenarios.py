"""Pursuit-evasion model configurations on the planar double integrator.

The state is the pursuer-minus-evader relative position and velocity. Both
players accelerate through B = dt * [0; I], the evader's input enters the
relative dynamics with a minus sign (B2 = -B), and each player's
acceleration disturbance W^i = 1e-2 I passes through the same input matrix,
so the relative-state process noise is W = dt^2 G (W^1 + W^2) G' with
G = [0; I].
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .errors import ParseError
from .model import double_integrator_2d, load_model

DT = 0.1
DISTURBANCE = 1e-2

# initial truth and estimates used for the trajectory experiments
X0 = (-10.0, 0.0, 0.0, 0.0)
Z0_PURSUER = (-10.0, 0.0, 0.0, -10.0)
Z0_EVADER = (-10.0, 0.0, 0.0, 0.0)


def pursuit_evasion(
    b24: float = 1.0,
    V1: np.ndarray | None = None,
    V2: np.ndarray | None = None,
    S: np.ndarray | None = None,
    dt: float = DT,
) -> dict[str, Any]:
    """Config document for the pursuit-evasion game.

    ``b24`` scales the pursuer's y-axis authority (entry (4, 2) of B1 is b24 * dt).
    """
    A, B = double_integrator_2d(dt)
    B1 = B.copy()
    B1[3, 1] = b24 * dt
    G = np.vstack((np.zeros((2, 2)), np.eye(2)))
    W = dt**2 * G @ (2 * DISTURBANCE * np.eye(2)) @ G.T
    C = np.hstack((np.eye(2), np.zeros((2, 2))))
    mats = {
        "A": A,
        "B1": B1,
        "B2": -B,
        "W": W,
        "C1": C,
        "C2": C,
        "V1": np.eye(2) if V1 is None else V1,
        "V2": np.eye(2) if V2 is None else V2,
        "Q": 1e-3 * np.eye(4),
        "R": np.eye(2),
        "S": -8 * np.eye(2) if S is None else S,
        "x0_mean": np.array(X0),
        "x0_cov": np.zeros((4, 4)),
    }
    return {"horizon": "infinite", "matrices": {k: np.asarray(v, dtype=float).tolist() for k, v in mats.items()}}


SCENARIOS = {
    "pe-baseline": {},
    "pe-slow-pursuer": {"b24": 0.7},
    "pe-noisy-pursuer": {"V1": np.diag([1.0, 50.0])},
    "pe-fast-noisy-pursuer": {"b24": 1.5, "V1": np.diag([1.0, 50.0])},
    "table1-case2": {"V1": 1e-6 * np.eye(2), "V2": 1e6 * np.eye(2), "S": -2.6 * np.eye(2)},
    "table1-case3": {"V1": 1e6 * np.eye(2), "V2": 1e-6 * np.eye(2), "S": -1.3e5 * np.eye(2)},
}

# reported equilibrium average costs
REFERENCE_COST = {
    "pe-baseline": 2.872e-3,
    "pe-slow-pursuer": 3.833e-3,
    "pe-noisy-pursuer": 7.572e-3,
    "pe-fast-noisy-pursuer": 5.539e-3,
    "table1-case2": 1.193e-3,
    "table1-case3": 3.8623,
}

# extreme sensor noise needs a looser innovation condition cap
EXTREME = {"table1-case2", "table1-case3"}
EXTREME_COND_CAP = 1e16


def scenario_config(name: str) -> dict[str, Any]:
    if name not in SCENARIOS:
        raise ParseError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIOS)}")
    return pursuit_evasion(**SCENARIOS[name])


def scenario_model(name: str, horizon: int | str | None = None):
    return load_model(scenario_config(name), horizon=horizon)
