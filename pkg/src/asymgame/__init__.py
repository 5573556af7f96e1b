"""Equilibria of two-player zero-sum LQG games with asymmetric information.

Each player observes the state through its own noisy sensor and runs a
one-step linear filter. The package computes finite-horizon and stationary
equilibria (filter gains, feedback gains, value) and simulates the closed loop.
"""

__version__ = "0.1.0"

from .errors import AsymGameError  # noqa: E402
from .model import GameModel, StationaryModel, load_model, save_model, validate_model  # noqa: E402
from .filtering import forward_pass, solve_filter_gains  # noqa: E402
from .dp import backward_pass, solve_equilibrium_gains  # noqa: E402
from .finite import finite_value, solve_finite  # noqa: E402
from .stationary import average_cost, lyapunov_cost, value_iterate  # noqa: E402
from .simulator import monte_carlo, rollout  # noqa: E402

__all__ = [
    "AsymGameError",
    "GameModel",
    "StationaryModel",
    "load_model",
    "save_model",
    "validate_model",
    "forward_pass",
    "solve_filter_gains",
    "backward_pass",
    "solve_equilibrium_gains",
    "solve_finite",
    "finite_value",
    "value_iterate",
    "average_cost",
    "lyapunov_cost",
    "monte_carlo",
    "rollout",
]
