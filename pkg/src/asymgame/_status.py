"""Translate kernel status codes into library exceptions."""

from . import _kernels as k
from .errors import (
    ConcavityViolation,
    ConvexityViolation,
    CoupledSystemSingular,
    GainConsistencyError,
    SchurSingular,
    SingularInnovation,
    SingularWeightBlock,
)


def raise_for_status(status: int, value: float, where: str = "") -> None:
    if status == k.OK:
        return
    at = f" {where}" if where else ""
    if status in (k.INNOVATION_1, k.INNOVATION_2):
        player = 1 if status == k.INNOVATION_1 else 2
        raise SingularInnovation(f"innovation covariance of player {player} is singular{at} (condition estimate {value:.3e})")
    if status in (k.WEIGHT_1, k.WEIGHT_2):
        block = "Gamma11" if status == k.WEIGHT_1 else "Gamma22"
        raise SingularWeightBlock(f"weight block {block} is singular{at} (condition estimate {value:.3e})")
    if status == k.COUPLED:
        raise CoupledSystemSingular(f"coupled filter-gain system is singular{at} (condition estimate {value:.3e})")
    if status == k.CONVEXITY:
        raise ConvexityViolation(f"Q11 is not positive definite{at} (smallest eigenvalue {value:.6g})")
    if status == k.CONCAVITY:
        raise ConcavityViolation(f"Q22 is not negative definite{at} (largest eigenvalue {value:.6g})")
    if status == k.SCHUR:
        raise SchurSingular(f"Schur complement is singular{at} (condition estimate {value:.3e})")
    if status == k.GAIN_ROUTES:
        raise GainConsistencyError(f"equilibrium gain routes disagree{at} (relative gap {value:.3e})")
    raise RuntimeError(f"unknown kernel status {status}{at}")
