"""Solution documents: JSON-compatible records of a solve that can be re-evaluated."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .errors import ParseError
from .filtering import FilterParams, FilterStage
from .finite import FiniteEquilibrium, finite_value, value_from
from .model import GameModel, StationaryModel, load_model, model_hash, save_model
from .stationary import StationarySolution, average_cost

FORMAT = "asymgame-solution"
FILTER_KEYS = ("A1", "A2", "Bbar1", "Bbar2", "Lbar1", "Lbar2", "L1", "L2")


def _tolist(a) -> Any:
    return np.asarray(a).tolist()


def solution_document(
    sol: StationarySolution | FiniteEquilibrium,
    settings: dict[str, Any] | None = None,
    seeds: list[int] | None = None,
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Everything needed to reproduce and re-evaluate a solve.

    Floats are written in Python's shortest round-trip form, so loading the
    document restores every matrix exactly.
    """
    model = sol.model
    doc: dict[str, Any] = {
        "format": FORMAT,
        "version": __version__,
        "model": {"hash": model_hash(model), "config": save_model(model)},
        "settings": dict(settings or {}),
        "seeds": list(seeds or []),
    }
    f = sol.filters
    doc["filters"] = {k: _tolist(getattr(f, k)) for k in FILTER_KEYS}
    doc["gains"] = {"K1": _tolist(sol.K1), "K2": _tolist(sol.K2)}
    if isinstance(sol, StationarySolution):
        d = sol.diagnostics
        doc.update(
            solver="stationary",
            J=sol.J,
            P=_tolist(sol.P),
            Sigma=_tolist(sol.Sigma),
            Gamma=_tolist(sol.Gamma),
            diagnostics={
                "converged": d.converged,
                "iterations": d.iterations,
                "residual": d.residual,
                "spectral_radius": d.spectral_radius,
                "stable": d.stable,
                "gamma_sign_flags": list(d.gamma_flags),
                "rejected_gamma_refreshes": d.rejected_gamma_refreshes,
                "refresh_gamma": d.refresh_gamma,
                "init": d.init,
            },
        )
    else:
        d = sol.diagnostics
        doc.update(
            solver="finite",
            J=finite_value(sol),
            P=_tolist(sol.backward.P),
            r=_tolist(sol.backward.r),
            Sigma=_tolist(sol.forward.prior),
            Sigma_post=_tolist(sol.forward.post),
            Gamma=_tolist(sol.Gamma),
            diagnostics={
                "converged": d.converged,
                "iterations": d.iterations,
                "residual": d.residual,
                "residual_history": [r if np.isfinite(r) else None for r in d.history],
                "gamma_sign_flags": [list(f) for f in d.gamma_flags],
                "refresh_gamma": d.refresh_gamma,
                "rejected_gamma_refreshes": d.rejected_gamma_refreshes,
                "damping": d.damping,
            },
        )
    if extra:
        doc.update(extra)
    return doc


def write_document(doc: dict[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class LoadedSolution:
    """A solution restored from its document."""

    solver: str
    model: GameModel | StationaryModel
    K1: np.ndarray
    K2: np.ndarray
    filters: FilterParams | FilterStage
    P: np.ndarray
    r: np.ndarray | None
    J: float
    doc: dict[str, Any]

    def evaluate(self) -> float:
        """Recompute J from the stored cost matrices and filters."""
        if self.solver == "stationary":
            return average_cost(self.P, self.filters, self.model)
        m = self.model
        return value_from(self.P[0], float(self.r[0]), m.x0_mean, m.x0_cov)


def load_solution(source: str | Path | dict[str, Any]) -> LoadedSolution:
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(Path(source).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ParseError(f"cannot read solution file {source}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if doc.get("format") != FORMAT:
        raise ParseError("not a solution document (missing format tag)")
    try:
        solver = doc["solver"]
        model = load_model(doc["model"]["config"])
        arr = lambda v: np.array(v, dtype=np.float64)  # noqa: E731
        fil = {k: arr(doc["filters"][k]) for k in FILTER_KEYS}
        filters = FilterStage(**fil) if solver == "stationary" else FilterParams(**fil)
        return LoadedSolution(
            solver=solver,
            model=model,
            K1=arr(doc["gains"]["K1"]),
            K2=arr(doc["gains"]["K2"]),
            filters=filters,
            P=arr(doc["P"]),
            r=arr(doc["r"]) if "r" in doc else None,
            J=float(doc["J"]),
            doc=doc,
        )
    except KeyError as exc:
        raise ParseError(f"solution document is missing field {exc}") from None
