"""Game model types, validation, config (de)serialization and augmentation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import _kernels
from .errors import AsymmetryBeyondTolerance, DefinitenessViolation, DimensionMismatch, ParseError

SYMMETRY_TOL = 1e-12
DEFINITENESS_TOL = 1e-10

STAGE_FIELDS = ("A", "B1", "B2", "W", "C1", "C2", "V1", "V2", "Q", "R", "S")

# matrix -> (rows, cols) in terms of the dimension symbols
_SHAPES = {
    "A": ("n", "n"),
    "B1": ("n", "m1"),
    "B2": ("n", "m2"),
    "W": ("n", "n"),
    "C1": ("p1", "n"),
    "C2": ("p2", "n"),
    "V1": ("p1", "p1"),
    "V2": ("p2", "p2"),
    "Q": ("n", "n"),
    "R": ("m1", "m1"),
    "S": ("m2", "m2"),
    "Q_T": ("n", "n"),
    "x0_cov": ("n", "n"),
}

# definiteness requirement per symmetric matrix: "psd", "pd" or "nd"
_DEFINITENESS = {
    "W": "psd",
    "V1": "psd",
    "V2": "psd",
    "Q": "psd",
    "R": "pd",
    "S": "nd",
    "Q_T": "psd",
    "x0_cov": "psd",
}


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Stage:
    """Matrices of one decision stage (or of a time-invariant model)."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    W: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray


class _Dims:
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[-1]

    @property
    def m1(self) -> int:
        return self.B1.shape[-1]

    @property
    def m2(self) -> int:
        return self.B2.shape[-1]

    @property
    def p1(self) -> int:
        return self.C1.shape[-2]

    @property
    def p2(self) -> int:
        return self.C2.shape[-2]


@dataclass(frozen=True, eq=False)
class GameModel(_Dims):
    """Finite-horizon model. Stage matrices are stacked along a leading time axis."""

    horizon: int
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    W: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    Q_T: np.ndarray
    x0_mean: np.ndarray
    x0_cov: np.ndarray

    def stage(self, t: int) -> Stage:
        if not 0 <= t < self.horizon:
            raise IndexError(f"stage {t} outside 0..{self.horizon - 1}")
        return Stage(*(getattr(self, k)[t] for k in STAGE_FIELDS))

    def stacks(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, k) for k in STAGE_FIELDS)


@dataclass(frozen=True, eq=False)
class StationaryModel(_Dims):
    """Time-invariant model for the average-cost problem."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    W: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    horizon: str = field(default="infinite", init=False)

    def stage(self, t: int = 0) -> Stage:
        return Stage(*(getattr(self, k) for k in STAGE_FIELDS))

    def with_horizon(self, T: int, x0_mean=None, x0_cov=None, Q_T=None) -> GameModel:
        """Finite-horizon copy repeating these matrices for T stages."""
        n = self.n
        raw: dict[str, Any] = {k: getattr(self, k) for k in STAGE_FIELDS}
        raw["Q_T"] = self.Q if Q_T is None else Q_T
        raw["x0_mean"] = np.zeros(n) if x0_mean is None else x0_mean
        raw["x0_cov"] = np.zeros((n, n)) if x0_cov is None else x0_cov
        return validate_model(raw, horizon=T)


@dataclass(frozen=True)
class AugmentedStepMatrices:
    A_aug: np.ndarray
    B1_aug: np.ndarray
    B2_aug: np.ndarray
    G_aug: np.ndarray
    W_aug: np.ndarray
    Q_aug: np.ndarray


# ------------------------------------------------------------------ checks


def _check_symmetric(name: str, M: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(M)
    if norm == 0.0:
        return M
    rel = np.linalg.norm(M - M.T) / norm
    if rel > SYMMETRY_TOL:
        raise AsymmetryBeyondTolerance(f"{name} is not symmetric (relative asymmetry {rel:.3e})")
    return 0.5 * (M + M.T)


def _check_definite(name: str, M: np.ndarray, kind: str) -> None:
    if M.size == 0:
        return
    eig = np.linalg.eigvalsh(M)
    tol = DEFINITENESS_TOL * max(1.0, float(np.abs(eig).max()))
    if kind == "psd" and eig[0] < -tol:
        raise DefinitenessViolation(f"{name} must be positive semidefinite (eigenvalue {eig[0]:.6g})")
    if kind == "pd" and eig[0] <= tol:
        raise DefinitenessViolation(f"{name} must be positive definite (eigenvalue {eig[0]:.6g})")
    if kind == "nd" and eig[-1] >= -tol:
        raise DefinitenessViolation(f"{name} must be negative definite (eigenvalue {eig[-1]:.6g})")


def _ragged_stage(name: str, stages: list | tuple) -> None:
    """Name the first stage whose shape differs from stage 0 in a per-stage list."""
    try:
        shapes = [np.array(s, dtype=np.float64).shape for s in stages]
    except (TypeError, ValueError):
        return
    for t, shape in enumerate(shapes):
        if shape != shapes[0]:
            raise DimensionMismatch(f"{name} at stage {t}: expected shape {shapes[0]}, got {shape}")


def _as_array(name: str, value: Any, ndim_options: tuple[int, ...]) -> np.ndarray:
    try:
        a = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        if 3 in ndim_options and isinstance(value, (list, tuple)) and len(value) > 1:
            _ragged_stage(name, value)
        raise ParseError(f"matrices.{name}: not a numeric array ({exc})") from None
    if a.ndim not in ndim_options:
        raise DimensionMismatch(f"{name}: expected {' or '.join(f'{d}-D' for d in ndim_options)} array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParseError(f"matrices.{name}: non-finite entry")
    return a


def validate_model(raw: Mapping[str, Any] | GameModel | StationaryModel, horizon: int | str | None = None):
    """Check dimensions, symmetry and definiteness and return an immutable model.

    ``raw`` is a mapping of matrix names (as in the config ``matrices`` block,
    with time-invariant matrices given as 2-D arrays and time-varying ones
    stacked along a leading axis) or an already validated model. ``horizon``
    is an int for a finite-horizon :class:`GameModel` or ``"infinite"``.
    """
    if isinstance(raw, (GameModel, StationaryModel)):
        if horizon is None:
            horizon = raw.horizon
        src: dict[str, Any] = {k: getattr(raw, k) for k in STAGE_FIELDS}
        if isinstance(raw, GameModel):
            src.update(Q_T=raw.Q_T, x0_mean=raw.x0_mean, x0_cov=raw.x0_cov)
        raw = src
    if horizon is None:
        raise ParseError("horizon: missing")
    stationary = horizon == "infinite"
    if not stationary:
        if isinstance(horizon, bool) or not isinstance(horizon, (int, np.integer)) or horizon < 0:
            raise ParseError(f"horizon: expected a nonnegative integer or 'infinite', got {horizon!r}")
        horizon = int(horizon)
    T = None if stationary else horizon

    raw = dict(raw)
    if "S" not in raw and "R2" in raw:
        raw["S"] = raw.pop("R2")
    for k in STAGE_FIELDS:
        if k not in raw or raw[k] is None:
            raise ParseError(f"matrices.{k}: missing")

    # stage 0 fixes the dimensions
    arrays: dict[str, np.ndarray] = {}
    for k in STAGE_FIELDS:
        a = _as_array(k, raw[k], (2,) if stationary else (2, 3))
        if a.ndim == 3:
            if a.shape[0] != T:
                raise DimensionMismatch(f"{k}: {a.shape[0]} stages given for horizon {T}")
        arrays[k] = a

    def first(a: np.ndarray) -> np.ndarray:
        return a if a.ndim == 2 else a[0] if a.shape[0] else np.empty(a.shape[1:])

    dims = {
        "n": first(arrays["A"]).shape[0],
        "m1": first(arrays["B1"]).shape[1],
        "m2": first(arrays["B2"]).shape[1],
        "p1": first(arrays["C1"]).shape[0],
        "p2": first(arrays["C2"]).shape[0],
    }
    for k, a in arrays.items():
        want = tuple(dims[s] for s in _SHAPES[k])
        stages = [a] if a.ndim == 2 else list(a)
        for t, M in enumerate(stages):
            if M.shape != want:
                where = "" if a.ndim == 2 else f" at stage {t}"
                raise DimensionMismatch(f"{k}{where}: expected shape {want}, got {M.shape}")

    out: dict[str, np.ndarray] = {}
    for k, a in arrays.items():
        stages = [a] if a.ndim == 2 else list(a)
        checked = []
        for t, M in enumerate(stages):
            label = k if a.ndim == 2 else f"{k}[{t}]"
            # with no stages the stage matrices only carry dimensions
            if k in _DEFINITENESS and T != 0:
                M = _check_symmetric(label, M)
                _check_definite(label, M, _DEFINITENESS[k])
            checked.append(M)
        if stationary:
            out[k] = _freeze(checked[0])
        elif a.ndim == 2:
            out[k] = _freeze(np.broadcast_to(checked[0], (T,) + checked[0].shape))
        else:
            out[k] = _freeze(np.stack(checked) if checked else np.empty((0,) + a.shape[1:]))

    if stationary:
        return StationaryModel(**out)

    n = dims["n"]
    Q_T = raw.get("Q_T")
    if Q_T is None:
        Q_T = first(arrays["Q"]) if T == 0 or arrays["Q"].ndim == 2 else arrays["Q"][-1]
    Q_T = _as_array("Q_T", Q_T, (2,))
    x0_mean = _as_array("x0_mean", raw.get("x0_mean", np.zeros(n)), (1,))
    x0_cov = _as_array("x0_cov", raw.get("x0_cov", np.zeros((n, n))), (2,))
    if x0_mean.shape != (n,):
        raise DimensionMismatch(f"x0_mean: expected length {n}, got {x0_mean.shape[0]}")
    for k, M in (("Q_T", Q_T), ("x0_cov", x0_cov)):
        if M.shape != (n, n):
            raise DimensionMismatch(f"{k}: expected shape {(n, n)}, got {M.shape}")
    Q_T = _check_symmetric("Q_T", Q_T)
    _check_definite("Q_T", Q_T, "psd")
    x0_cov = _check_symmetric("x0_cov", x0_cov)
    _check_definite("x0_cov", x0_cov, "psd")
    return GameModel(
        horizon=T, Q_T=_freeze(Q_T), x0_mean=_freeze(x0_mean), x0_cov=_freeze(x0_cov), **out
    )


# ----------------------------------------------------------------- config


def double_integrator_2d(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Planar double integrator: state (px, py, vx, vy), input (ax, ay)."""
    A = np.eye(4)
    A[0, 2] = A[1, 3] = dt
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = dt
    return A, B


TEMPLATES = {"double_integrator_2d": double_integrator_2d}


def _parse_document(doc: Mapping[str, Any]) -> tuple[Any, dict[str, Any]]:
    if not isinstance(doc, Mapping):
        raise ParseError("document: expected a JSON object at top level")
    if "horizon" not in doc:
        raise ParseError("horizon: missing")
    mats = doc.get("matrices")
    if not isinstance(mats, Mapping):
        raise ParseError("matrices: missing or not an object")
    mats = dict(mats)
    tmpl = doc.get("template")
    if tmpl is not None:
        if not isinstance(tmpl, Mapping) or "name" not in tmpl:
            raise ParseError("template: expected an object with a 'name'")
        name = tmpl["name"]
        if name not in TEMPLATES:
            raise ParseError(f"template.name: unknown template {name!r} (known: {', '.join(TEMPLATES)})")
        dt = tmpl.get("dt")
        if not isinstance(dt, (int, float)) or isinstance(dt, bool) or not math.isfinite(dt) or dt <= 0:
            raise ParseError("template.dt: expected a positive number")
        A, B = TEMPLATES[name](float(dt))
        mats.setdefault("A", A)
        mats.setdefault("B1", B)
        mats.setdefault("B2", -B)
    return doc["horizon"], mats


def load_model(source: str | Path | Mapping[str, Any], horizon: int | str | None = None):
    """Load a model from a config path, JSON text or an already parsed mapping.

    ``horizon`` overrides the document's horizon (used by the CLI's --mode).
    """
    if isinstance(source, Mapping):
        doc = source
    else:
        text = source
        if isinstance(source, Path) or not str(source).lstrip().startswith("{"):
            try:
                text = Path(source).read_text(encoding="utf-8")
            except OSError as exc:
                raise ParseError(f"cannot read model file {source}: {exc}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    doc_horizon, mats = _parse_document(doc)
    if horizon is None:
        horizon = doc_horizon
    if horizon == "infinite":
        for k in ("Q_T", "x0_mean", "x0_cov"):
            mats.pop(k, None)
    return validate_model(mats, horizon=horizon)


def _uniform(stack: np.ndarray) -> bool:
    return stack.shape[0] > 0 and bool(np.all(stack == stack[0]))


def save_model(model: GameModel | StationaryModel) -> dict[str, Any]:
    """JSON-compatible config document; stage-constant matrices use the 2-D shorthand.

    Python's float repr is the shortest exact round-trip form, so
    ``load_model(save_model(m))`` reproduces every matrix bit for bit.
    """
    mats: dict[str, Any] = {}
    for k in STAGE_FIELDS:
        a = getattr(model, k)
        if isinstance(model, GameModel) and _uniform(a):
            a = a[0]
        mats[k] = a.tolist()
    if isinstance(model, GameModel):
        if model.horizon == 0:
            # keep dimensions recoverable with no stages present
            for k in STAGE_FIELDS:
                mats[k] = np.zeros(getattr(model, k).shape[1:]).tolist()
        mats["Q_T"] = model.Q_T.tolist()
        mats["x0_mean"] = model.x0_mean.tolist()
        mats["x0_cov"] = model.x0_cov.tolist()
    return {"horizon": model.horizon, "matrices": mats}


def dump_model(model: GameModel | StationaryModel, path: str | Path | None = None) -> str:
    text = json.dumps(save_model(model), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def model_hash(model: GameModel | StationaryModel) -> str:
    canonical = json.dumps(save_model(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------- augmentation


def augment(stage: Stage | StationaryModel, filt: Any) -> AugmentedStepMatrices:
    """Joint state/error dynamics of one stage under the given one-step filters.

    ``filt`` supplies A1, A2, Bbar1, Bbar2, Lbar1, Lbar2 for the same stage.
    """
    n = stage.A.shape[0]
    expect = {
        "A1": (n, n),
        "A2": (n, n),
        "Bbar1": stage.B1.shape,
        "Bbar2": stage.B2.shape,
        "Lbar1": (n, stage.C1.shape[0]),
        "Lbar2": (n, stage.C2.shape[0]),
    }
    for k, shape in expect.items():
        got = np.shape(getattr(filt, k))
        if got != shape:
            raise DimensionMismatch(f"filter {k}: expected shape {shape}, got {got}")
    Aa, Ba1, Ba2, Ga = _kernels.augment(
        stage.A, stage.B1, stage.B2, stage.C1, stage.C2,
        np.asarray(filt.A1, float), np.asarray(filt.A2, float),
        np.asarray(filt.Bbar1, float), np.asarray(filt.Bbar2, float),
        np.asarray(filt.Lbar1, float), np.asarray(filt.Lbar2, float),
    )
    Wa = _kernels.noise_aug(stage.W, stage.V1, stage.V2)
    Qa = np.zeros((3 * n, 3 * n))
    Qa[:n, :n] = stage.Q
    return AugmentedStepMatrices(Aa, Ba1, Ba2, Ga, Wa, Qa)
