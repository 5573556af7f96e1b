"""Seeded closed-loop rollouts and Monte Carlo statistics.

Random numbers come from numpy's counter-based Philox generator. Rollout k
of a run with base seed s draws everything from
``Philox(SeedSequence(s, spawn_key=(k,)))``: first n standard normals for the
initial state, then a (T, n + p1 + p2) block whose row t holds the
process-noise and both measurement-noise draws of step t. A rollout
therefore depends only on (s, k), whatever the batch size or thread count.

Measurement timing: y_t = C x_t + v_t is formed at every step. Finite-horizon
filters have zero gain at t = 0, so the t = 0 measurement is not consumed,
matching the initialization of the belief recursion. Stationary filters apply
their constant gain at every step, which is what keeps a stationary draw of
(x, e1, e2) stationary.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from ._jit import NUMBA_ENABLED
from .errors import DimensionMismatch, IndefiniteCovariance
from .filtering import FilterParams, FilterStage, filter_step
from .finite import FiniteEquilibrium
from .model import GameModel, StationaryModel
from .stationary import StationarySolution, stationary_state_cov

CLIP_TOL = 1e-10
CHUNK_ELEMENTS = 2_000_000


def make_stream(base_seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for rollout ``index`` of a run seeded with ``base_seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))))


def gaussian_factor(cov) -> np.ndarray:
    """F with F F' = cov from an eigendecomposition, clipping tiny negative eigenvalues."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.size == 0:
        return cov.copy()
    if not np.any(cov):
        return np.zeros_like(cov)
    cov = 0.5 * (cov + cov.T)
    w, U = np.linalg.eigh(cov)
    floor = -CLIP_TOL * abs(np.trace(cov))
    if w[0] < floor:
        raise IndefiniteCovariance(f"covariance has eigenvalue {w[0]:.3e} below the clip threshold {floor:.3e}")
    return U * np.sqrt(np.clip(w, 0.0, None))


def sample_gaussian(mean, cov, stream: np.random.Generator) -> np.ndarray:
    """mean + F xi with xi standard normal and F F' = cov."""
    mean = np.asarray(mean, dtype=np.float64)
    F = gaussian_factor(cov)
    xi = stream.standard_normal(mean.shape[0])
    if not np.any(F):
        return mean.copy()
    return mean + F @ xi


@dataclass(frozen=True)
class ClosedLoop:
    """Everything a rollout needs, stacked over stages (leading length T, or 1 if time-invariant)."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    Bbar1: np.ndarray
    Bbar2: np.ndarray
    Lbar1: np.ndarray
    Lbar2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    Q_T: np.ndarray
    Fw: np.ndarray
    Fv1: np.ndarray
    Fv2: np.ndarray
    horizon: int | None

    @property
    def n(self) -> int:
        return self.A.shape[-1]

    @property
    def m1(self) -> int:
        return self.K1.shape[1]

    @property
    def m2(self) -> int:
        return self.K2.shape[1]

    @property
    def p1(self) -> int:
        return self.C1.shape[1]

    @property
    def p2(self) -> int:
        return self.C2.shape[1]

    def index(self, t: int) -> int:
        return t if self.horizon is not None else 0

    def filter_stage(self, t: int) -> FilterStage:
        i = self.index(t)
        return FilterStage(self.A1[i], self.A2[i], self.Bbar1[i], self.Bbar2[i], self.Lbar1[i], self.Lbar2[i],
                           np.empty(0), np.empty(0))

    def kernel_args(self) -> tuple[np.ndarray, ...]:
        return tuple(np.ascontiguousarray(a) for a in (
            self.A, self.B1, self.B2, self.C1, self.C2, self.K1, self.K2, self.A1, self.A2,
            self.Bbar1, self.Bbar2, self.Lbar1, self.Lbar2, self.Q, self.R, self.S, self.Q_T,
        ))


def _stack(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return np.ascontiguousarray(a[None] if a.ndim == 2 else a)


def closed_loop_system(model: GameModel | StationaryModel, K1, K2, filters: FilterParams | FilterStage) -> ClosedLoop:
    """Assemble a rollout description from a model, feedback gains and one-step filters."""
    finite = isinstance(model, GameModel)
    horizon = model.horizon if finite else None
    K1, K2 = _stack(K1), _stack(K2)
    f = {k: _stack(getattr(filters, k)) for k in ("A1", "A2", "Bbar1", "Bbar2", "Lbar1", "Lbar2")}
    if finite and (K1.shape[0] != horizon or f["A1"].shape[0] != horizon):
        raise DimensionMismatch(f"gains and filters must cover {horizon} stages")
    Ws = _stack(model.W)
    V1s = _stack(model.V1)
    V2s = _stack(model.V2)
    return ClosedLoop(
        A=_stack(model.A), B1=_stack(model.B1), B2=_stack(model.B2), C1=_stack(model.C1), C2=_stack(model.C2),
        K1=K1, K2=K2, **f,
        Q=_stack(model.Q), R=_stack(model.R), S=_stack(model.S),
        Q_T=np.ascontiguousarray(model.Q_T if finite else np.zeros((model.n, model.n))),
        Fw=np.stack([gaussian_factor(W) for W in Ws]),
        Fv1=np.stack([gaussian_factor(V) for V in V1s]),
        Fv2=np.stack([gaussian_factor(V) for V in V2s]),
        horizon=horizon,
    )


def from_solution(sol: StationarySolution | FiniteEquilibrium) -> ClosedLoop:
    return closed_loop_system(sol.model, sol.K1, sol.K2, sol.filters)


@dataclass(frozen=True)
class Trajectory:
    """One realization: x, z1, z2 at t = 0..T; u1, u2 and stage costs at t = 0..T-1."""

    x: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: float
    seed: int | None = None
    index: int = 0
    scenario: str | None = None

    @property
    def total_cost(self) -> float:
        return float(self.stage_cost.sum() + self.terminal_cost)


def _check_steps(cl: ClosedLoop, T: int) -> None:
    if T < 0:
        raise ValueError("number of steps must be nonnegative")
    if cl.horizon is not None and T > cl.horizon:
        raise DimensionMismatch(f"{T} steps requested but the solution covers {cl.horizon} stages")


def _vec(name: str, v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.shape != (n,):
        raise DimensionMismatch(f"{name}: expected length {n}, got {v.shape[0]}")
    return v


def rollout_with_noise(cl: ClosedLoop, x0, z0_1, z0_2, xi: np.ndarray) -> Trajectory:
    """Simulate one rollout from a (T, n + p1 + p2) block of standard normals."""
    n, p1 = cl.n, cl.p1
    T = xi.shape[0]
    _check_steps(cl, T)
    x = np.empty((T + 1, n))
    z1 = np.empty((T + 1, n))
    z2 = np.empty((T + 1, n))
    u1 = np.empty((T, cl.m1))
    u2 = np.empty((T, cl.m2))
    cost = np.empty(T)
    x[0], z1[0], z2[0] = _vec("x0", x0, n), _vec("z0_1", z0_1, n), _vec("z0_2", z0_2, n)
    for t in range(T):
        i = cl.index(t)
        w = cl.Fw[i] @ xi[t, :n]
        v1 = cl.Fv1[i] @ xi[t, n : n + p1]
        v2 = cl.Fv2[i] @ xi[t, n + p1 :]
        u1[t] = cl.K1[i] @ z1[t]
        u2[t] = cl.K2[i] @ z2[t]
        cost[t] = x[t] @ cl.Q[i] @ x[t] + u1[t] @ cl.R[i] @ u1[t] + u2[t] @ cl.S[i] @ u2[t]
        y1 = cl.C1[i] @ x[t] + v1
        y2 = cl.C2[i] @ x[t] + v2
        fs = cl.filter_stage(t)
        x[t + 1] = cl.A[i] @ x[t] + cl.B1[i] @ u1[t] + cl.B2[i] @ u2[t] + w
        z1[t + 1] = filter_step(z1[t], u1[t], y1, fs, 1, cl.C1[i])
        z2[t + 1] = filter_step(z2[t], u2[t], y2, fs, 2, cl.C2[i])
    terminal = float(x[T] @ cl.Q_T @ x[T])
    return Trajectory(x, z1, z2, u1, u2, cost, terminal)


def rollout(cl: ClosedLoop, x0, z0_1, z0_2, T: int, stream: np.random.Generator) -> Trajectory:
    """One closed-loop rollout of T steps drawing its noise from ``stream``."""
    _check_steps(cl, T)
    xi = stream.standard_normal((T, cl.n + cl.p1 + cl.p2))
    return rollout_with_noise(cl, x0, z0_1, z0_2, xi)


def seeded_rollout(cl: ClosedLoop, x0, z0_1, z0_2, T: int, base_seed: int, index: int = 0, x0_cov=None) -> Trajectory:
    """Rollout ``index`` of a seeded run, using the same draw layout as :func:`monte_carlo`."""
    stream = make_stream(base_seed, index)
    x_init = sample_gaussian(x0, np.zeros((cl.n, cl.n)) if x0_cov is None else x0_cov, stream)
    traj = rollout(cl, x_init, z0_1, z0_2, T, stream)
    return Trajectory(traj.x, traj.z1, traj.z2, traj.u1, traj.u2, traj.stage_cost, traj.terminal_cost,
                      seed=base_seed, index=index)


def mean_propagation(cl: ClosedLoop, x0, z0_1, z0_2, T: int) -> Trajectory:
    """Noise-free propagation of the means (the dynamics are linear, so this is the exact mean path)."""
    return rollout_with_noise(cl, x0, z0_1, z0_2, np.zeros((T, cl.n + cl.p1 + cl.p2)))


@dataclass(frozen=True)
class InitSpec:
    """Initial conditions of a Monte Carlo run.

    ``x0`` is drawn from N(x0_mean, x0_cov) per rollout and the estimates start
    at z0_1, z0_2 (default: x0_mean). With ``stationary`` set, (x, e1, e2) is
    instead drawn from the given stationary covariance of the augmented state
    and z^i = x - e^i.
    """

    x0_mean: np.ndarray
    x0_cov: np.ndarray | None = None
    z0_1: np.ndarray | None = None
    z0_2: np.ndarray | None = None
    stationary: np.ndarray | None = None

    @classmethod
    def stationary_draw(cls, sol: StationarySolution) -> "InitSpec":
        n = sol.model.n
        return cls(np.zeros(n), stationary=stationary_state_cov(sol.model, sol.K1, sol.K2, sol.filters))


@dataclass(frozen=True)
class RolloutStats:
    """Aggregates over N rollouts; standard errors are sample std / sqrt(N)."""

    N: int
    T: int
    mean_x: np.ndarray
    mean_z1: np.ndarray
    mean_z2: np.ndarray
    mean_stage_cost: np.ndarray
    average_cost: float
    average_cost_se: float
    total_costs: np.ndarray
    mean_total_cost: float
    total_cost_se: float
    error_means: np.ndarray
    final_states: np.ndarray
    base_seed: int


def _threads() -> int:
    raw = os.environ.get("ASYMGAME_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, min(8, os.cpu_count() or 1))


def _initial_states(cl: ClosedLoop, init: InitSpec, streams: list[np.random.Generator]):
    n = cl.n
    N = len(streams)
    x0 = np.empty((N, n))
    z1 = np.empty((N, n))
    z2 = np.empty((N, n))
    if init.stationary is not None:
        F = gaussian_factor(init.stationary)
        for k, s in enumerate(streams):
            X = F @ s.standard_normal(3 * n)
            x0[k] = X[:n]
            z1[k] = X[:n] - X[n : 2 * n]
            z2[k] = X[:n] - X[2 * n :]
        return x0, z1, z2
    mean = _vec("x0", init.x0_mean, n)
    cov = np.zeros((n, n)) if init.x0_cov is None else np.asarray(init.x0_cov, float)
    z1[:] = mean if init.z0_1 is None else _vec("z0_1", init.z0_1, n)
    z2[:] = mean if init.z0_2 is None else _vec("z0_2", init.z0_2, n)
    for k, s in enumerate(streams):
        x0[k] = sample_gaussian(mean, cov, s)
    return x0, z1, z2


def _run_chunk(cl: ClosedLoop, init: InitSpec, T: int, base_seed: int, start: int, stop: int, use_numba: bool):
    streams = [make_stream(base_seed, k) for k in range(start, stop)]
    x0, z1, z2 = _initial_states(cl, init, streams)
    d = cl.n + cl.p1 + cl.p2
    xi = np.empty((stop - start, T, d))
    for j, s in enumerate(streams):
        xi[j] = s.standard_normal((T, d))
    kern = _kernels.rollout_batch if use_numba else _kernels.rollout_batch_numpy
    return kern(*cl.kernel_args(), x0, z1, z2, xi, cl.Fw, cl.Fv1, cl.Fv2)


def monte_carlo(
    cl: ClosedLoop,
    init: InitSpec,
    N: int,
    T: int,
    base_seed: int = 0,
    threads: int | None = None,
    use_numba: bool | None = None,
) -> RolloutStats:
    """Run N independent rollouts of T steps and aggregate them.

    Rollouts are processed in fixed-size chunks whose partial sums are
    combined in chunk order, so the result is bit-identical for any thread count.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    _check_steps(cl, T)
    if use_numba is None:
        use_numba = NUMBA_ENABLED
    d = cl.n + cl.p1 + cl.p2
    chunk = max(1, CHUNK_ELEMENTS // max(1, T * d))
    bounds = [(s, min(N, s + chunk)) for s in range(0, N, chunk)]
    workers = min(threads or _threads(), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _run_chunk(cl, init, T, base_seed, b[0], b[1], use_numba), bounds))
    else:
        parts = [_run_chunk(cl, init, T, base_seed, a, b, use_numba) for a, b in bounds]

    sum_x, sum_z1, sum_z2, sum_cost = (sum(p[i] for p in parts) for i in range(4))
    stage = np.concatenate([p[4] for p in parts])
    terminal = np.concatenate([p[5] for p in parts])
    err = np.concatenate([p[6] for p in parts])
    final = np.concatenate([p[7] for p in parts])
    per_step = stage / T if T > 0 else np.zeros(N)
    totals = stage + terminal
    se = (lambda a: float(np.std(a, ddof=1) / np.sqrt(N)) if N > 1 else 0.0)
    return RolloutStats(
        N=N, T=T,
        mean_x=sum_x / N, mean_z1=sum_z1 / N, mean_z2=sum_z2 / N, mean_stage_cost=sum_cost / N,
        average_cost=float(per_step.mean()), average_cost_se=se(per_step),
        total_costs=totals, mean_total_cost=float(totals.mean()), total_cost_se=se(totals),
        error_means=err, final_states=final, base_seed=base_seed,
    )


# ------------------------------------------------------------------- CSV


def csv_header(n: int, m1: int, m2: int) -> list[str]:
    cols = ["t"]
    cols += [f"x_{i}" for i in range(1, n + 1)]
    cols += [f"z1_{i}" for i in range(1, n + 1)]
    cols += [f"z2_{i}" for i in range(1, n + 1)]
    cols += [f"u1_{i}" for i in range(1, m1 + 1)]
    cols += [f"u2_{i}" for i in range(1, m2 + 1)]
    cols.append("stage_cost")
    return cols


def _fmt(v: float) -> str:
    return "%.17g" % v


def _write_rows(path: Path, x, z1, z2, u1, u2, cost, final_cost) -> None:
    T = u1.shape[0]
    n, m1, m2 = x.shape[1], u1.shape[1], u2.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(n, m1, m2))
        for t in range(T + 1):
            row = [str(t)] + [_fmt(v) for v in x[t]] + [_fmt(v) for v in z1[t]] + [_fmt(v) for v in z2[t]]
            if t < T:
                row += [_fmt(v) for v in u1[t]] + [_fmt(v) for v in u2[t]] + [_fmt(cost[t])]
            else:
                row += [""] * (m1 + m2) + [_fmt(final_cost) if final_cost is not None else ""]
            w.writerow(row)


def write_trajectory_csv(traj: Trajectory, path: str | Path, terminal: bool = True) -> None:
    _write_rows(Path(path), traj.x, traj.z1, traj.z2, traj.u1, traj.u2, traj.stage_cost,
                traj.terminal_cost if terminal else None)


def write_mean_csv(stats: RolloutStats, cl: ClosedLoop, path: str | Path, terminal: bool = True) -> None:
    """Mean trajectory; mean inputs are K^i times the mean estimates since u^i = K^i z^i."""
    T = stats.T
    idx = [cl.index(t) for t in range(T)]
    u1 = np.array([cl.K1[i] @ stats.mean_z1[t] for t, i in enumerate(idx)]).reshape(T, cl.m1)
    u2 = np.array([cl.K2[i] @ stats.mean_z2[t] for t, i in enumerate(idx)]).reshape(T, cl.m2)
    _write_rows(Path(path), stats.mean_x, stats.mean_z1, stats.mean_z2, u1, u2, stats.mean_stage_cost[:T],
                stats.mean_stage_cost[T] if terminal else None)


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
