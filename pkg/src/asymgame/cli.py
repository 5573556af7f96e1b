"""Command-line interface: ``asymgame <solve|simulate|scenario> [flags]``.

Exit codes: 0 success, 1 model or solver error, 2 solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .documents import load_solution, solution_document, write_document
from .errors import AsymGameError, DimensionMismatch
from .filtering import DEFAULT_COND_CAP
from .finite import solve_finite
from .lqg import lqg_baseline
from .model import GameModel, StationaryModel, load_model
from .scenarios import SCENARIOS, scenario_config
from .simulator import (
    InitSpec,
    closed_loop_system,
    mean_propagation,
    monte_carlo,
    seeded_rollout,
    write_mean_csv,
    write_trajectory_csv,
)
from .stationary import stationary_state_cov, value_iterate

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.replace(",", " ").split()], dtype=np.float64)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymgame", description="Zero-sum LQG games with asymmetric information.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute a finite-horizon or stationary equilibrium")
    p.add_argument("--model", required=True, help="model config (JSON)")
    p.add_argument("--mode", choices=("finite", "infinite"), help="default: from the config's horizon")
    p.add_argument("--horizon", type=int, help="number of stages for --mode finite")
    p.add_argument("--tol", type=float, help="loop tolerance (default 1e-9 finite, 1e-10 infinite)")
    p.add_argument("--max-iter", type=int, help="iteration cap (default 10000 finite, 100000 infinite)")
    p.add_argument("--damping", type=float, default=1.0, help="gain relaxation in (0, 1] (finite mode)")
    gamma = p.add_mutually_exclusive_group()
    gamma.add_argument("--fixed-gamma", action="store_true", help="hold the filter weights at blockdiag(I, -I) (default)")
    gamma.add_argument("--refresh-gamma", action="store_true", help="re-extract the filter weights from P every pass")
    p.add_argument("--cond-cap", type=float, default=DEFAULT_COND_CAP, help="condition-number cap (default 1e12)")
    p.add_argument("--jitter", action="store_true", help="add 1e-9 I to the measurement noise covariances")
    p.add_argument("--baseline", choices=("lqg",), help="also evaluate a reference controller")
    p.add_argument("--output", default="solution.json", help="solution document path")

    p = sub.add_parser("simulate", help="Monte Carlo rollouts of a solved game")
    p.add_argument("--solution", required=True, help="solution document from 'solve'")
    p.add_argument("--x0", type=_vector, help="initial state (default: prior mean, zero if stationary)")
    p.add_argument("--z0-1", dest="z0_1", type=_vector, help="minimizer's initial estimate (default: prior mean, or x0 if stationary)")
    p.add_argument("--z0-2", dest="z0_2", type=_vector, help="maximizer's initial estimate (default: prior mean, or x0 if stationary)")
    p.add_argument("--steps", type=int, help="rollout length (default: the horizon, or 200)")
    p.add_argument("--samples", type=int, default=1, help="number of rollouts")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--mean-only", action="store_true", help="write only mean paths (Monte Carlo and noise-free)")
    p.add_argument("--stationary-init", action="store_true",
                   help="draw (x, e1, e2) from the stationary distribution (stationary solutions only)")
    p.add_argument("--max-rollout-files", type=int, default=20, help="cap on per-rollout CSV files")
    p.add_argument("--output-dir", default=".", help="directory for CSV files and stats.json")

    p = sub.add_parser("scenario", help="emit a pursuit-evasion model config")
    p.add_argument("name", nargs="?", help="one of: " + ", ".join(SCENARIOS))
    p.add_argument("--list", action="store_true", help="list scenario names")
    p.add_argument("--output", help="write to this path instead of stdout")
    return parser


def _err(msg: str) -> None:
    print(f"asymgame: error: {msg}", file=sys.stderr)


def cmd_solve(args: argparse.Namespace) -> int:
    horizon = None
    if args.mode == "finite":
        if args.horizon is None:
            _err("--mode finite needs --horizon")
            return EXIT_ERROR
        horizon = args.horizon
    elif args.mode == "infinite":
        horizon = "infinite"
    elif args.horizon is not None:
        horizon = args.horizon
    model = load_model(args.model, horizon=horizon)
    refresh = bool(args.refresh_gamma)
    settings = {
        "mode": "infinite" if isinstance(model, StationaryModel) else "finite",
        "horizon": model.horizon,
        "refresh_gamma": refresh,
        "cond_cap": args.cond_cap,
        "jitter": args.jitter,
    }
    start = time.perf_counter()
    extra = {}
    if isinstance(model, StationaryModel):
        tol = 1e-10 if args.tol is None else args.tol
        max_iter = 100_000 if args.max_iter is None else args.max_iter
        settings.update(tol=tol, max_iter=max_iter)
        sol = value_iterate(model, tol=tol, max_iter=max_iter, refresh_gamma=refresh,
                            cond_cap=args.cond_cap, jitter=args.jitter)
        if args.baseline == "lqg":
            base = lqg_baseline(model)
            extra["baseline"] = {"kind": "lqg", "J": base.J, "K": base.K.tolist(), "L": base.L.tolist()}
    else:
        tol = 1e-9 if args.tol is None else args.tol
        max_iter = 10_000 if args.max_iter is None else args.max_iter
        settings.update(tol=tol, max_iter=max_iter, damping=args.damping)
        if args.baseline:
            _err("--baseline is only available with --mode infinite")
            return EXIT_ERROR
        sol = solve_finite(model, tol=tol, max_iter=max_iter, damping=args.damping, refresh_gamma=refresh,
                           cond_cap=args.cond_cap, jitter=args.jitter)
    elapsed = time.perf_counter() - start
    settings["command"] = "solve"
    doc = solution_document(sol, settings, extra=extra)
    write_document(doc, args.output)
    d = sol.diagnostics
    status = "converged" if d.converged else "NOT converged"
    print(f"J = {doc['J']:.10g}")
    print(f"{doc['solver']} solve {status} after {d.iterations} iterations (residual {d.residual:.3e}, {elapsed:.3f} s)")
    if doc["solver"] == "stationary":
        print(f"closed-loop spectral radius {d.spectral_radius:.6f}")
        if not d.stable:
            print("asymgame: warning: closed loop is not mean-square stable", file=sys.stderr)
    if "baseline" in extra:
        print(f"LQG baseline J = {extra['baseline']['J']:.10g}")
    print(f"solution written to {args.output}")
    return EXIT_OK if d.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args: argparse.Namespace) -> int:
    loaded = load_solution(args.solution)
    model = loaded.model
    n = model.n
    cl = closed_loop_system(model, loaded.K1, loaded.K2, loaded.filters)
    if isinstance(model, GameModel):
        default_mean, x0_cov = np.asarray(model.x0_mean), np.asarray(model.x0_cov)
        steps = model.horizon if args.steps is None else args.steps
    else:
        default_mean, x0_cov = np.zeros(n), np.zeros((n, n))
        steps = 200 if args.steps is None else args.steps
    x0 = default_mean if args.x0 is None else args.x0
    # finite games start the estimates at the prior mean; stationary ones at x0
    z_default = default_mean if isinstance(model, GameModel) else x0
    z1 = z_default if args.z0_1 is None else args.z0_1
    z2 = z_default if args.z0_2 is None else args.z0_2
    for name, v in (("--x0", x0), ("--z0-1", z1), ("--z0-2", z2)):
        if v.shape != (n,):
            raise DimensionMismatch(f"{name} has {v.shape[0]} entries but the model state has {n}")
    if args.samples < 1:
        _err("--samples must be at least 1")
        return EXIT_ERROR

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    finite = loaded.solver == "finite"
    if args.stationary_init:
        if finite:
            _err("--stationary-init needs a stationary solution")
            return EXIT_ERROR
        init = InitSpec(np.zeros(n), stationary=stationary_state_cov(model, loaded.K1, loaded.K2, loaded.filters))
    else:
        init = InitSpec(x0, x0_cov if finite else None, z1, z2)
    stats = monte_carlo(cl, init, args.samples, steps, base_seed=args.seed)
    write_mean_csv(stats, cl, out / "mean_trajectory.csv", terminal=finite)
    written = ["mean_trajectory.csv"]
    if args.mean_only or args.stationary_init:
        traj = mean_propagation(cl, x0, z1, z2, steps)
        write_trajectory_csv(traj, out / "mean_propagation.csv", terminal=finite)
        written.append("mean_propagation.csv")
    else:
        for k in range(min(args.samples, args.max_rollout_files)):
            traj = seeded_rollout(cl, x0, z1, z2, steps, args.seed, k, x0_cov if finite else None)
            name = f"rollout_{k:05d}.csv"
            write_trajectory_csv(traj, out / name, terminal=finite)
            written.append(name)

    if finite:
        empirical, se, label = stats.mean_total_cost, stats.total_cost_se, "mean total cost"
    else:
        empirical, se, label = stats.average_cost, stats.average_cost_se, "average stage cost"
    summary = {
        "solution": str(args.solution),
        "model_hash": loaded.doc["model"]["hash"],
        "solver": loaded.solver,
        "samples": args.samples,
        "steps": steps,
        "seed": args.seed,
        "x0": x0.tolist(),
        "z0_1": z1.tolist(),
        "z0_2": z2.tolist(),
        "statistic": label,
        "empirical": empirical,
        "standard_error": se,
        "analytic_J": loaded.J,
        "files": written,
        "version": __version__,
    }
    (out / "stats.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    print(f"empirical {label} = {empirical:.6g} +/- {se:.3g} (analytic J = {loaded.J:.6g}, N = {args.samples}, T = {steps})")
    print(f"wrote {len(written)} CSV file(s) and stats.json to {out}")
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace) -> int:
    if args.list or args.name is None:
        print("\n".join(SCENARIOS))
        return EXIT_OK if args.list else EXIT_ERROR
    text = scenario_text(args.name)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def scenario_text(name: str) -> str:
    return json.dumps(scenario_config(name), indent=2) + "\n"


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "scenario": cmd_scenario}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except AsymGameError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
