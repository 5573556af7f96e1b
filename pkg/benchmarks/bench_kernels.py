"""Compare the numba kernels with the pure-numpy fallback.

The switch is read at import time, so each path runs in its own child
process, one with ASYMGAME_DISABLE_NUMBA unset and one with it set to 1.
Timings are the best of ``--repeat`` runs after one warm-up call, so numba
compilation (or cache loading) is excluded.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --quick
"""

import argparse
import json
import os
import subprocess
import sys
import time


def best_of(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def child(repeat: int, quick: bool) -> None:
    import numpy as np

    from asymgame._jit import NUMBA_ENABLED
    from asymgame.finite import solve_finite
    from asymgame.scenarios import X0, scenario_model
    from asymgame.simulator import InitSpec, from_solution, monte_carlo
    from asymgame.stationary import value_iterate

    model = scenario_model("pe-baseline")
    sol = value_iterate(model)
    finite = model.with_horizon(50 if quick else 200, x0_mean=np.array(X0))
    cl = from_solution(sol)
    N, T = (20, 200) if quick else (200, 1000)
    init = InitSpec(np.array(X0))
    results = {
        "numba": NUMBA_ENABLED,
        "value_iterate": best_of(lambda: value_iterate(model), repeat),
        "solve_finite": best_of(lambda: solve_finite(finite), repeat),
        "monte_carlo": best_of(lambda: monte_carlo(cl, init, N, T, base_seed=1, threads=1), repeat),
        "J": sol.J,
    }
    print(json.dumps(results))


def run_path(disable: bool, repeat: int, quick: bool) -> dict:
    env = dict(os.environ)
    env.pop("ASYMGAME_DISABLE_NUMBA", None)
    if disable:
        env["ASYMGAME_DISABLE_NUMBA"] = "1"
    cmd = [sys.executable, __file__, "--child", "--repeat", str(repeat)] + (["--quick"] if quick else [])
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3, help="timed runs per kernel (best is reported)")
    parser.add_argument("--quick", action="store_true", help="smaller problem sizes")
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        child(args.repeat, args.quick)
        return

    fast = run_path(False, args.repeat, args.quick)
    slow = run_path(True, args.repeat, args.quick)
    if not fast["numba"]:
        print("numba is not importable; both runs used the numpy fallback")
    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for key in ("value_iterate", "solve_finite", "monte_carlo"):
        print(f"{key:<16}{fast[key]:>12.4f}{slow[key]:>12.4f}{slow[key] / fast[key]:>9.1f}x")
    print(f"baseline J: numba {fast['J']:.12e}, numpy {slow['J']:.12e}")


if __name__ == "__main__":
    main()
