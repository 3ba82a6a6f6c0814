"""Compare the compiled kernels against the NumPy fallback.

The backend is chosen at import time from ``DEPTHLAB_BACKEND``, so this
script re-executes itself in a subprocess per backend and prints a
side-by-side table: raw Gaussian fill throughput, a full forward pass,
and a forward+backward gradient pass.

Usage: python3 bench/benchmark_backends.py [--d 100] [--L 1000] [--trials 20]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _measure(d: int, L: int, trials: int) -> dict:
    from depthlab._kernels import BACKEND, backend
    from depthlab.resnet_core import ModelSpec, ScalingRule, forward, realize_trial
    from depthlab.rng import derive_seed
    from depthlab.sensitivity import gradient_ratio
    from depthlab.stochastic_init import DistributionSpec

    model = ModelSpec(arch="res3", d=d, L=L, n_in=64, n_out=1)
    scheme = DistributionSpec("UniformScaled", d)
    rule = ScalingRule(beta=0.5)

    n_fill = 1 << 20
    backend.fill_gaussian(derive_seed(7, (0,)), n_fill)  # warm up
    start = time.perf_counter()
    reps = 8
    for i in range(reps):
        backend.fill_gaussian(derive_seed(7, (i + 1,)), n_fill)
    fill_ms = (time.perf_counter() - start) / reps * 1e3

    realize_trial(model, scheme, 11, 0)  # warm up caches/JIT paths
    start = time.perf_counter()
    for i in range(trials):
        trial = realize_trial(model, scheme, 11, i)
        forward(model, trial.tape, trial.proj, trial.x, rule)
    forward_ms = (time.perf_counter() - start) / trials * 1e3

    start = time.perf_counter()
    for i in range(trials):
        trial = realize_trial(model, scheme, 11, i)
        gradient_ratio(model, trial.tape, trial.proj, trial.x, trial.y_target, rule)
    grad_ms = (time.perf_counter() - start) / trials * 1e3

    return {
        "backend": BACKEND,
        f"gaussian fill ({n_fill} values)": fill_ms,
        f"forward pass (d={d}, L={L})": forward_ms,
        f"forward+gradient (d={d}, L={L})": grad_ms,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--d", type=int, default=100)
    parser.add_argument("--L", type=int, default=1000)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        print(json.dumps(_measure(args.d, args.L, args.trials)))
        return 0

    results = {}
    for name in ("cython", "numpy"):
        env = dict(os.environ, DEPTHLAB_BACKEND=name)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker",
             "--d", str(args.d), "--L", str(args.L), "--trials", str(args.trials)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"{name} backend failed:\n{proc.stderr}", file=sys.stderr)
            return 1
        results[name] = json.loads(proc.stdout)

    rows = [k for k in results["cython"] if k != "backend"]
    width = max(len(r) for r in rows)
    print(f"{'':{width}}  {'cython':>12}  {'numpy':>12}  {'speedup':>8}")
    for row in rows:
        c, n = results["cython"][row], results["numpy"][row]
        print(f"{row:{width}}  {c:>10.3f}ms  {n:>10.3f}ms  {n / c:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
