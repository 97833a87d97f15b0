"""Compare the compiled eigensolver/Cholesky kernels with the numpy fallback.

Run as ``python benchmarks/kernel_benchmark.py``.  The pure backend is loaded
by re-importing the kernel package in a subprocess with RIEMRES_FORCE_PURE=1,
so both backends are measured from a cold, honest import.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time

import numpy as np

SIZES = [(5, 500), (10, 200), (20, 50)]
REPEATS = 3


def _bench_current_backend() -> dict:
    from riemres import _kernels

    rng = np.random.default_rng(0)
    results = {"backend": _kernels.BACKEND, "jacobi": {}, "cholesky": {}}
    for n, batch in SIZES:
        a = rng.standard_normal((batch, n, n))
        sym = (a + np.swapaxes(a, -1, -2)) / 2
        spd = np.einsum("bij,bkj->bik", a, a) + np.eye(n) * 1e-6
        best = float("inf")
        for _ in range(REPEATS):
            t0 = time.perf_counter()
            w, q = _kernels.jacobi_eigh(sym)
            best = min(best, time.perf_counter() - t0)
        assert w is not None
        results["jacobi"][f"{n}x{n}x{batch}"] = best
        best = float("inf")
        for _ in range(REPEATS):
            t0 = time.perf_counter()
            for mat in spd:  # the kernel factors one matrix at a time
                assert _kernels.cholesky_lower(mat) is not None
            best = min(best, time.perf_counter() - t0)
        results["cholesky"][f"{n}x{n}x{batch}"] = best
    return results


def main() -> int:
    if os.environ.get("_RIEMRES_BENCH_CHILD"):
        print(json.dumps(_bench_current_backend()))
        return 0

    runs = {}
    for force_pure in ("0", "1"):
        env = dict(os.environ, RIEMRES_FORCE_PURE=force_pure,
                   _RIEMRES_BENCH_CHILD="1")
        out = subprocess.run([sys.executable, os.path.abspath(__file__)],
                             env=env, capture_output=True, text=True, check=True)
        result = json.loads(out.stdout.strip().splitlines()[-1])
        runs[result["backend"]] = result

    if set(runs) != {"compiled", "pure"}:
        print(f"only {sorted(runs)} available; install the compiled extension "
              "to compare", file=sys.stderr)
    for op in ("jacobi", "cholesky"):
        print(f"\n{op} (seconds, best of {REPEATS}):")
        print(f"  {'case':>14} {'pure':>10} {'compiled':>10} {'speedup':>8}")
        cases = runs[next(iter(runs))][op]
        for case in cases:
            pure = runs.get("pure", {}).get(op, {}).get(case)
            fast = runs.get("compiled", {}).get(op, {}).get(case)
            speed = f"{pure / fast:7.1f}x" if pure and fast else "     n/a"
            fmt = lambda v: f"{v:10.4f}" if v is not None else "       n/a"
            print(f"  {case:>14} {fmt(pure)} {fmt(fast)} {speed}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
