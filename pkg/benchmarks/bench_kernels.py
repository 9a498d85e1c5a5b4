"""Benchmark the compiled integration core against the Python fallback.

Run:  python benchmarks/bench_kernels.py
"""

import importlib
import os
import sys
import time

import numpy as np


def _load(pure: bool):
    os.environ["SEITPHR_PURE_PYTHON"] = "1" if pure else ""
    for name in list(sys.modules):
        if name.startswith("seitphr"):
            del sys.modules[name]
    import seitphr._kernel as k
    importlib.reload(k)
    return k


def _bench(kernel, n_repeat=5):
    from seitphr.parameters import default_parameters, initial_state

    p = default_parameters()
    x0 = initial_state(p).flat()
    weeks = 104
    dt = 0.5
    n_steps = round(weeks * 7 / dt)
    betas = np.repeat(p.beta0.reshape(1, -1), weeks, axis=0)
    thetas = np.zeros((weeks, 3))
    ctrl = np.minimum(np.arange(n_steps) // round(7 / dt),
                      weeks - 1).astype(np.intc)
    args = (x0, betas, thetas, ctrl, dt, *p.kernel_args(), 1e-9, 1e-9)

    kernel.integrate(*args)  # warm up
    best = np.inf
    for _ in range(n_repeat):
        t0 = time.perf_counter()
        kernel.integrate(*args)
        best = min(best, time.perf_counter() - t0)
    return best, n_steps


def main():
    results = {}
    for pure in (False, True):
        k = _load(pure)
        best, n_steps = _bench(k, n_repeat=3 if pure else 10)
        results[k.backend] = best
        print(f"{k.backend:>9}: {best * 1e3:8.2f} ms "
              f"for a 104-week run ({n_steps} RK4 steps)")
    if "compiled" in results and "python" in results:
        print(f"  speedup: {results['python'] / results['compiled']:.0f}x")
    elif "compiled" not in results:
        print("  (compiled core unavailable; only the fallback was timed)")


if __name__ == "__main__":
    main()
