"""Compare the compiled and pure-Python planar RK4 kernels.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R]

Prints wall time per backend, steps per second, the speedup, and the largest
difference between the two final states (expected to be zero).
"""
import argparse
import time

from singpert import kernels


CASES = {
    "saturated": (kernels.SATURATED, (0.4,), 1.0, 1.0),
    "cubic": (kernels.CUBIC, (0.004, 2.0, 2.0, 1.0, 1.0), 2.0, -1.0),
}


def bench(backend, model, params, x0, z0, steps, repeat):
    dt = 1e-3
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = kernels.rk4_planar(model, params, x0, z0, steps * dt, dt, steps, 1e8, backend=backend)
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled_backend is None:
        print("compiled backend unavailable; only the Python kernel can run")
    for name, (model, params, x0, z0) in CASES.items():
        results = {}
        for b in kernels.backends():
            results[b.BACKEND] = bench(b, model, params, x0, z0, args.steps, args.repeat)
        for label, (t, _) in results.items():
            print(f"{name:10s} {label:7s} {t:9.4f} s  {args.steps / t:14,.0f} steps/s")
        if len(results) == 2:
            (tc, oc), (tp, op) = results["cython"], results["python"]
            diff = max(abs(oc[1][-1] - op[1][-1]), abs(oc[2][-1] - op[2][-1]))
            print(f"{name:10s} speedup {tp / tc:8.1f}x  max final-state difference {diff:.3g}")


if __name__ == "__main__":
    main()
