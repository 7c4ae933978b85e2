"""Timing comparison of the numba and numpy kernel backends.

Imports both backend modules directly, so the PORTWIN_NUMBA switch does
not matter here; use it to pick the backend of a real run.  Per-kernel
rows time one call on a single block of the given size (best of the
repeats, after warmup, so numba's first-call compilation never counts).
The end-to-end row steps a small open channel once per backend in a
subprocess, because the package selects its backend at import time.

Usage: python3 benchmarks/bench_kernels.py [--size 32] [--reps 7]
       [--steps 10] [--no-sim]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from portwin.kernels import numpy_backend

_SIM_CODE = """
import time
from portwin.engine import FlowParams, Simulation
from portwin.exchange import NbhRepository, partition_morton
from portwin.grid import GridConfig, build_hierarchy
from portwin.kernels import BACKEND
from portwin.solver import BoundaryConditions

cfg = GridConfig((0.0, 0.0, 0.0), (0.064, 0.032, 0.032), (4, 2, 2),
                 (2, 2, 2), (16, 16, 16), 1)
h = build_hierarchy(cfg, 1)
repo = NbhRepository()
repo.register_hierarchy(h, partition_morton(h, 1))
sim = Simulation(h, repo, BoundaryConditions(inflow_velocity=1e-3),
                 FlowParams(nu=1e-6, rho=1000.0), workers=0)
sim.run(2)  # warm the kernels before timing
t0 = time.perf_counter()
sim.run({steps})
dt = time.perf_counter() - t0
sim.close()
print(f"{{BACKEND}} {{dt:.6f}}")
"""


def make_inputs(n, rng):
    """One block's worth of representative arrays, shared by both backends."""
    gshape = (n + 2, n + 2, n + 2)
    ishape = (n, n, n)
    h = 1.0 / n
    fluid = (rng.random(ishape) > 0.1).astype(np.uint8)
    coeff = 1.0 / (h * h)
    inputs = dict(
        p=rng.standard_normal(gshape),
        rhs=rng.standard_normal(ishape),
        ax=np.full((n + 1, n, n), coeff),
        ay=np.full((n, n + 1, n), coeff),
        az=np.full((n, n, n + 1), coeff),
        diag=np.full(ishape, -6.0 * coeff),
        fluid=fluid,
        ux=rng.standard_normal(gshape),
        uy=rng.standard_normal(gshape),
        uz=rng.standard_normal(gshape),
        hn=rng.standard_normal(gshape),
        hprev=rng.standard_normal(gshape),
        mask=fluid_mask_ghosted(fluid),
        out_g=np.zeros(gshape),
        out_i=np.zeros(ishape),
        coarse=rng.standard_normal((n // 2, n // 2, n // 2)),
        out_c=np.zeros((n // 2, n // 2, n // 2)),
        out_fx=np.zeros((n // 2 + 1, n // 2, n // 2)),
        fluid_c=(rng.random((n // 2,) * 3) > 0.1).astype(np.uint8),
        flags=np.zeros(ishape, dtype=np.uint8),
        spheres=random_spheres(rng, n),
        h=h,
    )
    return inputs


def fluid_mask_ghosted(fluid):
    m = np.zeros(tuple(s + 2 for s in fluid.shape), dtype=np.uint8)
    m[1:-1, 1:-1, 1:-1] = fluid
    return m


def random_spheres(rng, n, count=40):
    r = rng.uniform(2.0 / n, 4.0 / n, count)
    c = rng.uniform(0.2, 0.8, (count, 3))
    return np.column_stack([c, r]).astype(np.float64)


def kernel_calls(v):
    """(name, argument tuple) per benched kernel; mutation is harmless."""
    h = v["h"]
    return [
        ("jacobi_sweep", (v["p"], v["rhs"], v["ax"], v["ay"], v["az"],
                          v["diag"], v["fluid"], 0.8, v["out_g"])),
        ("residual", (v["p"], v["rhs"], v["ax"], v["ay"], v["az"],
                      v["fluid"], v["out_i"])),
        ("divergence", (v["ux"], v["uy"], v["uz"], v["fluid"],
                        h, h, h, v["out_i"])),
        ("explicit_x", (v["ux"], v["uy"], v["uz"], h, h, h,
                        1e-6, 0.0, 1.0, v["out_g"])),
        ("explicit_y", (v["ux"], v["uy"], v["uz"], h, h, h,
                        1e-6, 0.0, 1.0, v["out_g"])),
        ("explicit_z", (v["ux"], v["uy"], v["uz"], h, h, h,
                        1e-6, 0.0, 1.0, v["out_g"])),
        ("predictor", (v["ux"], v["hn"], v["hprev"], 1e-3, v["mask"],
                       False, v["out_g"])),
        ("correct_x", (v["ux"], v["p"], v["mask"], 1e-3, h)),
        ("restrict_cell", (v["p"], 2, 2, 2, v["out_c"])),
        ("inject_add_cell", (v["coarse"], 2, 2, 2, v["fluid"], v["out_g"])),
        ("restrict_face_x", (v["ux"], 2, 2, 2, v["out_fx"])),
        ("voxelize_flags", (0.0, 0.0, 0.0, h, h, h, v["spheres"],
                            v["flags"])),
    ]


def best_of(fn, args, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run_sim(backend_flag, steps):
    env = dict(os.environ, PORTWIN_NUMBA=backend_flag)
    proc = subprocess.run([sys.executable, "-c", _SIM_CODE.format(steps=steps)],
                          env=env, capture_output=True, text=True, check=True)
    name, secs = proc.stdout.split()
    return name, float(secs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=32,
                    help="block edge in cells (default 32)")
    ap.add_argument("--reps", type=int, default=7,
                    help="timed repetitions per kernel (default 7)")
    ap.add_argument("--steps", type=int, default=10,
                    help="end-to-end comparison steps (default 10)")
    ap.add_argument("--no-sim", action="store_true",
                    help="skip the end-to-end channel comparison")
    args = ap.parse_args(argv)

    try:
        from portwin.kernels import numba_backend
    except ImportError as exc:
        print(f"numba backend unavailable: {exc}", file=sys.stderr)
        return 1

    v = make_inputs(args.size, np.random.default_rng(42))
    calls = kernel_calls(v)
    print(f"block {args.size}^3, best of {args.reps} after warmup, times in ms")
    print(f"{'kernel':<18} {'numpy':>9} {'numba':>9} {'speedup':>8}")
    for name, call_args in calls:
        rows = {}
        for label, mod in (("numpy", numpy_backend), ("numba", numba_backend)):
            fn = getattr(mod, name)
            fn(*call_args)
            fn(*call_args)
            rows[label] = best_of(fn, call_args, args.reps)
        ratio = rows["numpy"] / rows["numba"]
        print(f"{name:<18} {rows['numpy'] * 1e3:>9.3f} "
              f"{rows['numba'] * 1e3:>9.3f} {ratio:>7.1f}x")

    if not args.no_sim:
        print(f"\nend-to-end: 64x32x32 channel, {args.steps} steps per backend")
        for flag in ("0", "1"):
            name, secs = run_sim(flag, args.steps)
            print(f"{name:<18} {secs:>9.3f} s "
                  f"({args.steps / secs:>6.2f} steps/s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
