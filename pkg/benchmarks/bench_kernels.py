"""Compare the numba and numpy kernels on an ensemble-sized workload.

Usage::

    python benchmarks/bench_kernels.py [--nodes 2000] [--steps 4000] [--repeat 3]

Both paths are called directly (the env flag only picks the default), so
one process times both. The first numba call is excluded as compile time.
The script also checks the two paths agree to 1e-12.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from adrefocus import _accel


def rk4_workload(n, nsteps):
    rng = np.random.default_rng(0)
    delta = 2 * np.pi * rng.normal(0.0, 0.5e6, n)
    h = 50e-9
    t = np.arange(2 * nsteps + 1) * (0.5 * h) - 0.5 * nsteps * h
    rabi = 2 * np.pi * 284.4e3
    phase = 0.5 * (2 * np.pi * 40e9) * t * t
    bx = -rabi * np.cos(phase)
    by = -rabi * np.sin(phase)
    m0 = (np.ones(n), np.zeros(n), np.zeros(n))
    return delta, h, bx, by, m0


def run_rk4(kernel, work, nsteps, out_every):
    delta, h, bx, by, m0 = work
    mx, my, mz = (a.copy() for a in m0)
    out = np.empty((nsteps // out_every, 3, delta.size))
    kernel(mx, my, mz, delta, np.ones(delta.size), 100.0, h, nsteps, bx, by, out_every, out)
    return np.stack([mx, my, mz])


def run_simpson(kernel, n, npanels):
    delta = np.linspace(-2 * np.pi * 2e6, 2 * np.pi * 2e6, n)
    rabi = np.full(n, 2 * np.pi * 284.4e3)
    return kernel(rabi, 2 * np.pi * 40e9, delta, -50e-6, 50e-6, npanels)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = fn()
        times.append(time.perf_counter() - t0)
    return min(times), res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--panels", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if _accel.rk4_numba is None:
        raise SystemExit("numba is not importable; nothing to compare")

    work = rk4_workload(args.nodes, args.steps)
    out_every = max(1, args.steps // 10)
    # compile outside the timed region
    run_rk4(_accel.rk4_numba, rk4_workload(8, 16), 16, 4)
    run_simpson(_accel.simpson_phase_numba, 8, 8)

    rows = []
    t_np, r_np = best_of(lambda: run_rk4(_accel.rk4_numpy, work, args.steps, out_every), args.repeat)
    t_nb, r_nb = best_of(lambda: run_rk4(_accel.rk4_numba, work, args.steps, out_every), args.repeat)
    node_steps = args.nodes * args.steps
    rows.append(("rk4", t_np, t_nb, np.max(np.abs(r_np - r_nb)), node_steps))

    t_np, s_np = best_of(lambda: run_simpson(_accel.simpson_phase_numpy, args.nodes, args.panels),
                         args.repeat)
    t_nb, s_nb = best_of(lambda: run_simpson(_accel.simpson_phase_numba, args.nodes, args.panels),
                         args.repeat)
    rel = np.max(np.abs(s_np - s_nb) / np.abs(s_np))
    rows.append(("simpson", t_np, t_nb, rel, args.nodes * (args.panels + 1)))

    print(f"{'kernel':<9}{'numpy s':>10}{'numba s':>10}{'speedup':>9}{'ns/elem nb':>12}{'max diff':>11}")
    ok = True
    for name, a, b, diff, work_units in rows:
        print(f"{name:<9}{a:>10.3f}{b:>10.3f}{a / b:>9.1f}{1e9 * b / work_units:>12.2f}{diff:>11.1e}")
        ok &= diff < 1e-12
    if not ok:
        raise SystemExit("backends disagree beyond 1e-12")


if __name__ == "__main__":
    main()
