"""Time one semi-Lagrangian step for the compiled and NumPy kernels.

    python3 benchmarks/bench_step.py [--sizes 256 512 1024] [--steps 200] [--repeat 5]

Each row is the best of ``repeat`` runs of ``steps`` steps, divided by ``steps``.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from hjdisc import kernels
from hjdisc.grid import GridFn, PeriodicGrid, sup_distance
from hjdisc.model import ContactModel, DiscountSpec, HamiltonianSpec
from hjdisc.scenarios import get_scenario
from hjdisc.semigroup import Direction, SemigroupConfig, evolve

MODELS = {
    "pendulum-sine (closed form)": get_scenario("pendulum-sine").model(1.0),
    "tabulated pendulum": ContactModel(
        HamiltonianSpec.tabulate(lambda x, p: 0.5 * p**2 + np.cos(x) - 1.0), DiscountSpec.sine(), 1.0
    ),
}


def per_step(model, phi, cfg, steps, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out, _ = evolve(model, phi, steps * cfg.dt, Direction.BACKWARD, cfg)
        best = min(best, time.perf_counter() - t)
    return best / steps, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024, 2048])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(backends)}; threads: {kernels.thread_count()}")
    print(f"{'model':30s} {'method':7s} {'n':>6s} " + " ".join(f"{b + ' us':>11s}" for b in backends)
          + f" {'speedup':>8s} {'max diff':>9s}")
    for label, model in MODELS.items():
        for method in ("exact", "golden"):
            for n in args.sizes:
                phi = GridFn.from_function(PeriodicGrid(n), lambda x: np.sin(x) + 0.3 * np.cos(3 * x))
                times, outs = {}, {}
                for b in backends:
                    cfg = SemigroupConfig(method=method, backend=b)
                    evolve(model, phi, cfg.dt, Direction.BACKWARD, cfg)  # build tables once
                    times[b], outs[b] = per_step(model, phi, cfg, args.steps, args.repeat)
                speed = times["numpy"] / times["cython"] if "cython" in times else 1.0
                diff = sup_distance(outs["numpy"], outs["cython"]) if "cython" in outs else 0.0
                print(f"{label:30s} {method:7s} {n:6d} " + " ".join(f"{1e6 * times[b]:11.1f}" for b in backends)
                      + f" {speed:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()
