"""Compare the compiled lattice-sum core with the numpy fallback.

Times the slab kernels on random displacements and a full periodic
operator assembly with each backend, and checks that the results agree.

    python3 benchmarks/bench_core.py [--n 20000] [--N 64] [--M 16]
"""
import argparse
import time

import numpy as np

from perheat import _backend, _pycore
from perheat.causal import TimeGrid
from perheat.geometry import ReferenceShape, build_grid
from perheat.kernel import LatticeSumConfig, PeriodicityCell
from perheat.potentials import assemble


def best_of(fn, repeat=3):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def with_core(core, fn):
    saved = _backend.core
    _backend.core = core
    try:
        return fn()
    finally:
        _backend.core = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000, help="displacements per kernel call")
    ap.add_argument("--N", type=int, default=64, help="boundary nodes for the assembly run")
    ap.add_argument("--M", type=int, default=16, help="time steps for the assembly run")
    args = ap.parse_args()
    if _backend.compiled is None:
        print("compiled core not built; only the numpy fallback is available")
        return
    rng = np.random.default_rng(0)
    dx = rng.uniform(-0.5, 0.5, args.n)
    dy = rng.uniform(-0.5, 0.5, args.n)
    cases = [
        ("slab_direct", lambda c: c.slab_direct(dx, dy, 0.0, 0.05, 1.0, 1.0, 3, False)),
        ("slab_spectral", lambda c: c.slab_spectral(dx, dy, 0.05, 0.2, 1.0, 1.0, 12)),
        ("e1", lambda c: c.e1(np.abs(dx) * 10 + 1e-3)),
    ]
    print(f"{'case':<22}{'compiled [s]':>14}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases:
        tc, rc = best_of(lambda: fn(_backend.compiled))
        tp, rp = best_of(lambda: fn(_pycore))
        diff = float(np.max(np.abs(np.asarray(rc) - np.asarray(rp))))
        print(f"{name:<22}{tc:>14.4f}{tp:>12.4f}{tp / tc:>10.1f}{diff:>12.2e}")

    cell = PeriodicityCell((1.0, 1.0))
    cfg = LatticeSumConfig()
    grid = build_grid(ReferenceShape.circle(), None, args.N, cell)
    tg = TimeGrid(0.5, args.M)

    def run():
        return assemble("Vq", grid, tg, cell, cfg).blocks

    tc, bc = best_of(lambda: with_core(_backend.compiled, run), repeat=1)
    tp, bp = best_of(lambda: with_core(_pycore, run), repeat=1)
    diff = float(np.max(np.abs(bc - bp)))
    label = f"assemble Vq {args.N}x{args.M}"
    print(f"{label:<22}{tc:>14.4f}{tp:>12.4f}{tp / tc:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
