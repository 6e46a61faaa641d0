"""Compare the numba and numpy backends of the hot kernels.

Usage:  python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once (so compilation is excluded) and then timed
with the best of N runs.  Results from both backends are also checked for
agreement.
"""

import argparse
import math
import time

import numpy as np

from fgawave.decompose import MeshSpec, build_phase_mesh, init_atoms, split_branches
from fgawave.flow import FlowSettings, propagate
from fgawave.kernels import gaussian_field, leapfrog, window_sum
from fgawave.scene import WaveProblem


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def flat(result):
    parts = result if isinstance(result, tuple) else (result,)
    return np.concatenate([np.ravel(x) for x in parts])


def cases():
    rng = np.random.default_rng(0)
    eps = 1 / 128
    theta = 6 * math.sqrt(eps)

    u = rng.standard_normal((256, 256)) + 1j * rng.standard_normal((256, 256))
    q = rng.uniform(0.2, 0.8, (2000, 2))
    p = rng.uniform(-1, 1, (2000, 2))
    y0, dy = np.zeros(2), np.full(2, 1 / 256)
    yield "window_sum 2D", lambda b: window_sum(u, y0, dy, q, p, eps, theta, b)

    n = 5000
    coef = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    Q = rng.uniform(0, 1, (n, 2))
    P = rng.uniform(-1, 1, (n, 2))
    yield "gaussian_field 2D", lambda b: gaussian_field(coef, Q, P, np.zeros(2), np.full(2, 1 / 255),
                                                        (256, 256), eps, theta, b)

    m = 4097
    u0 = np.sin(np.linspace(0, 40, m)) + 0j
    u0[[0, -1]] = 0
    lam2 = np.full(m, 0.2)
    yield "leapfrog 1D", lambda b: leapfrog(u0, u0, lam2, 2000, b)

    pr = WaveProblem.from_strings(d=1, epsilon=eps, lo=[0], hi=[2], speed="x1^2", S0="x1",
                                  A0=("exp(-100*(x1-0.5)^2)", "0"), B0=("0", "-x1^2*exp(-100*(x1-0.5)^2)"))
    spec = MeshSpec(1, 1 / 128, 1 / 128, 1 / 128, 128, 45, 0.0, theta)
    atoms = init_atoms(split_branches(pr), build_phase_mesh(pr, spec), spec, eps)
    settings = FlowSettings(2 ** -9, 0.5)
    yield "propagate 1D", lambda b: propagate(atoms, settings, pr.speed, b).state


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'kernel':<20}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases():
        out = {b: fn(b) for b in ("numba", "numpy")}
        a, b = flat(out["numba"]), flat(out["numpy"])
        diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
        tn = best_of(lambda: fn("numba"), args.repeat)
        tp = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:<20}{tn:>12.4f}{tp:>12.4f}{tp / tn:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
