"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import timeit

import numpy as np

from svmshape import _fallback
from svmshape.svm_core import KernelParams, gram_matrix

try:
    from svmshape import _core
except ImportError:
    _core = None


def smo_case(n, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.5, 0.5, (n, 3))
    y = np.where(np.linalg.norm(pts, axis=1) < 0.35, 1.0, -1.0)
    K = gram_matrix(pts, KernelParams("anisotropic", np.array([0.1, 0.15, 0.2])))
    Q = np.ascontiguousarray(y[:, None] * y[None, :] * K)

    def run(impl):
        impl(Q, y, 1.0, 1e-10, 1_000_000, np.zeros(n), -np.ones(n))
    return run


def mc_case(res):
    g = np.linspace(-0.5, 0.5, res)
    x, y, z = np.meshgrid(g, g, g, indexing="ij")
    vals = np.ascontiguousarray(0.4 - np.sqrt(x ** 2 + y ** 2 + z ** 2))

    def run(impl):
        impl(vals, 0.0)
    return run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args()
    cases = [(f"smo n={n}", smo_case(n), "smo") for n in (32, 128, 512)]
    cases += [(f"marching cubes {r}^3", mc_case(r), "mc_triangles") for r in (32, 64)]
    print(f"{'kernel':<22}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, run, attr in cases:
        slow = min(timeit.repeat(lambda: run(getattr(_fallback, attr)), number=1, repeat=args.repeats))
        if _core is None:
            print(f"{name:<22}{slow * 1e3:12.2f}{'-':>12}{'-':>10}")
            continue
        fast = min(timeit.repeat(lambda: run(getattr(_core, attr)), number=1, repeat=args.repeats))
        print(f"{name:<22}{slow * 1e3:12.2f}{fast * 1e3:12.2f}{slow / fast:9.1f}x")


if __name__ == "__main__":
    main()
