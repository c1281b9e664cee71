"""Compare the compiled and pure-Python mode recursion kernels.

Usage::

    python benchmarks/bench_core.py [--modes 400] [--steps 2048] [--repeat 5]

Prints the best wall time per backend, the speed-up and whether both
backends produced bitwise identical states.
"""
import argparse
import timeit

import numpy as np

from hypspde import _core_py
from hypspde.model import mode_symbol_arrays, preset
from hypspde.spectral import transition_arrays

try:
    from hypspde import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None


def _inputs(K, B, dim, seed=0):
    spec = preset("plate_structural")
    _, a, b, _ = mode_symbol_arrays(spec, np.arange(1, K + 1))
    P, Q = transition_arrays(1e-4, a, b)
    L = np.linalg.cholesky(Q + 1e-300 * np.eye(2))
    coef = [np.ascontiguousarray(x) for x in (P[:, 0, 0], P[:, 0, 1], P[:, 1, 0], P[:, 1, 1], L[:, 0, 0], L[:, 1, 0], L[:, 1, 1])]
    z = np.random.default_rng(seed).standard_normal((K, B, dim))
    return coef, z


def _run(kernel, coef, z):
    K, B, _ = z.shape
    u, v = np.zeros(K), np.zeros(K)
    U, V = np.empty((K, B)), np.empty((K, B))
    kernel(*coef, u, v, z, U, V)
    return U, V


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--modes", type=int, default=400)
    ap.add_argument("--steps", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    coef, z = _inputs(args.modes, args.steps, 2)
    kernels = {"python": _core_py.advance_block}
    if _core is not None:
        kernels["compiled"] = _core.advance_block
    times, outs = {}, {}
    for name, k in kernels.items():
        outs[name] = _run(k, coef, z)
        times[name] = min(timeit.repeat(lambda: _run(k, coef, z), number=1, repeat=args.repeat))
        print(f"{name:9s} {times[name] * 1e3:9.2f} ms  ({args.modes} modes x {args.steps} steps)")
    if "compiled" in times:
        same = all(np.array_equal(a, b) for a, b in zip(outs["python"], outs["compiled"]))
        print(f"speed-up  {times['python'] / times['compiled']:.2f}x, bitwise equal: {same}")
    else:
        print("compiled extension not built")


if __name__ == "__main__":
    main()
