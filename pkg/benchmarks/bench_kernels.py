"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each kernel gets identical inputs on both backends; the script also checks
the outputs agree before reporting the speedup.
"""

import argparse
import time

import numpy as np

from fluidq import _kernels_py as py
from fluidq.ctmc import random_reversible_model

try:
    from fluidq import _kernels as cy
except ImportError:
    cy = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _ctmc_case(k):
    rng = np.random.default_rng(1)
    q = random_reversible_model(8, rng).q_matrix.entries
    exit_rates = -np.diag(q).copy()
    jumps = q.copy()
    np.fill_diagonal(jumps, 0.0)
    cdf = np.ascontiguousarray(np.cumsum(jumps, axis=1) / exit_rates[:, None])
    cdf[:, -1] = 1.0
    e, u = rng.standard_exponential(k), rng.random(k)

    def run(mod):
        st = np.empty(k, dtype=np.intp)
        du = np.empty(k)
        mod.ctmc_path(cdf, exit_rates, 0, e, u, st, du)
        return st, du
    return run


def _replay_case(k):
    rng = np.random.default_rng(2)
    d = rng.exponential(1.0, k)
    r = rng.normal(0.2, 1.0, k)
    cuts = np.linspace(0.0, d.sum(), 20, endpoint=False)

    def run(mod):
        acc = [np.zeros(21) for _ in range(6)]
        b = mod.replay(d, r, 2.0, 1.0, cuts, *acc)
        return b, acc
    return run


def _pf_case(n):
    # lazy walk on a path: a small spectral gap means many iterations
    m = np.zeros((n, n))
    idx = np.arange(n - 1)
    m[idx, idx + 1] = m[idx + 1, idx] = 0.25
    m[np.arange(n), np.arange(n)] = 1.0 - m.sum(axis=1)
    m *= np.random.default_rng(3).uniform(0.9, 1.1, n)[:, None]

    def run(mod):
        return mod.pf_eigen(m, np.ones(n), 1e-12, 100_000)[0]
    return run


def _same(a, b):
    if isinstance(a, (tuple, list)):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return abs(a - b) <= 1e-12 * abs(a)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--size", type=int, default=200_000, help="events per path kernel")
    args = parser.parse_args()
    if cy is None:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")
    cases = [
        ("ctmc_path", _ctmc_case(args.size)),
        ("replay", _replay_case(args.size)),
        ("pf_eigen n=60", _pf_case(60)),
    ]
    print(f"{'kernel':<16}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}  match")
    for name, run in cases:
        tp, op = _best(lambda: run(py), args.repeat)
        tc, oc = _best(lambda: run(cy), args.repeat)
        print(f"{name:<16}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x  {_same(op, oc)}")


if __name__ == "__main__":
    main()
