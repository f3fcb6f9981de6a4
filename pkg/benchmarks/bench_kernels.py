"""Time the compiled and numpy kernel backends on the same inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 1000 5000 20000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from survchallenge import _kernels


def make_inputs(n, d=8, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    eta = X @ rng.normal(scale=0.3, size=d)
    t = np.round(rng.exponential(size=n) / np.exp(eta), 3)  # rounding creates ties
    e = rng.random(n) < 0.7
    order = np.argsort(-t, kind="stable")
    return X[order], eta[order], t[order], e[order]


def bench(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000, 20000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    header = f"{'kernel':<20}{'n':>8}" + "".join(f"{b + ' (ms)':>16}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for n in args.sizes:
        X, eta, t, e = make_inputs(n)
        jobs = {
            "concordance": lambda b: _kernels.concordance_counts(eta, t, e, backend=b),
            "cox_breslow": lambda b: _kernels.cox_breslow(X, eta, t, e, backend=b),
        }
        for name, job in jobs.items():
            results = {b: job(b) for b in backends}
            ref = results[backends[0]]
            for b in backends[1:]:
                same = ref == results[b] if name == "concordance" else \
                    all(np.allclose(x, y, rtol=1e-9) for x, y in zip(ref, results[b]))
                if not same:
                    raise SystemExit(f"{name}: backends disagree at n={n}")
            times = {b: bench(lambda b=b: job(b), args.repeat) * 1e3 for b in backends}
            row = f"{name:<20}{n:>8}" + "".join(f"{times[b]:>16.2f}" for b in backends)
            if "cython" in times:
                row += f"{times['python'] / times['cython']:>9.1f}x"
            print(row)


if __name__ == "__main__":
    main()
