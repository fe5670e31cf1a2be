"""Compare the compiled residual kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --sizes 56,112,224 --runs 300
"""
import argparse
import statistics
import time

import numpy as np

from rflora_mad import _kernels, _pykernels


def timeit(fn, runs, warmup=20):
    for _ in range(warmup):
        fn()
    ts = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="56,112,224")
    ap.add_argument("--patch", type=int, default=14)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--runs", type=int, default=300)
    args = ap.parse_args(argv)

    try:
        from rflora_mad import _ckernels
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        _ckernels = None

    weights = _kernels.gaussian_weights(args.sigma)
    rng = np.random.default_rng(0)
    print(f"{'size':>6} {'kernel':<16} {'numpy us':>10} {'cython us':>10} {'speedup':>8}  identical")
    for s in (int(x) for x in args.sizes.split(",")):
        img = rng.random((s, s, 3))
        grey = _pykernels.to_grey(img)
        cases = {
            "to_grey": lambda k: k.to_grey(img),
            "gaussian_smooth": lambda k: k.gaussian_smooth(grey, weights),
            "laplacian_abs": lambda k: k.laplacian_abs(grey),
            "residual_stats": lambda k: k.residual_stats(img, weights, args.patch),
        }
        for name, fn in cases.items():
            t_py = timeit(lambda: fn(_pykernels), args.runs)
            if _ckernels is None:
                print(f"{s:>6} {name:<16} {t_py * 1e6:>10.1f} {'-':>10} {'-':>8}")
                continue
            t_c = timeit(lambda: fn(_ckernels), args.runs)
            a, b = fn(_pykernels), fn(_ckernels)
            same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
            print(f"{s:>6} {name:<16} {t_py * 1e6:>10.1f} {t_c * 1e6:>10.1f} {t_py / t_c:>7.1f}x  {same}")


if __name__ == "__main__":
    main()
