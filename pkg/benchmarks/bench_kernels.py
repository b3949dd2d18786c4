"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs on identical inputs under both backends; the table reports the
best wall time per call and the speed-up of the compiled version.
"""

import argparse
import json
import timeit

import numpy as np

from contactfield import _backend, force_opt
from contactfield.tactile import Wrench


def _cases(rng):
    n = 5000
    v = rng.normal(size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    cloud = rng.normal(size=(4096, 3))
    pts = rng.normal(size=(2048, 3)) * 0.05
    cpos = rng.normal(size=(64, 3)) * 0.05
    cvec = rng.normal(size=(64, 3))

    k = 40
    cn = np.tile([0.0, 0.0, 1.0], (k, 1))
    problem = force_opt.SocpProblem(
        rng.uniform(-0.05, 0.05, (k, 3)), cn, rng.uniform(0.1, 1.0, k),
        Wrench([0.3, -0.2, 5.0], [0.01, 0.02, 0.0]),
    )
    return {
        f"cone_project_batch (n={n})": lambda: _backend.kernels.cone_project_batch(v, nrm),
        "farthest_point_sample (4096 -> 512)": lambda: _backend.kernels.farthest_point_sample(cloud, 512, 0),
        "kernel_weighted_mean (2048 x 64)": lambda: _backend.kernels.kernel_weighted_mean(pts, cpos, cvec, 50.0),
        f"force_opt.solve ({k} candidates)": lambda: force_opt.solve(problem),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repetitions per case (best is kept)")
    ap.add_argument("--json", metavar="PATH", help="also write the results as JSON")
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled extension not built; only the fallback is timed")
    cases = _cases(np.random.default_rng(0))
    results = {}
    for name, fn in cases.items():
        row = {}
        for b in backends:
            _backend.use(b)
            fn()  # warm-up
            row[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        results[name] = row
    _backend.use(backends[0])

    width = max(len(k) for k in results)
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>12}" for b in backends) + "     speed-up")
    for name, row in results.items():
        cells = "  ".join(f"{row[b] * 1e3:10.3f}ms" for b in backends)
        ratio = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(f"{name:<{width}}  {cells}  {ratio:9.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
