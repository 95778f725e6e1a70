"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--k 20] [--points 2000] [--repeat 3]

Both paths are timed in the same process through the explicit ``backend``
arguments, so FROBNET_DISABLE_NUMBA must be unset.  The first numba call
is made before timing to keep compilation out of the numbers.
"""
import argparse
import time

import numpy as np

from frobnet import _kernels
from frobnet.gallery import quadratic_2d_target
from frobnet.holder_compiler import compile_holder


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_forward(k, points, repeat):
    net = compile_holder(quadratic_2d_target(), k, max_weights=10**8).network
    plan = net.forward_plan()
    x = np.random.default_rng(0).random((points, 2))
    _kernels.forward(plan, x[:4], "numba")
    t_np, y_np = best_of(lambda: _kernels.forward(plan, x, "numpy"), repeat)
    t_nb, y_nb = best_of(lambda: _kernels.forward(plan, x, "numba"), repeat)
    same = np.array_equal(y_np, y_nb)
    return f"forward  k={k} nnz={net.nnz} n={points}", t_np, t_nb, same


def bench_pou(N, d, points, repeat):
    x = np.random.default_rng(1).random((points, d))
    _kernels.pou_scan_numba(x[:4], N)
    t_np, r_np = best_of(lambda: _kernels.pou_scan_numpy(x, N), repeat)
    t_nb, r_nb = best_of(lambda: _kernels.pou_scan_numba(x, N), repeat)
    return f"pou_scan N={N} d={d} n={points}", t_np, t_nb, tuple(r_np) == tuple(r_nb)


def bench_sgd(width, depth, points, repeat):
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (points, 4)) / 2
    y = np.prod(x, axis=1)
    order = np.arange(points, dtype=np.int64)

    def fresh():
        r = np.random.default_rng(3)
        dims = [4] + [width] * depth
        ws = [r.standard_normal((dims[i + 1], dims[i])) for i in range(depth)] + [r.standard_normal((1, width))]
        bs = [r.standard_normal(width) for _ in range(depth)]
        return ws, bs

    ws, bs = fresh()
    _kernels.sgd_epoch(ws, bs, x[:64], y[:64], order[:64], 32, 1e-2, 10.0, 0, "numba")

    def run(backend):
        ws, bs = fresh()
        return _kernels.sgd_epoch(ws, bs, x, y, order, 32, 1e-2, 10.0, 0, backend)

    t_np, l_np = best_of(lambda: run("numpy"), repeat)
    t_nb, l_nb = best_of(lambda: run("numba"), repeat)
    return f"sgd_epoch W={width} D={depth} n={points}", t_np, t_nb, abs(l_np - l_nb) <= 1e-9 * max(1.0, abs(l_np))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is unavailable or disabled; nothing to compare")

    rows = [
        bench_forward(args.k, args.points, args.repeat),
        bench_pou(8, 3, 20 * args.points, args.repeat),
        bench_sgd(32, 3, 4096, args.repeat),
    ]
    print(f"{'kernel':44} {'numpy s':>10} {'numba s':>10} {'speedup':>8}  agree")
    for name, t_np, t_nb, same in rows:
        print(f"{name:44} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}  {same}")


if __name__ == "__main__":
    main()
