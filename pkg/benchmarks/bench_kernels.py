"""Time the numba kernels against their pure-numpy fallbacks.

    python benchmarks/bench_kernels.py [--sizes 64 256 1024] [--repeat 3]

Both backends are importable regardless of SPECFORMER_DISABLE_NUMBA, so one
process measures both. The first numba call (compilation or cache load) is
excluded from the timings. Results must agree to 1e-10 or the script exits 1.
"""

import argparse
import sys
import time

import numpy as np

from specformer import kernels
from specformer.graph import grid_graph, normalized_laplacian


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def eig_case(backend, lap):
    tri = getattr(kernels, f"tridiagonalize_{backend}")
    ql = getattr(kernels, f"ql_implicit_{backend}")

    def run():
        d, e, q = tri(lap)
        zt = np.ascontiguousarray(q.T)
        if ql(d, e, zt, 64 * lap.shape[0]) != -1:
            raise RuntimeError("QL did not converge")
        return np.sort(d)

    return run


def conv_case(backend, args, grad):
    fwd = getattr(kernels, f"mlp_conv_forward_{backend}")
    bwd = getattr(kernels, f"mlp_conv_backward_{backend}")

    def run():
        out = fwd(*args)
        return out, bwd(grad, *args)[0]

    return run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)

    # warm up numba so compilation is not timed
    small = normalized_laplacian(grid_graph(3, 3))
    eig_case("numba", small)()
    warm = (rng.standard_normal((1, 4, 4)), rng.standard_normal((2, 4)), rng.standard_normal(4),
            rng.standard_normal((4, 3)), rng.standard_normal(3), rng.standard_normal((4, 3)))
    conv_case("numba", warm, rng.standard_normal((4, 3)))()

    print(f"{'kernel':<10} {'n':>6} {'numba s':>10} {'numpy s':>10} {'speedup':>8}")
    ok = True
    for n in args.sizes:
        side = int(round(np.sqrt(n)))
        lap = normalized_laplacian(grid_graph(side, n // side))
        t_nb, lam_nb = best_of(eig_case("numba", lap), args.repeat)
        t_np, lam_np = best_of(eig_case("numpy", lap), args.repeat)
        ok &= np.allclose(lam_nb, lam_np, rtol=0, atol=1e-10)
        print(f"{'eig':<10} {lap.shape[0]:>6} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.2f}")

        m, h, d = 2, 6, 8
        conv_args = (rng.standard_normal((m, n, n)), rng.standard_normal((m + 1, h)), rng.standard_normal(h),
                     rng.standard_normal((h, d)), rng.standard_normal(d), rng.standard_normal((n, d)))
        grad = rng.standard_normal((n, d))
        t_nb, (o_nb, g_nb) = best_of(conv_case("numba", conv_args, grad), args.repeat)
        t_np, (o_np, g_np) = best_of(conv_case("numpy", conv_args, grad), args.repeat)
        ok &= np.allclose(o_nb, o_np, rtol=0, atol=1e-10) and np.allclose(g_nb, g_np, rtol=0, atol=1e-10)
        print(f"{'mlp-conv':<10} {n:>6} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.2f}")

    if not ok:
        print("backends disagree", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
