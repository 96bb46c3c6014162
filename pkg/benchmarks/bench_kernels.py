"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both implementations are imported directly, so ``JANUS_KERNELS`` does not
matter here. Numba compile time is excluded by a warm-up call.
"""
import argparse
import timeit

import numpy as np

from janus.evalkit import InjectionSpec, inject_anomalies
from janus.graph import transition_matrix
from janus.kernels import _numba, _numpy


def cases(rng):
    a, b = rng.standard_normal((500, 32)), rng.standard_normal((500, 32))
    d = _numpy.pairwise_dist(a, b)
    g = rng.standard_normal(d.shape)
    big = inject_anomalies(InjectionSpec(n=5000, p=0.002, seed=1))
    t = transition_matrix(big)
    csr = (t.indptr.astype(np.int64), t.indices.astype(np.int64), t.data)
    x = rng.standard_normal((big.n, 32))
    return {
        "pairwise_dist 500x500x32": (a, b),
        "pairwise_dist_backward 500x500x32": (a, b, d, g),
        "csr_matmul n=5000 k=32": csr + (x,),
        "rw_diagonal n=5000 steps=8": csr + (8,),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    fn_name = lambda label: label.split()[0]
    print(f"{'kernel':38s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, argv in cases(rng).items():
        name = fn_name(label)
        f_np, f_nb = getattr(_numpy, name), getattr(_numba, name)
        f_nb(*argv)  # compile
        out_np, out_nb = f_np(*argv), f_nb(*argv)
        for u, v in zip(np.atleast_1d(out_np) if not isinstance(out_np, tuple) else out_np,
                        np.atleast_1d(out_nb) if not isinstance(out_nb, tuple) else out_nb):
            np.testing.assert_allclose(v, u, rtol=1e-9, atol=1e-12)
        t_np = min(timeit.repeat(lambda: f_np(*argv), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*argv), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:38s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
