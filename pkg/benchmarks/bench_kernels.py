"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

The numba timings exclude compilation (one warm-up call first). Outputs of
each pair are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from symvae import kernels, tabular_oracle as to


def _cases(rng):
    nx, nz = 16, 8
    p = rng.dirichlet(np.ones(nx), size=nz)
    q = rng.dirichlet(np.ones(nz), size=nx)
    p_cdf, q_cdf = kernels.cdf_rows(p), kernels.cdf_rows(q)
    n = 100_000
    probs = rng.dirichlet(np.ones(12), size=200_000)
    yield "draw_rows", (kernels.cdf_rows(probs), rng.random(len(probs)))
    yield "tabular_chain", (p_cdf, q_cdf, 0, 0, rng.random(n + 1000), rng.random(n + 1000), 1000, 1)
    sites = 6
    p_on = rng.random((nz, sites))
    q2 = kernels.cdf_rows(rng.dirichlet(np.ones(nz), size=2**sites))
    hidden = np.array([True, False, True, True, False, True])
    m = 50_000
    yield "clamped_chain", (p_on, q2, np.zeros(sites, dtype=np.int64), hidden, 0,
                            rng.random((m + 500, sites)), rng.random(m + 500), 500)
    spec = to.random_spec(rng, 16, 16, 3, 3)
    su, sv = to.default_steps(spec)
    yield "game_ascent", (spec.phi, spec.psi, spec.log_base_p, spec.log_base_q,
                          rng.standard_normal(3), rng.standard_normal(3), su, sv, 1e-9, 200_000, False, 1000)


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-7, atol=1e-9)


def _time(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<15}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}  agree")
    for name, call in _cases(rng):
        f_np, f_nb = kernels.IMPLEMENTATIONS[name]
        out_nb = f_nb(*call)
        out_np = f_np(*call)
        t_np = _time(f_np, call, args.repeat)
        t_nb = _time(f_nb, call, args.repeat)
        print(f"{name:<15}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}  {_agree(out_np, out_nb)}")


if __name__ == "__main__":
    main()
