"""Compare the numba kernels with their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from multistop import _kernels
from multistop.exchange import MarketParams, new_reward_phi, ProductLattice
from multistop.tree import random_tree


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_tree(repeat):
    rng = np.random.default_rng(0)
    tree = random_tree(10, rng, branching=3)
    reward = rng.uniform(size=tree.n_nodes)
    args = (tree.first_child, tree.n_children, tree.prob, reward, tree.level_offsets, 0)
    _kernels.backward_induction_nb(*args)  # compile
    t_np, a = best_of(lambda: _kernels.backward_induction_np(*args), repeat)
    t_nb, b = best_of(lambda: _kernels.backward_induction_nb(*args), repeat)
    return f"tree backward pass ({tree.n_nodes} nodes)", t_np, t_nb, np.array_equal(a, b)


def bench_lattice(repeat, n=400):
    params = MarketParams(1.0, 1.0, 0.2, 0.2, 1.0)
    lat = ProductLattice(params, n)
    phis = []
    for k in range(n + 1):
        x1, x2 = lat.prices(k)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        phis.append(new_reward_phi(lat.time(k), X1, X2, params))

    def run(step):
        v = phis[n]
        for k in range(n - 1, -1, -1):
            _, v, _ = step(v, phis[k], lat.q1, lat.q2, 1e-9)
        return v

    run(_kernels.lattice_step_nb)  # compile
    t_np, a = best_of(lambda: run(_kernels.lattice_step_np), repeat)
    t_nb, b = best_of(lambda: run(_kernels.lattice_step_nb), repeat)
    return f"lattice backward sweep (n={n})", t_np, t_nb, np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba not importable")
    print(f"{'case':42s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}  identical")
    for name, t_np, t_nb, same in (bench_tree(args.repeat), bench_lattice(args.repeat)):
        print(f"{name:42s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}  {same}")


if __name__ == "__main__":
    main()
