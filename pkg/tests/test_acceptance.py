"""Acceptance criteria, one test each, at the stated tolerances."""
import math
import time

import numpy as np
import pytest
from scipy import integrate

from multistop.exchange import (
    MarketParams, american_call_lattice, bs_call_C1, bs_put_P2, hold_to_maturity_policy,
    margrabe, mc_policy_value, new_reward_phi, optimal_pair_policy, price_exchange_double,
)
from multistop.verify import run_matrix

DEPTHS = (2, 3, 4)
SEEDS = range(100)
ATM = MarketParams(1.0, 1.0, 0.2, 0.2, 1.0)


@pytest.fixture(scope="module")
def matrix():
    t0 = time.perf_counter()
    reports = {d: run_matrix(SEEDS, d, n_pairs=1000) for d in DEPTHS}
    return reports, time.perf_counter() - t0


@pytest.fixture(scope="module")
def lattice_runs():
    t0 = time.perf_counter()
    s200 = price_exchange_double(ATM, 200)
    elapsed = time.perf_counter() - t0
    v = {n: price_exchange_double(ATM, n).v0 for n in (25, 50, 100)}
    v[200] = s200.v0
    return s200, v, elapsed


def _worst(reports, key):
    return max(r[key] for r in reports.values())


def test_criterion_1_reduction_equals_double_oracle(matrix, record_property):
    reports, elapsed = matrix
    gap = _worst(reports, "max_abs_gap_theorem3")
    record_property("acceptance", f"1 reduced value vs pair oracle: max gap {gap:.3g} "
                                  f"(<= 1e-12), {elapsed:.1f} s (<= 60 s)")
    assert gap <= 1e-12
    assert elapsed <= 60.0


def test_criterion_2_snell_optimality(matrix, record_property):
    reports, _ = matrix
    gap = _worst(reports, "max_abs_gap_snell")
    rel = _worst(reports, "max_rel_gap_optimal_stop")
    record_property("acceptance", f"2 Snell vs single oracle: max gap {gap:.3g} (<= 1e-12), "
                                  f"optimal rule rel gap {rel:.3g} (<= 1e-10)")
    assert gap <= 1e-12
    assert rel <= 1e-10


def test_criterion_3_pair_construction(matrix, record_property):
    reports, _ = matrix
    rel = _worst(reports, "max_rel_gap_pair")
    excess = _worst(reports, "max_step1_excess")
    record_property("acceptance", f"3 optimal pair rel gap {rel:.3g} (<= 1e-10), "
                                  f"step-1 excess {excess:.3g} over 1000 pairs/seed (<= 1e-12)")
    assert rel <= 1e-10
    assert excess <= 1e-12


def test_criterion_4_supermartingale_and_lambda(matrix, record_property):
    reports, _ = matrix
    sm = _worst(reports, "max_supermartingale_violation")
    mono = all(r["lambda_monotone"] for r in reports.values())
    record_property("acceptance", f"4 supermartingale violation {sm:.3g} (<= 1e-12), "
                                  f"lambda ordering holds: {mono}")
    assert sm <= 1e-12
    assert mono


def test_criterion_5_black_scholes_subproblems(record_property):
    c = bs_call_C1(0.0, 1.0, 0.2, 1.0)
    # lognormal integration oracle
    sd = 0.2
    lo = 0.5 * sd
    quad = integrate.quad(
        lambda w: (math.exp(-0.5 * sd * sd + sd * w) - 1.0) * math.exp(-0.5 * w * w)
        / math.sqrt(2.0 * math.pi), lo, lo + 40.0, epsabs=1e-15, epsrel=1e-13)[0]
    rng = np.random.default_rng(2024)
    z = rng.uniform(0.2, 5.0, 100)
    sig = rng.uniform(0.05, 1.0, 100)
    tau = rng.uniform(0.01, 3.0, 100)
    parity = float(np.max(np.abs(bs_call_C1(0.0, z, sig, tau) - bs_put_P2(0.0, z, sig, tau)
                                 - (z - 1.0))))
    am = american_call_lattice(1.0, 1.0, 0.2, 1.0, 400)
    rel_am = abs(am - c) / c
    record_property("acceptance", f"5 C1 = {c:.10f} (0.0796557 +- 1e-6, quad {quad:.10f}); "
                                  f"parity {parity:.3g} (<= 1e-12); American vs European rel "
                                  f"{rel_am:.3g} (<= 2e-3)")
    assert abs(c - 0.0796557) <= 1e-6
    assert abs(quad - 0.0796557) <= 1e-6
    assert parity <= 1e-12
    assert rel_am <= 2e-3


def test_criterion_6_exchange_sandwich(lattice_runs, record_property):
    s200, v, elapsed = lattice_runs
    v0 = v[200]
    phi0 = new_reward_phi(0.0, 1.0, 1.0, ATM)
    homog = abs(price_exchange_double(ATM.scaled(2.0), 200).v0 - 2.0 * v0)
    conv = (abs(v[100] - v[200]), abs(v[25] - v[50]))
    record_property("acceptance", f"6 v(0) = {v0:.8f} in [0.112463, 1], >= phi0 {phi0:.7f}; "
                                  f"homogeneity {homog:.3g}; |v100-v200| {conv[0]:.3g} < "
                                  f"|v25-v50| {conv[1]:.3g}; {elapsed:.2f} s")
    assert 0.112463 <= v0 <= 1.0
    assert v0 >= phi0
    assert homog <= 1e-12
    assert conv[0] < conv[1]
    assert elapsed <= 30.0


def test_criterion_7_monte_carlo(lattice_runs, record_property):
    s200, v, _ = lattice_runs
    est, se = mc_policy_value(ATM, optimal_pair_policy(s200), 100_000, seed=12345, threads=4)
    again = mc_policy_value(ATM, optimal_pair_policy(s200), 100_000, seed=12345, threads=1)
    band = max(3.0 * se, abs(v[100] - v[200]))
    m = float(margrabe(1.0, 1.0, 0.2, 0.2, 1.0))
    est_T, se_T = mc_policy_value(ATM, hold_to_maturity_policy(s200.lattice), 100_000, seed=12345)
    record_property("acceptance", f"7 MC optimal {est:.6f} +- {se:.2g} vs lattice {v[200]:.6f} "
                                  f"(band {band:.3g}); all-at-T {est_T:.6f} vs Margrabe {m:.6f} "
                                  f"(3 SE {3 * se_T:.3g}); reproducible: {again == (est, se)}")
    assert abs(est - v[200]) <= band
    assert abs(est_T - 0.112463) <= 3.0 * se_T
    assert again == (est, se)
