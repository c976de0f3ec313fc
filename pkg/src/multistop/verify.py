"""Randomized cross-check of the engines against the brute-force oracle."""
from __future__ import annotations

import numpy as np

from .double import (
    BiReward, evaluate_pair, evaluate_pairs_by_leaf, random_stop_tables, reduce,
)
from .oracle import DEFAULT_BUDGET, EnumerationBudget, brute_force_double, brute_force_single
from .snell import (
    check_supermartingale, evaluate_rule, lambda_stop, optimal_stop, snell_envelope,
    stop_time_ancestry,
)
from .tree import count_stopping_rules, random_tree

ABS_TOL = 1e-12
REL_TOL = 1e-10
LAMBDAS = (0.5, 0.9, 0.99, 0.999)


def _rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def check_seed(seed: int, depth: int, n_pairs: int = 1000, branching: int = 2,
               budget: EnumerationBudget = DEFAULT_BUDGET, inject_fault: bool = False) -> dict:
    """All properties for one random tree; gaps plus a list of violations."""
    rng = np.random.default_rng(seed)
    tree = random_tree(depth, rng, branching)
    n_rules = count_stopping_rules(tree)
    budget.check_rules(n_rules)
    budget.check_pairs(n_rules * n_rules)
    psi = BiReward.random_uniform(tree, rng)
    phi_rand = rng.uniform(0.0, 1.0, size=tree.n_nodes)

    out = {"seed": seed}
    violations = []

    # single stopping against enumeration, every node
    vf = snell_envelope(tree, phi_rand)
    gap = 0.0
    for node in range(tree.n_nodes):
        best, _ = brute_force_single(tree, phi_rand, node, budget)
        gap = max(gap, abs(best - vf.v[node]))
    out["snell_gap"] = gap
    if gap > ABS_TOL:
        violations.append(("snell_vs_oracle", gap))
    theta = optimal_stop(tree, vf, 0)
    g = _rel_gap(evaluate_rule(tree, phi_rand, theta), vf.v[0])
    out["snell_rule_gap"] = g
    if g > REL_TOL:
        violations.append(("optimal_stop_value", g))

    # reduction against pair enumeration
    res = reduce(tree, psi)
    u_root = -res.value if inject_fault else res.value
    best2, _ = brute_force_double(tree, psi, 0, budget)
    g = abs(u_root - best2)
    out["theorem3_gap"] = g
    if g > ABS_TOL:
        violations.append(("theorem3", g))
    g = _rel_gap(evaluate_pair(tree, psi, res.pair), u_root)
    out["pair_gap"] = g
    if g > REL_TOL:
        violations.append(("optimal_pair_value", g))

    # step-1 inequality on random pairs
    p = rng.uniform(0.1, 0.9)
    s1 = random_stop_tables(tree, 0, rng, n_pairs, p)
    s2 = random_stop_tables(tree, 0, rng, n_pairs, p)
    vals = evaluate_pairs_by_leaf(tree, psi, 0, s1, s2)
    earlier = np.where(tree.t[s1] <= tree.t[s2], s1, s2)
    cp = tree.conditional_probs(0)[tree.leaves()]
    via_phi = (cp[None, :] * res.phi.values[earlier]).sum(axis=1)
    worst = float(max(np.max(vals - via_phi), np.max(via_phi - u_root)))
    out["step1_excess"] = worst
    if worst > ABS_TOL:
        violations.append(("step1_inequality", worst))

    # supermartingale systems
    sm = max(check_supermartingale(tree, vf), check_supermartingale(tree, res.u))
    out["supermartingale"] = sm
    if sm > ABS_TOL:
        violations.append(("supermartingale", sm))

    # lambda stopping times
    ok = True
    for fam in (vf, res.u):
        star = optimal_stop(tree, fam, 0)
        prev = None
        for lam in LAMBDAS:
            rule = lambda_stop(tree, fam, 0, lam)
            ok &= stop_time_ancestry(tree, rule, star)
            if prev is not None:
                ok &= stop_time_ancestry(tree, prev, rule)
            ok &= evaluate_rule(tree, fam.reward, rule) >= lam * fam.v[0] - ABS_TOL
            prev = rule
    out["lambda_ok"] = bool(ok)
    if not ok:
        violations.append(("lambda_monotonicity", 1.0))

    out["violations"] = [{"seed": seed, "property": name, "gap": float(g)} for name, g in violations]
    return out


def run_matrix(seeds, depth: int, n_pairs: int = 1000,
               budget: EnumerationBudget = DEFAULT_BUDGET, inject_fault: bool = False) -> dict:
    seeds = list(seeds)
    rows = [check_seed(s, depth, n_pairs, budget=budget, inject_fault=inject_fault) for s in seeds]
    return {
        "seeds": len(seeds),
        "depth": depth,
        "max_abs_gap_theorem3": max(r["theorem3_gap"] for r in rows),
        "max_abs_gap_snell": max(r["snell_gap"] for r in rows),
        "max_rel_gap_optimal_stop": max(r["snell_rule_gap"] for r in rows),
        "max_rel_gap_pair": max(r["pair_gap"] for r in rows),
        "max_step1_excess": max(r["step1_excess"] for r in rows),
        "max_supermartingale_violation": max(r["supermartingale"] for r in rows),
        "lambda_monotone": all(r["lambda_ok"] for r in rows),
        "violations": [v for r in rows for v in r["violations"]],
    }
