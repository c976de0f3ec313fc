"""Command-line front end.

Exit codes: 0 ok, 2 input error, 3 property/invariant failure, 4 budget refusal.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .double import BiReward, evaluate_pair, reduce, walk_state
from .exchange import (
    MarketParams, exercise_frontier, margrabe, mc_policy_value,
    new_reward_phi, optimal_pair_policy, price_exchange_double,
)
from .oracle import BudgetError, EnumerationBudget, brute_force_double
from .snell import (
    EPS_EQ, NodeReward, check_supermartingale, evaluate_rule, optimal_stop, snell_envelope,
)
from .tree import binary_tree, count_stopping_rules, random_tree, tree_from_levels
from .verify import ABS_TOL, REL_TOL, run_matrix

log = logging.getLogger("multistop")

EXIT_OK, EXIT_INPUT, EXIT_PROPERTY, EXIT_BUDGET = 0, 2, 3, 4

DEFAULTS = {
    "out": ".",
    "seed": 0,
    "depth": 2,
    "branching": 2,
    "eps_eq": EPS_EQ,
    "max_rules": 1_000_000,
    "max_pairs": 10_000_000,
    "seeds": 100,
    "pairs": 1000,
    "steps": 200,
    "paths": 100_000,
    "x1": 1.0,
    "x2": 1.0,
    "sigma1": 0.2,
    "sigma2": 0.2,
    "maturity": 1.0,
    "reward_gen": "uniform",
    "psi_gen": "uniform",
    "value": 1.0,
}


class InputError(Exception):
    pass


class PropertyFailure(Exception):
    pass


def _tree_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tree", help="tree JSON file")
    p.add_argument("--depth", type=int, help="generate a tree of this depth instead")
    p.add_argument("--branching", type=int)
    p.add_argument("--random-probs", action="store_true", default=None,
                   help="draw branch probabilities from --seed")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multistop", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="JSON config; command-line flags win on conflict")
    parser.add_argument("--threads", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("snell", help="single optimal stopping on a tree")
    _tree_args(p)
    p.add_argument("--reward", help="reward JSON file")
    p.add_argument("--reward-gen", choices=["uniform", "constant", "walk"])
    p.add_argument("--value", type=float, help="constant for --reward-gen constant")
    p.add_argument("--eps-eq", type=float)
    p.add_argument("--out")

    p = sub.add_parser("double", help="double optimal stopping via the new reward")
    _tree_args(p)
    p.add_argument("--psi", help="pair reward JSON file")
    p.add_argument("--psi-gen",
                   choices=["uniform", "constant", "sum", "difference", "max", "later"])
    p.add_argument("--value", type=float)
    p.add_argument("--verify", action="store_true", default=None,
                   help="cross-check against exhaustive pair enumeration")
    p.add_argument("--max-rules", type=int)
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--eps-eq", type=float)
    p.add_argument("--out")

    p = sub.add_parser("verify", help="randomized certification against brute force")
    p.add_argument("--seeds", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--pairs", type=int, help="random pairs per seed for the step-1 check")
    p.add_argument("--max-rules", type=int)
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--inject-fault", action="store_true", default=None, help=argparse.SUPPRESS)
    p.add_argument("--out")

    p = sub.add_parser("exchange", help="price the two-exercise exchange option")
    for name in ("x1", "x2", "sigma1", "sigma2", "maturity"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-surface", action="store_true", default=None,
                   help="skip writing surface.csv")
    p.add_argument("--out")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            file_cfg = io.read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise InputError("config must be a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for k, v in vars(args).items():
        if v is not None:
            cfg[k] = v
    if not cfg.get("subcommand"):
        raise InputError("no subcommand given")
    if cfg.get("threads") is None:
        env = os.environ.get("MULTISTOP_THREADS")
        cfg["threads"] = int(env) if env else (os.cpu_count() or 1)
    if cfg["eps_eq"] <= 0:
        raise InputError("tolerances must be positive")
    return cfg


def _load_tree(cfg):
    if cfg.get("tree"):
        return io.load_tree(cfg["tree"])
    depth, b = int(cfg["depth"]), int(cfg["branching"])
    if depth < 0 or b < 1:
        raise InputError("depth must be >= 0 and branching >= 1")
    if cfg.get("random_probs"):
        return random_tree(depth, np.random.default_rng(cfg["seed"]), b)
    if b == 2:
        return binary_tree(depth)
    return tree_from_levels([[1.0 / b] * b] * depth)


def _load_reward(cfg, tree) -> NodeReward:
    if cfg.get("reward"):
        return io.reward_from_dict(tree, io.read_json(cfg["reward"]))
    name = cfg["reward_gen"]
    if name == "constant":
        return NodeReward(np.full(tree.n_nodes, float(cfg["value"])))
    if name == "walk":
        return NodeReward(walk_state(tree))
    rng = np.random.default_rng([int(cfg["seed"]), 1])
    return NodeReward(rng.uniform(0.0, 1.0, tree.n_nodes))


def _load_psi(cfg, tree) -> BiReward:
    if cfg.get("psi"):
        return io.psi_from_dict(tree, io.read_json(cfg["psi"]))
    name = cfg["psi_gen"]
    if name == "constant":
        return BiReward.constant(tree, float(cfg["value"]))
    if name == "uniform":
        return BiReward.random_uniform(tree, np.random.default_rng([int(cfg["seed"]), 2]))
    return BiReward.from_state(tree, walk_state(tree), name)


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_snell(cfg) -> int:
    tree = _load_tree(cfg)
    reward = _load_reward(cfg, tree)
    values = snell_envelope(tree, reward)
    rule = optimal_stop(tree, values, 0, cfg["eps_eq"])
    sm = check_supermartingale(tree, values)
    rule_value = evaluate_rule(tree, reward, rule)
    out = _outdir(cfg)
    io.write_values_csv(out / "values.csv", tree, values)
    io.write_json(out / "rule.json", io.rule_to_dict(rule))
    io.write_json(out / "summary.json", {
        "v_root": float(values.v[0]),
        "phi_root": float(reward.values[0]),
        "rule_value": rule_value,
        "supermartingale_max_violation": sm,
        "n_nodes": tree.n_nodes,
        "horizon": tree.horizon,
        "eps_eq": cfg["eps_eq"],
    })
    if sm > ABS_TOL or abs(rule_value - values.v[0]) > REL_TOL * max(1.0, abs(values.v[0])):
        raise PropertyFailure(f"snell invariants violated: supermartingale {sm}, "
                              f"rule value {rule_value} vs v {values.v[0]}")
    return EXIT_OK


def run_double(cfg) -> int:
    tree = _load_tree(cfg)
    psi = _load_psi(cfg, tree)
    budget = EnumerationBudget(int(cfg["max_rules"]), int(cfg["max_pairs"]))
    if cfg.get("verify"):
        # refuse before doing any work
        n = count_stopping_rules(tree)
        budget.check_rules(n)
        budget.check_pairs(n * n)
    res = reduce(tree, psi, 0, cfg["eps_eq"])
    log.info("reduced value %s on %d nodes", res.value, tree.n_nodes)
    pair_value = evaluate_pair(tree, psi, res.pair)
    summary = {
        "u_root": res.value,
        "pair_value": pair_value,
        "phi_root": float(res.phi.values[0]),
        "n_nodes": tree.n_nodes,
        "horizon": tree.horizon,
    }
    failures = []
    if abs(pair_value - res.value) > REL_TOL * max(1.0, abs(res.value)):
        failures.append(f"pair value {pair_value} != reduced value {res.value}")
    if cfg.get("verify"):
        best, _ = brute_force_double(tree, psi, 0, budget)
        summary["oracle_value"] = best
        summary["oracle_gap"] = abs(best - res.value)
        if summary["oracle_gap"] > ABS_TOL:
            failures.append(f"oracle gap {summary['oracle_gap']}")
    out = _outdir(cfg)
    io.write_u1u2phi_csv(out / "u1u2phi.csv", tree, res.u1.values, res.u2.values,
                         res.phi.values, res.u.v)
    io.write_json(out / "pair.json", {
        "start": res.pair.start,
        "theta_star": io.rule_to_dict(res.theta_star),
        "tau1": io.rule_to_dict(res.pair.first),
        "tau2": io.rule_to_dict(res.pair.second),
        "b_flags": [{"node": s, "B": b} for s, b in sorted(res.b_flags.items())],
    })
    io.write_json(out / "summary.json", summary)
    if failures:
        raise PropertyFailure("; ".join(failures))
    return EXIT_OK


def run_verify(cfg) -> int:
    budget = EnumerationBudget(int(cfg["max_rules"]), int(cfg["max_pairs"]))
    report = run_matrix(range(int(cfg["seeds"])), int(cfg["depth"]), int(cfg["pairs"]), budget,
                        bool(cfg.get("inject_fault")))
    io.write_json(_outdir(cfg) / "verify.json", report)
    if report["violations"]:
        first = report["violations"][0]
        raise PropertyFailure(f"{len(report['violations'])} violations; first: property "
                              f"{first['property']} at seed {first['seed']}")
    return EXIT_OK


def run_exchange(cfg) -> int:
    try:
        params = MarketParams(float(cfg["x1"]), float(cfg["x2"]), float(cfg["sigma1"]),
                              float(cfg["sigma2"]), float(cfg["maturity"]))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    steps, paths = int(cfg["steps"]), int(cfg["paths"])
    if steps < 1:
        raise InputError("--steps must be >= 1")
    if paths < 0:
        raise InputError("--paths must be >= 0")
    surface = price_exchange_double(params, steps)
    price = {
        "v0": surface.v0,
        "margrabe": float(margrabe(params.x1, params.x2, params.sigma1, params.sigma2,
                                   params.maturity)),
        "phi0": new_reward_phi(0.0, params.x1, params.x2, params),
        "n": steps,
        "mc_estimate": None,
        "mc_se": None,
        "seed": int(cfg["seed"]),
        "paths": paths,
    }
    if paths > 0:
        est, se = mc_policy_value(params, optimal_pair_policy(surface), paths, int(cfg["seed"]),
                                  int(cfg["threads"]))
        price["mc_estimate"], price["mc_se"] = est, se
    out = _outdir(cfg)
    log.info("v0=%s margrabe=%s, writing %s", price["v0"], price["margrabe"], out)
    io.write_json(out / "price.json", price)
    if not cfg.get("no_surface"):
        io.write_surface_csv(out / "surface.csv", surface)
    io.write_boundary_csv(out / "boundary.csv", exercise_frontier(surface), surface.lattice)
    bad = [k for k in range(steps + 1)
           if np.any(surface.v[k] < surface.phi[k] - EPS_EQ * np.maximum(1.0, surface.v[k]))]
    if bad:
        raise PropertyFailure(f"value below reward at steps {bad[:5]}")
    return EXIT_OK


COMMANDS = {"snell": run_snell, "double": run_double, "verify": run_verify,
            "exchange": run_exchange}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[cfg["subcommand"]](cfg)
    except BudgetError as exc:
        print(f"budget refusal: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except PropertyFailure as exc:
        print(f"property failure: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except (InputError, ValueError, KeyError, OSError) as exc:
        # TreeError, RewardError and JSONDecodeError are ValueErrors
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
