"""Single optimal stopping on a scenario tree."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tree import (
    CONTINUE, STOP, ScenarioTree, StoppingRule, make_rule, stop_nodes_by_leaf, validate_rule,
)

EPS_EQ = 1e-9


class RewardError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NodeReward:
    """One nonnegative payoff per tree node."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise RewardError("reward must be one value per node")
        if not np.isfinite(v).all():
            raise RewardError("reward has missing or non-finite values")
        if np.any(v < 0.0):
            raise RewardError(f"reward is negative at node {int(np.argmin(v))}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, node):
        return self.values[node]

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class ValueFamily:
    """Snell envelope values ``v`` on every node together with the reward."""

    v: np.ndarray
    reward: NodeReward

    def __getitem__(self, node):
        return self.v[node]


def as_reward(tree: ScenarioTree, reward) -> NodeReward:
    if not isinstance(reward, NodeReward):
        reward = NodeReward(np.asarray(reward, dtype=np.float64))
    if len(reward) != tree.n_nodes:
        raise RewardError(f"reward has {len(reward)} entries, tree has {tree.n_nodes} nodes")
    return reward


def _solve(tree: ScenarioTree, reward: np.ndarray, from_level: int = 0) -> np.ndarray:
    return _kernels.backward_induction(
        tree.first_child, tree.n_children, tree.prob, reward, tree.level_offsets, from_level
    )


def snell_envelope(tree: ScenarioTree, reward) -> ValueFamily:
    """Backward induction v = max(phi, E[v(next) | node]) on every node."""
    reward = as_reward(tree, reward)
    v = _solve(tree, reward.values)
    v.setflags(write=False)
    return ValueFamily(v, reward)


def stop_region(values: np.ndarray, reward: np.ndarray, eps: float = EPS_EQ) -> np.ndarray:
    """Nodes where the value touches the reward, ``v <= phi + eps * max(1, |v|)``."""
    return values <= reward + eps * np.maximum(1.0, np.abs(values))


def optimal_stop(tree: ScenarioTree, values: ValueFamily, start: int = 0,
                 eps: float = EPS_EQ) -> StoppingRule:
    """First node from ``start`` where the value family touches the reward."""
    return make_rule(tree, start, stop_region(values.v, values.reward.values, eps))


def lambda_stop(tree: ScenarioTree, values: ValueFamily, start: int, lam: float) -> StoppingRule:
    """First node from ``start`` where ``lam * v <= phi``."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    return make_rule(tree, start, lam * values.v <= values.reward.values)


def evaluate_rule(tree: ScenarioTree, reward, rule: StoppingRule) -> float:
    """E[phi(theta) | start] for the stopping time given by ``rule``."""
    reward = as_reward(tree, reward)
    validate_rule(tree, rule)
    w = _kernels.evaluate_decisions(
        tree.first_child, tree.n_children, tree.prob, reward.values,
        rule.decisions, tree.level_offsets, int(tree.t[rule.start]),
    )
    return float(w[rule.start])


def check_supermartingale(tree: ScenarioTree, values) -> float:
    """Largest ``(E[v(child) | node] - v(node))+`` over internal nodes."""
    v = values.v if isinstance(values, ValueFamily) else np.asarray(values, dtype=np.float64)
    internal = np.flatnonzero(tree.n_children > 0)
    if internal.size == 0:
        return 0.0
    cont = np.zeros(internal.size)
    fc = tree.first_child[internal]
    nc = tree.n_children[internal]
    for k in range(int(nc.max())):
        has = nc > k
        c = fc[has] + k
        cont[has] += tree.prob[c] * v[c]
    return float(np.max(np.maximum(cont - v[internal], 0.0)))


def stop_time_ancestry(tree: ScenarioTree, earlier: StoppingRule, later: StoppingRule) -> bool:
    """True when ``earlier`` stops at or before ``later`` on every scenario."""
    if earlier.start != later.start:
        return False
    a = stop_nodes_by_leaf(tree, earlier)
    b = stop_nodes_by_leaf(tree, later)
    return bool(np.all(tree.t[a] <= tree.t[b]))


__all__ = [
    "EPS_EQ", "NodeReward", "ValueFamily", "RewardError", "snell_envelope", "optimal_stop",
    "lambda_stop", "evaluate_rule", "check_supermartingale", "stop_region", "STOP", "CONTINUE",
]
