"""Brute-force ground truth by exhaustive enumeration of stopping rules.

Rules from a node are indexed in a fixed order: index 0 stops at the node,
indices ``1..`` continue and pick one rule per child, the first child varying
slowest.  Expected values are built up by the tower property, children added
one at a time in id order, which is exactly the summation order of the
backward-induction engine.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .double import BiReward
from .snell import as_reward
from .tree import (
    CONTINUE, STOP, UNDEFINED, ScenarioTree, StoppingPair, StoppingRule, count_stopping_rules,
)

MAX_RULES = 1_000_000
MAX_PAIRS = 10_000_000


class BudgetError(RuntimeError):
    """Enumeration would exceed its budget."""


@dataclass(frozen=True)
class EnumerationBudget:
    max_rules: int = MAX_RULES
    max_pairs: int = MAX_PAIRS

    def check_rules(self, count: int) -> None:
        if count > self.max_rules:
            raise BudgetError(f"{count} stopping rules exceed the budget of {self.max_rules}")

    def check_pairs(self, count: int) -> None:
        if count > self.max_pairs:
            raise BudgetError(f"{count} rule pairs exceed the budget of {self.max_pairs}")


DEFAULT_BUDGET = EnumerationBudget()


def _counts(tree: ScenarioTree, start: int) -> dict[int, int]:
    f: dict[int, int] = {}
    for lo, hi in reversed(tree.subtree_ranges(start)):
        for i in range(lo, hi):
            prod = 1
            for c in tree.children(i):
                prod *= f[c]
            f[i] = 1 if tree.n_children[i] == 0 else 1 + prod
    return f


def _decode(tree: ScenarioTree, node: int, index: int, counts: dict[int, int],
            decisions: np.ndarray) -> None:
    if index == 0:
        decisions[node] = STOP
        return
    decisions[node] = CONTINUE
    rest = index - 1
    kids = list(tree.children(node))
    radices = [counts[c] for c in kids]
    digits = []
    for r in reversed(radices):
        digits.append(rest % r)
        rest //= r
    for c, d in zip(kids, reversed(digits)):
        _decode(tree, c, d, counts, decisions)


def rule_from_index(tree: ScenarioTree, start: int, index: int,
                    counts: dict[int, int] | None = None) -> StoppingRule:
    counts = counts or _counts(tree, start)
    if not 0 <= index < counts[start]:
        raise IndexError(f"rule index {index} out of range")
    d = np.full(tree.n_nodes, UNDEFINED, dtype=np.int8)
    _decode(tree, start, int(index), counts, d)
    d.setflags(write=False)
    return StoppingRule(start, d)


def enumerate_rules(tree: ScenarioTree, start: int = 0,
                    budget: EnumerationBudget = DEFAULT_BUDGET) -> Iterator[StoppingRule]:
    """Every stopping rule from ``start`` exactly once, stop-first order."""
    start = tree.check_node(start)
    budget.check_rules(count_stopping_rules(tree, start))
    counts = _counts(tree, start)
    for i in range(counts[start]):
        yield rule_from_index(tree, start, i, counts)


def _fold_single(tree: ScenarioTree, node: int, child_vals: dict[int, np.ndarray]) -> np.ndarray:
    acc = None
    for c in tree.children(node):
        term = tree.prob[c] * child_vals[c]
        acc = term if acc is None else (acc[:, None] + term[None, :]).ravel()
    return acc


def rule_values(tree: ScenarioTree, reward: np.ndarray, start: int) -> np.ndarray:
    """Expected reward of every rule from ``start``, in enumeration order."""
    vals: dict[int, np.ndarray] = {}
    for lo, hi in reversed(tree.subtree_ranges(start)):
        for i in range(lo, hi):
            head = np.array([reward[i]])
            if tree.n_children[i] == 0:
                vals[i] = head
            else:
                vals[i] = np.concatenate([head, _fold_single(tree, i, vals)])
                for c in tree.children(i):
                    del vals[c]
    return vals[start]


def brute_force_single(tree: ScenarioTree, reward, start: int = 0,
                       budget: EnumerationBudget = DEFAULT_BUDGET) -> tuple[float, StoppingRule]:
    """Max of ``E[phi(theta) | start]`` over all rules; first maximizer kept."""
    start = tree.check_node(start)
    reward = as_reward(tree, reward).values
    budget.check_rules(count_stopping_rules(tree, start))
    vals = rule_values(tree, reward, start)
    k = int(np.argmax(vals))
    return float(vals[k]), rule_from_index(tree, start, k)


def pair_values(tree: ScenarioTree, psi: BiReward, start: int) -> np.ndarray:
    """``M[i, j] = E[psi(rule_i, rule_j) | start]`` over all ordered rule pairs."""
    dense = psi.dense()
    pv: dict[int, np.ndarray] = {}
    for lo, hi in reversed(tree.subtree_ranges(start)):
        for a in range(lo, hi):
            if tree.n_children[a] == 0:
                pv[a] = np.array([[dense[a, a]]])
                continue
            # one time stopped at a, the other still running below it
            row = _fold_single(tree, a, {c: rule_values(tree, dense[:, a], c)
                                         for c in tree.children(a)})
            col = _fold_single(tree, a, {c: rule_values(tree, dense[a, :], c)
                                         for c in tree.children(a)})
            both = None
            for c in tree.children(a):
                term = tree.prob[c] * pv[c]
                if both is None:
                    both = term
                else:
                    r0, c0 = both.shape
                    r1, c1 = term.shape
                    both = (both[:, None, :, None] + term[None, :, None, :]).reshape(r0 * r1,
                                                                                     c0 * c1)
            f = both.shape[0] + 1
            m = np.empty((f, f))
            m[0, 0] = dense[a, a]
            m[0, 1:] = col
            m[1:, 0] = row
            m[1:, 1:] = both
            pv[a] = m
            for c in tree.children(a):
                del pv[c]
    return pv[start]


def brute_force_double(tree: ScenarioTree, psi: BiReward, start: int = 0,
                       budget: EnumerationBudget = DEFAULT_BUDGET) -> tuple[float, StoppingPair]:
    """Max of ``E[psi(tau1, tau2) | start]`` over all ordered rule pairs."""
    start = tree.check_node(start)
    n = count_stopping_rules(tree, start)
    budget.check_rules(n)
    budget.check_pairs(n * n)
    m = pair_values(tree, psi, start)
    k = int(np.argmax(m))
    i, j = divmod(k, m.shape[1])
    counts = _counts(tree, start)
    pair = StoppingPair(rule_from_index(tree, start, i, counts),
                        rule_from_index(tree, start, j, counts))
    return float(m[i, j]), pair
