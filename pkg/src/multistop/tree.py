"""Finite scenario trees encoding a discrete filtration.

Nodes are numbered densely in breadth-first order, so the children of any
node occupy a contiguous id range and every node at time ``t`` has a larger
id than every node at time ``t - 1``.  Backward passes therefore reduce to a
reverse sweep over ids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

PROB_SUM_TOL = 1e-12
MAX_NODES = 200_000

STOP = 1
CONTINUE = 0
UNDEFINED = -1


class TreeError(ValueError):
    """Raised for malformed tree descriptions or invalid node queries."""


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Immutable non-recombining event tree.

    ``prob[i]`` is the conditional probability of moving to node ``i`` from its
    parent (1.0 for the root).  All leaves sit at time ``horizon``.
    """

    t: np.ndarray
    parent: np.ndarray
    prob: np.ndarray
    first_child: np.ndarray
    n_children: np.ndarray
    horizon: int
    level_offsets: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return int(self.t.shape[0])

    def __len__(self) -> int:
        return self.n_nodes

    def children(self, node: int) -> range:
        self.check_node(node)
        fc = int(self.first_child[node])
        return range(fc, fc + int(self.n_children[node]))

    def is_leaf(self, node: int) -> bool:
        return int(self.n_children[node]) == 0

    def level(self, t: int) -> range:
        return range(int(self.level_offsets[t]), int(self.level_offsets[t + 1]))

    def leaves(self) -> np.ndarray:
        return np.arange(self.level_offsets[self.horizon], self.n_nodes)

    def check_node(self, node: int) -> int:
        if not 0 <= int(node) < self.n_nodes:
            raise TreeError(f"node id {node} out of range [0, {self.n_nodes})")
        return int(node)

    def ancestor_at(self, node: int, t: int) -> int:
        """Ancestor-or-self of ``node`` sitting at time ``t``."""
        node = self.check_node(node)
        if t > self.t[node] or t < 0:
            raise TreeError(f"node {node} has no ancestor at time {t}")
        while self.t[node] > t:
            node = int(self.parent[node])
        return node

    def is_ancestor(self, a: int, m: int) -> bool:
        """True when ``a`` is an ancestor-or-equal of ``m``."""
        self.check_node(a)
        self.check_node(m)
        if self.t[a] > self.t[m]:
            return False
        return self.ancestor_at(m, int(self.t[a])) == a

    def comparable(self, a: int, b: int) -> bool:
        return self.is_ancestor(a, b) or self.is_ancestor(b, a)

    def subtree_ranges(self, node: int) -> list[tuple[int, int]]:
        """Per-level ``[lo, hi)`` id ranges covering the subtree of ``node``."""
        node = self.check_node(node)
        lo, hi = node, node + 1
        out = [(lo, hi)]
        for _ in range(int(self.t[node]), self.horizon):
            lo = int(self.first_child[lo])
            hi = int(self.first_child[hi - 1] + self.n_children[hi - 1])
            out.append((lo, hi))
        return out

    def subtree(self, node: int) -> np.ndarray:
        return np.concatenate([np.arange(lo, hi) for lo, hi in self.subtree_ranges(node)])

    def subtree_leaves(self, node: int) -> np.ndarray:
        lo, hi = self.subtree_ranges(node)[-1]
        return np.arange(lo, hi)

    def conditional_probs(self, start: int) -> np.ndarray:
        """``p(m | start)`` for every node ``m`` (zero outside the subtree)."""
        out = np.zeros(self.n_nodes)
        ranges = self.subtree_ranges(start)
        out[start] = 1.0
        for lo, hi in ranges[1:]:
            idx = np.arange(lo, hi)
            out[idx] = out[self.parent[idx]] * self.prob[idx]
        return out

    def ancestor_table(self) -> np.ndarray:
        """``anc[m, s]`` = ancestor of ``m`` at time ``s`` (-1 when ``s > t(m)``)."""
        return self._ancestors

    @cached_property
    def _ancestors(self) -> np.ndarray:
        n = self.horizon
        anc = np.full((self.n_nodes, n + 1), -1, dtype=np.int64)
        anc[0, 0] = 0
        for s in range(1, n + 1):
            idx = np.arange(self.level_offsets[s], self.level_offsets[s + 1])
            anc[idx, :s] = anc[self.parent[idx], :s]
            anc[idx, s] = idx
        anc.setflags(write=False)
        return anc

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            nodes.append(
                {
                    "id": i,
                    "t": int(self.t[i]),
                    "parent": None if i == 0 else int(self.parent[i]),
                    "children": list(self.children(i)),
                    "prob": float(self.prob[i]),
                }
            )
        return {"horizon": self.horizon, "nodes": nodes}


def _from_arrays(parent: np.ndarray, prob: np.ndarray) -> ScenarioTree:
    """Assemble and validate a tree from BFS-ordered parent/prob arrays."""
    n_nodes = parent.shape[0]
    if n_nodes == 0:
        raise TreeError("tree has no nodes")
    if n_nodes > MAX_NODES:
        raise TreeError(f"tree has {n_nodes} nodes, cap is {MAX_NODES}")
    parent = np.array(parent, dtype=np.int64)
    prob = np.array(prob, dtype=np.float64)
    if parent[0] != -1:
        raise TreeError("node 0 must be the root")
    if np.any(parent[1:] < 0) or np.any(parent[1:] >= np.arange(1, n_nodes)):
        raise TreeError("node ids must be breadth-first: each parent precedes its children")
    if np.any(np.diff(parent[1:]) < 0):
        raise TreeError("node ids must be breadth-first: children listed in parent order")

    t = np.zeros(n_nodes, dtype=np.int64)
    for i in range(1, n_nodes):
        t[i] = t[parent[i]] + 1
    if np.any(np.diff(t) < 0):
        raise TreeError("node ids must be breadth-first: times nondecreasing")

    n_children = np.bincount(parent[1:], minlength=n_nodes).astype(np.int64)
    first_child = np.zeros(n_nodes, dtype=np.int64)
    if n_nodes > 1:
        starts = np.searchsorted(parent[1:], np.arange(n_nodes)) + 1
        first_child[:] = np.where(n_children > 0, starts, 0)

    horizon = int(t[-1])
    leaves = n_children == 0
    if np.any(t[leaves] != horizon):
        bad = int(np.flatnonzero(leaves & (t != horizon))[0])
        raise TreeError(f"leaf {bad} at time {t[bad]} but horizon is {horizon}")

    if not np.isfinite(prob).all() or np.any(prob[1:] <= 0.0) or np.any(prob > 1.0):
        raise TreeError("branch probabilities must lie in (0, 1]")
    if n_nodes > 1:
        sums = np.zeros(n_nodes)
        np.add.at(sums, parent[1:], prob[1:])
        internal = ~leaves
        gap = np.abs(sums[internal] - 1.0)
        if np.any(gap > PROB_SUM_TOL):
            bad = int(np.flatnonzero(internal)[np.argmax(gap)])
            raise TreeError(f"child probabilities of node {bad} sum to {float(sums[bad]):.17g}, not 1")
    prob[0] = 1.0

    level_offsets = np.searchsorted(t, np.arange(horizon + 2)).astype(np.int64)
    for arr in (t, parent, prob, first_child, n_children, level_offsets):
        arr.setflags(write=False)
    return ScenarioTree(t, parent, prob, first_child, n_children, horizon, level_offsets)


def build_tree(spec: dict | Sequence[Sequence[float]]) -> ScenarioTree:
    """Build a validated tree.

    ``spec`` is either a list of per-level child probability lists (every node
    at level ``k`` gets ``len(spec[k])`` children with those probabilities), a
    dict ``{"levels": [...]}`` of the same, or the serialized form
    ``{"horizon": n, "nodes": [...]}``.
    """
    if isinstance(spec, dict):
        if "nodes" in spec:
            return tree_from_nodes(spec["nodes"], spec.get("horizon"))
        if "levels" in spec:
            return tree_from_levels(spec["levels"])
        raise TreeError("tree spec needs 'nodes' or 'levels'")
    return tree_from_levels(spec)


def tree_from_levels(levels: Sequence[Sequence[float]]) -> ScenarioTree:
    parent = [-1]
    prob = [1.0]
    frontier = [0]
    for k, probs in enumerate(levels):
        probs = [float(p) for p in probs]
        if not probs:
            raise TreeError(f"level {k} has no children")
        nxt = []
        for node in frontier:
            for p in probs:
                nxt.append(len(parent))
                parent.append(node)
                prob.append(p)
        frontier = nxt
        if len(parent) > MAX_NODES:
            raise TreeError(f"tree exceeds the {MAX_NODES}-node cap")
    return _from_arrays(np.array(parent), np.array(prob))


def tree_from_nodes(nodes: Iterable[dict], horizon: int | None = None) -> ScenarioTree:
    nodes = sorted(nodes, key=lambda d: int(d["id"]))
    ids = [int(d["id"]) for d in nodes]
    if ids != list(range(len(ids))):
        raise TreeError("node ids must be dense integers 0..N-1")
    parent = np.array([-1 if d.get("parent") is None else int(d["parent"]) for d in nodes])
    prob = np.array([float(d.get("prob", 1.0)) for d in nodes])
    tree = _from_arrays(parent, prob)
    for d in nodes:
        i = int(d["id"])
        if "t" in d and int(d["t"]) != tree.t[i]:
            raise TreeError(f"node {i}: stated time {d['t']} != parent time + 1")
        if "children" in d and list(map(int, d["children"])) != list(tree.children(i)):
            raise TreeError(f"node {i}: children list inconsistent with parents")
    if ids and nodes[0].get("parent") is not None:
        raise TreeError("root must have parent null")
    if horizon is not None and int(horizon) != tree.horizon:
        raise TreeError(f"stated horizon {horizon} != leaf depth {tree.horizon}")
    return tree


def binary_tree(depth: int, p: float = 0.5) -> ScenarioTree:
    return tree_from_levels([[p, 1.0 - p]] * depth)


def random_tree(depth: int, rng: np.random.Generator, branching: int = 2,
                p_min: float = 0.05) -> ScenarioTree:
    """Uniform-branching tree with independently drawn conditional probabilities."""
    parent = [-1]
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for node in frontier:
            for _ in range(branching):
                nxt.append(len(parent))
                parent.append(node)
        frontier = nxt
    parent = np.array(parent)
    prob = np.ones(parent.shape[0])
    n_internal = (parent.shape[0] - 1) // branching
    for j in range(n_internal):
        w = rng.uniform(p_min, 1.0, size=branching)
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        prob[1 + j * branching: 1 + (j + 1) * branching] = w
    return _from_arrays(parent, prob)


@dataclass(frozen=True, eq=False)
class StoppingRule:
    """Adapted stop/continue assignment started at ``start``.

    ``decisions[i]`` is STOP, CONTINUE or UNDEFINED (node not reached).
    """

    start: int
    decisions: np.ndarray

    def stop_nodes(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.decisions == STOP)]

    def continue_nodes(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.decisions == CONTINUE)]


@dataclass(frozen=True, eq=False)
class StoppingPair:
    first: StoppingRule
    second: StoppingRule

    def __post_init__(self):
        if self.first.start != self.second.start:
            raise TreeError(
                f"pair rules start at different nodes ({self.first.start}, {self.second.start})"
            )

    @property
    def start(self) -> int:
        return self.first.start


def make_rule(tree: ScenarioTree, start: int, stop_mask: np.ndarray) -> StoppingRule:
    """Rule that stops at the first node (from ``start``) where ``stop_mask`` holds.

    Leaves always stop.  Decisions are recorded only on reached nodes.
    """
    start = tree.check_node(start)
    decisions = np.full(tree.n_nodes, UNDEFINED, dtype=np.int8)
    fill_rule(tree, start, np.asarray(stop_mask, dtype=bool), decisions)
    decisions.setflags(write=False)
    return StoppingRule(start, decisions)


def fill_rule(tree: ScenarioTree, start: int, stop_mask: np.ndarray,
              decisions: np.ndarray) -> None:
    """Write first-hit decisions for the subtree of ``start`` into ``decisions``."""
    for lo, hi in tree.subtree_ranges(start):
        idx = np.arange(lo, hi)
        if lo == start:
            reached = np.ones(1, dtype=bool)
        else:
            reached = decisions[tree.parent[idx]] == CONTINUE
        stop = stop_mask[idx] | (tree.n_children[idx] == 0)
        decisions[idx[reached & stop]] = STOP
        decisions[idx[reached & ~stop]] = CONTINUE


def validate_rule(tree: ScenarioTree, rule: StoppingRule) -> None:
    """Raise TreeError unless every path from the start hits exactly one STOP."""
    d = rule.decisions
    if d.shape != (tree.n_nodes,):
        raise TreeError("rule decisions do not match tree size")
    start = tree.check_node(rule.start)
    if d[start] == UNDEFINED:
        raise TreeError("rule has no decision at its start node")
    reached = np.zeros(tree.n_nodes, dtype=bool)
    reached[start] = True
    for lo, hi in tree.subtree_ranges(start):
        idx = np.arange(lo, hi)
        if lo > start:
            reached[idx] = d[tree.parent[idx]] == CONTINUE
        r = reached[idx]
        if np.any(d[idx[r]] == UNDEFINED):
            raise TreeError("rule leaves a reached node undecided")
        if np.any((d[idx[r]] == CONTINUE) & (tree.n_children[idx[r]] == 0)):
            raise TreeError("rule continues past a leaf")
        if np.any(d[idx[~r]] != UNDEFINED):
            raise TreeError("rule decides on a node it never reaches")
    outside = np.ones(tree.n_nodes, dtype=bool)
    outside[tree.subtree(start)] = False
    if np.any(d[outside] != UNDEFINED):
        raise TreeError("rule decides on nodes outside the start subtree")


def stop_nodes_by_leaf(tree: ScenarioTree, rule: StoppingRule) -> np.ndarray:
    """Stop node for each leaf under the rule's start, in leaf-id order."""
    d = rule.decisions
    ranges = tree.subtree_ranges(rule.start)
    stopped = np.full(tree.n_nodes, -1, dtype=np.int64)
    if d[rule.start] == STOP:
        stopped[rule.start] = rule.start
    for lo, hi in ranges[1:]:
        idx = np.arange(lo, hi)
        inherited = stopped[tree.parent[idx]]
        stopped[idx] = np.where(inherited >= 0, inherited, np.where(d[idx] == STOP, idx, -1))
    lo, hi = ranges[-1]
    return stopped[lo:hi]


def stopped_node(tree: ScenarioTree, rule: StoppingRule, leaf: int) -> int:
    """The STOP node on the root-to-``leaf`` path at or after the rule's start."""
    leaf = tree.check_node(leaf)
    start = rule.start
    if tree.t[leaf] < tree.t[start] or tree.ancestor_at(leaf, int(tree.t[start])) != start:
        raise TreeError(f"node {leaf} is not under start node {start}")
    path = [leaf]
    while path[-1] != start:
        path.append(int(tree.parent[path[-1]]))
    for node in reversed(path):
        if rule.decisions[node] == STOP:
            return node
        if rule.decisions[node] != CONTINUE:
            raise TreeError(f"rule undefined at reached node {node}")
    raise TreeError("rule never stops on this path")


def count_stopping_rules(tree: ScenarioTree, start: int = 0) -> int:
    """Number of stopping rules from ``start``: f(leaf) = 1, f(x) = 1 + prod f(child)."""
    start = tree.check_node(start)
    ranges = tree.subtree_ranges(start)
    f: dict[int, int] = {}
    for lo, hi in reversed(ranges):
        for i in range(lo, hi):
            if tree.n_children[i] == 0:
                f[i] = 1
            else:
                prod = 1
                for c in tree.children(i):
                    prod *= f[c]
                f[i] = 1 + prod
    return f[start]
