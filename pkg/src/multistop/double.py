"""Double optimal stopping reduced to single stopping over a new reward.

For a payoff ``psi(a, b)`` defined on path-comparable node pairs the value of
choosing two stopping times equals the Snell envelope of

    phi(theta) = max(u1(theta), u2(theta)),

where ``u1(theta)`` is the best value of the first time when the second is
frozen at ``theta`` (and symmetrically for ``u2``).  An optimal pair is built
by stopping the reduced problem first and then solving the one-sided
subproblem at that node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .snell import (
    EPS_EQ, NodeReward, RewardError, ValueFamily, _solve, optimal_stop, snell_envelope,
    stop_region,
)
from .tree import (
    CONTINUE, STOP, UNDEFINED, ScenarioTree, StoppingPair, StoppingRule, TreeError, fill_rule,
    make_rule, stop_nodes_by_leaf, validate_rule,
)

MAX_TABLE_ENTRIES = 50_000_000


class BiReward:
    """Payoff ``psi(a, b)`` on ordered pairs of comparable nodes.

    Stored as two ancestor-indexed tables of shape ``(N, horizon + 1)``:
    ``down[m, s] = psi(m, anc_s(m))`` and ``up[m, s] = psi(anc_s(m), m)``,
    NaN where ``s > t(m)``.  Every comparable pair has exactly one slot
    (the diagonal has two, kept equal).
    """

    def __init__(self, tree: ScenarioTree, down: np.ndarray, up: np.ndarray, name: str = "table"):
        shape = (tree.n_nodes, tree.horizon + 1)
        down = np.array(down, dtype=np.float64)
        up = np.array(up, dtype=np.float64)
        if down.shape != shape or up.shape != shape:
            raise RewardError(f"pair tables must have shape {shape}")
        valid = np.arange(tree.horizon + 1)[None, :] <= tree.t[:, None]
        for tab in (down, up):
            if not np.isfinite(tab[valid]).all():
                raise RewardError("pair reward missing on some comparable pair")
            if np.any(tab[valid] < 0.0):
                raise RewardError("pair reward must be nonnegative")
            tab[~valid] = np.nan
            tab.setflags(write=False)
        diag = np.arange(tree.n_nodes), tree.t
        if not np.array_equal(down[diag], up[diag]):
            raise RewardError("psi(a, a) stored inconsistently")
        self.tree = tree
        self.down = down
        self.up = up
        self.name = name

    # construction -----------------------------------------------------------

    @staticmethod
    def _pair_index(tree: ScenarioTree):
        n_slots = tree.n_nodes * (tree.horizon + 1)
        if n_slots > MAX_TABLE_ENTRIES:
            raise RewardError(f"pair table would need {n_slots} entries (cap {MAX_TABLE_ENTRIES})")
        anc = tree.ancestor_table()
        m, s = np.nonzero(anc >= 0)
        return anc, m, s

    @classmethod
    def from_function(cls, tree: ScenarioTree, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      name: str = "function") -> "BiReward":
        """``fn(a, b)`` must be vectorized over integer node-id arrays."""
        anc, m, s = cls._pair_index(tree)
        a = anc[m, s]
        shape = anc.shape
        down = np.full(shape, np.nan)
        up = np.full(shape, np.nan)
        down[m, s] = np.broadcast_to(np.asarray(fn(m, a), dtype=np.float64), m.shape)
        up[m, s] = np.broadcast_to(np.asarray(fn(a, m), dtype=np.float64), m.shape)
        return cls(tree, down, up, name)

    @classmethod
    def from_table(cls, tree: ScenarioTree, entries) -> "BiReward":
        """Explicit values: a mapping ``{(a, b): value}`` or ``[{a, b, value}, ...]``."""
        if isinstance(entries, dict):
            items = [(int(a), int(b), float(v)) for (a, b), v in entries.items()]
        else:
            items = [(int(e["a"]), int(e["b"]), float(e["value"])) for e in entries]
        shape = (tree.n_nodes, tree.horizon + 1)
        down = np.full(shape, np.nan)
        up = np.full(shape, np.nan)
        for a, b, v in items:
            tree.check_node(a)
            tree.check_node(b)
            if tree.is_ancestor(b, a):
                down[a, tree.t[b]] = v
            if tree.is_ancestor(a, b):
                up[b, tree.t[a]] = v
            if not tree.comparable(a, b):
                raise RewardError(f"pair ({a}, {b}) is not path-comparable")
        return cls(tree, down, up, "table")

    @classmethod
    def constant(cls, tree: ScenarioTree, c: float) -> "BiReward":
        return cls.from_function(tree, lambda a, b: np.full(np.shape(a), float(c)), "constant")

    @classmethod
    def random_uniform(cls, tree: ScenarioTree, rng: np.random.Generator) -> "BiReward":
        """I.i.d. uniform(0, 1) value on every ordered comparable pair."""
        anc, m, s = cls._pair_index(tree)
        shape = anc.shape
        down = np.full(shape, np.nan)
        up = np.full(shape, np.nan)
        down[m, s] = rng.uniform(0.0, 1.0, size=m.shape)
        up[m, s] = rng.uniform(0.0, 1.0, size=m.shape)
        diag = np.arange(tree.n_nodes), tree.t
        up[diag] = down[diag]
        return cls(tree, down, up, "uniform")

    @classmethod
    def from_state(cls, tree: ScenarioTree, state: np.ndarray, kind: str) -> "BiReward":
        """Built-in payoffs of a node state ``X``: sum, difference, max, later."""
        x = np.asarray(state, dtype=np.float64)
        fns = {
            "sum": lambda a, b: x[a] + x[b],
            "difference": lambda a, b: np.maximum(x[a] - x[b], 0.0),
            "max": lambda a, b: np.maximum(x[a], x[b]),
            "later": lambda a, b: np.where(tree.t[a] >= tree.t[b], x[a], x[b]),
        }
        if kind not in fns:
            raise RewardError(f"unknown pair generator {kind!r}; choose from {sorted(fns)}")
        return cls.from_function(tree, fns[kind], kind)

    # evaluation -------------------------------------------------------------

    def __call__(self, a: int, b: int) -> float:
        tree = self.tree
        if tree.is_ancestor(b, a):
            return float(self.down[a, tree.t[b]])
        if tree.is_ancestor(a, b):
            return float(self.up[b, tree.t[a]])
        raise RewardError(f"pair ({a}, {b}) is not path-comparable")

    def values(self, a, b) -> np.ndarray:
        """Vectorized lookup; every pair must be comparable."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))
        t = self.tree.t
        a_deeper = t[a] >= t[b]
        deep = np.where(a_deeper, a, b)
        shallow = np.where(a_deeper, b, a)
        if not np.all(self.tree.ancestor_table()[deep, t[shallow]] == shallow):
            raise RewardError("pair reward queried on an incomparable pair")
        return np.where(a_deeper, self.down[deep, t[shallow]], self.up[deep, t[shallow]])

    def entries(self) -> list[dict]:
        out = []
        anc = self.tree.ancestor_table()
        for m_, s_ in zip(*np.nonzero(anc >= 0)):
            a = int(anc[m_, s_])
            out.append({"a": int(m_), "b": a, "value": float(self.down[m_, s_])})
            if a != m_:
                out.append({"a": a, "b": int(m_), "value": float(self.up[m_, s_])})
        return out

    def dense(self) -> np.ndarray:
        """N x N matrix ``psi[a, b]`` with NaN on incomparable pairs."""
        tree = self.tree
        if tree.n_nodes > 8192:
            raise RewardError("dense pair matrix only for small trees")
        anc = tree.ancestor_table()
        out = np.full((tree.n_nodes, tree.n_nodes), np.nan)
        m, s = np.nonzero(anc >= 0)
        a = anc[m, s]
        out[m, a] = self.down[m, s]
        out[a, m] = self.up[m, s]
        return out


# --- conditional one-sided values -------------------------------------------

def _level_values(tree: ScenarioTree, table: np.ndarray, level: int) -> ValueFamily:
    """Snell envelope with reward ``table[:, level]`` for all nodes at time >= level.

    The value at node ``m`` is the one-sided value with the other time frozen at
    ``anc_level(m)``; nodes above ``level`` carry zero.
    """
    reward = np.nan_to_num(table[:, level], nan=0.0)
    v = _solve(tree, reward, level)
    v = np.nan_to_num(v, nan=0.0)
    return ValueFamily(v, NodeReward(reward))


def _check_psi(tree: ScenarioTree, psi: BiReward) -> None:
    if psi.tree is not tree and psi.tree.n_nodes != tree.n_nodes:
        raise TreeError("pair reward built for a different tree")


def conditional_value_u1(tree: ScenarioTree, psi: BiReward, theta: int) -> float:
    """Best ``E[psi(tau1, theta) | theta]`` over ``tau1 >= theta``."""
    _check_psi(tree, psi)
    theta = tree.check_node(theta)
    return float(_level_values(tree, psi.down, int(tree.t[theta])).v[theta])


def conditional_value_u2(tree: ScenarioTree, psi: BiReward, theta: int) -> float:
    """Best ``E[psi(theta, tau2) | theta]`` over ``tau2 >= theta``."""
    _check_psi(tree, psi)
    theta = tree.check_node(theta)
    return float(_level_values(tree, psi.up, int(tree.t[theta])).v[theta])


@dataclass(eq=False)
class _LevelSolves:
    """Per-level one-sided Snell solves, shared by u1/u2 and the pair builder."""

    tree: ScenarioTree
    psi: BiReward
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)

    def __post_init__(self):
        for lev in range(self.tree.horizon + 1):
            self.first.append(_level_values(self.tree, self.psi.down, lev))
            self.second.append(_level_values(self.tree, self.psi.up, lev))

    def u(self) -> tuple[np.ndarray, np.ndarray]:
        u1 = np.empty(self.tree.n_nodes)
        u2 = np.empty(self.tree.n_nodes)
        for lev in range(self.tree.horizon + 1):
            idx = np.arange(self.tree.level_offsets[lev], self.tree.level_offsets[lev + 1])
            u1[idx] = self.first[lev].v[idx]
            u2[idx] = self.second[lev].v[idx]
        return u1, u2


def new_reward(tree: ScenarioTree, psi: BiReward) -> NodeReward:
    """``phi(theta) = max(u1(theta), u2(theta))`` on every node."""
    _check_psi(tree, psi)
    u1, u2 = _LevelSolves(tree, psi).u()
    return NodeReward(np.maximum(u1, u2))


@dataclass(frozen=True, eq=False)
class ReductionResult:
    u1: NodeReward
    u2: NodeReward
    phi: NodeReward
    u: ValueFamily
    theta_star: StoppingRule
    pair: StoppingPair
    b_flags: dict

    @property
    def value(self) -> float:
        return float(self.u.v[self.theta_star.start])


def reduce(tree: ScenarioTree, psi: BiReward, start: int = 0, eps: float = EPS_EQ,
           prefer_b: bool = True) -> ReductionResult:
    """Solve the double stopping problem from ``start`` through the new reward.

    ``prefer_b=False`` flips the tie rule (takes the complement branch when
    ``u1 == u2`` at the reduced stop node); the default follows ``u1 <= u2``.
    """
    _check_psi(tree, psi)
    start = tree.check_node(start)
    solves = _LevelSolves(tree, psi)
    u1, u2 = solves.u()
    phi = NodeReward(np.maximum(u1, u2))
    u = snell_envelope(tree, phi)
    theta = optimal_stop(tree, u, start, eps)

    d1 = np.full(tree.n_nodes, UNDEFINED, dtype=np.int8)
    d2 = np.full(tree.n_nodes, UNDEFINED, dtype=np.int8)
    cont = theta.decisions == CONTINUE
    d1[cont] = CONTINUE
    d2[cont] = CONTINUE
    masks1: dict[int, np.ndarray] = {}
    masks2: dict[int, np.ndarray] = {}
    b_flags = {}
    for s in theta.stop_nodes():
        lev = int(tree.t[s])
        on_b = bool(u1[s] <= u2[s]) if prefer_b else bool(u1[s] < u2[s])
        b_flags[s] = on_b
        if on_b:
            d1[s] = STOP
            if lev not in masks2:
                fam = solves.second[lev]
                masks2[lev] = stop_region(fam.v, fam.reward.values, eps)
            fill_rule(tree, s, masks2[lev], d2)
        else:
            d2[s] = STOP
            if lev not in masks1:
                fam = solves.first[lev]
                masks1[lev] = stop_region(fam.v, fam.reward.values, eps)
            fill_rule(tree, s, masks1[lev], d1)
    d1.setflags(write=False)
    d2.setflags(write=False)
    pair = StoppingPair(StoppingRule(start, d1), StoppingRule(start, d2))
    return ReductionResult(
        NodeReward(u1), NodeReward(u2), phi, u, theta, pair, b_flags,
    )


def reduced_value(tree: ScenarioTree, psi: BiReward, start: int = 0) -> float:
    """Snell envelope of the new reward at ``start``."""
    phi = new_reward(tree, psi)
    return float(snell_envelope(tree, phi).v[tree.check_node(start)])


def optimal_pair(tree: ScenarioTree, psi: BiReward, start: int = 0,
                 eps: float = EPS_EQ) -> StoppingPair:
    return reduce(tree, psi, start, eps).pair


def evaluate_pair(tree: ScenarioTree, psi: BiReward, pair: StoppingPair) -> float:
    """``E[psi(tau1, tau2) | start]`` by summing over the scenarios below start."""
    if pair.first.start != pair.second.start:
        raise TreeError("pair rules start at different nodes")
    validate_rule(tree, pair.first)
    validate_rule(tree, pair.second)
    leaves = tree.subtree_leaves(pair.start)
    cp = tree.conditional_probs(pair.start)[leaves]
    s1 = stop_nodes_by_leaf(tree, pair.first)
    s2 = stop_nodes_by_leaf(tree, pair.second)
    return float(np.sum(cp * psi.values(s1, s2)))


def earlier_rule(tree: ScenarioTree, pair: StoppingPair) -> StoppingRule:
    """Rule stopping at the pathwise-earlier of the pair's two stop nodes."""
    mask = (pair.first.decisions == STOP) | (pair.second.decisions == STOP)
    return make_rule(tree, pair.start, mask)


def random_rule(tree: ScenarioTree, start: int, rng: np.random.Generator,
                p_stop: float = 0.4) -> StoppingRule:
    """Random adapted rule: each node independently flagged as a stop node."""
    return make_rule(tree, start, rng.random(tree.n_nodes) < p_stop)


def walk_state(tree: ScenarioTree, x0: float | None = None) -> np.ndarray:
    """Random-walk level per node: child k of b gets increment 1 - 2k/(b-1).

    Starts at ``horizon`` by default so the state never goes negative.
    """
    x = np.zeros(tree.n_nodes)
    x[0] = float(tree.horizon) if x0 is None else float(x0)
    for lev in range(1, tree.horizon + 1):
        idx = np.arange(tree.level_offsets[lev], tree.level_offsets[lev + 1])
        par = tree.parent[idx]
        k = idx - tree.first_child[par]
        b = tree.n_children[par]
        inc = np.where(b > 1, 1.0 - 2.0 * k / np.maximum(b - 1, 1), 0.0)
        x[idx] = x[par] + inc
    return x


def random_stop_tables(tree: ScenarioTree, start: int, rng: np.random.Generator, k: int,
                       p_stop: float = 0.4) -> np.ndarray:
    """Stop node per leaf for ``k`` random rules from ``start``; shape (k, leaves)."""
    ranges = tree.subtree_ranges(start)
    stopped = np.full((k, tree.n_nodes), -1, dtype=np.int64)
    for lo, hi in ranges:
        idx = np.arange(lo, hi)
        hit = (rng.random((k, hi - lo)) < p_stop) | (tree.n_children[idx] == 0)[None, :]
        own = np.where(hit, idx[None, :], -1)
        if lo == start:
            stopped[:, idx] = own
        else:
            inherited = stopped[:, tree.parent[idx]]
            stopped[:, idx] = np.where(inherited >= 0, inherited, own)
    lo, hi = ranges[-1]
    return stopped[:, lo:hi]


def evaluate_pairs_by_leaf(tree: ScenarioTree, psi: BiReward, start: int, s1: np.ndarray,
                           s2: np.ndarray) -> np.ndarray:
    """Pair values from per-leaf stop-node tables, one value per row."""
    cp = tree.conditional_probs(start)[tree.subtree_leaves(start)]
    return (cp[None, :] * psi.values(s1, s2)).sum(axis=1)

