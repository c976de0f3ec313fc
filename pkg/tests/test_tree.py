import json

import numpy as np
import pytest

from multistop.oracle import enumerate_rules
from multistop.tree import (
    STOP, TreeError, binary_tree, build_tree, count_stopping_rules, make_rule, random_tree,
    stop_nodes_by_leaf, stopped_node, tree_from_levels, validate_rule,
)


def test_depth_zero_is_single_root():
    tree = build_tree([])
    assert tree.n_nodes == 1 and tree.horizon == 0
    assert tree.is_leaf(0)


def test_uniform_binary_depth2():
    tree = build_tree({"levels": [[0.5, 0.5], [0.5, 0.5]]})
    assert tree.n_nodes == 7
    assert list(tree.leaves()) == [3, 4, 5, 6]
    assert all(tree.t[i] == 2 for i in tree.leaves())
    assert list(tree.children(1)) == [3, 4]


def test_probabilities_must_sum_to_one():
    with pytest.raises(TreeError, match="sum to 0.89999"):
        build_tree([[0.3, 0.6]])


@pytest.mark.parametrize("probs", [[0.0, 1.0], [-0.5, 1.5], [1.2, -0.2]])
def test_rejects_nonpositive_probabilities(probs):
    with pytest.raises(TreeError):
        build_tree([probs])


def test_sum_tolerance_is_absolute_1e12():
    build_tree([[0.5, 0.5 + 5e-13]])
    with pytest.raises(TreeError):
        build_tree([[0.5, 0.5 + 5e-12]])


def test_rejects_mixed_leaf_depths():
    nodes = [
        {"id": 0, "parent": None, "prob": 1.0},
        {"id": 1, "parent": 0, "prob": 0.5},
        {"id": 2, "parent": 0, "prob": 0.5},
        {"id": 3, "parent": 1, "prob": 1.0},
    ]
    with pytest.raises(TreeError, match="horizon"):
        build_tree({"nodes": nodes})


def test_rejects_non_bfs_ids():
    nodes = [
        {"id": 0, "parent": None, "prob": 1.0},
        {"id": 1, "parent": 0, "prob": 0.5},
        {"id": 2, "parent": 1, "prob": 1.0},
        {"id": 3, "parent": 0, "prob": 0.5},
        {"id": 4, "parent": 3, "prob": 1.0},
    ]
    with pytest.raises(TreeError, match="breadth-first"):
        build_tree({"nodes": nodes})


def test_node_cap():
    with pytest.raises(TreeError, match="cap"):
        tree_from_levels([[0.5, 0.5]] * 18)


def test_serialization_round_trip():
    tree = random_tree(3, np.random.default_rng(7), branching=3)
    doc = json.loads(json.dumps(tree.to_dict()))
    again = build_tree(doc)
    assert again.n_nodes == tree.n_nodes
    for name in ("t", "parent", "prob", "first_child", "n_children"):
        assert np.array_equal(getattr(again, name), getattr(tree, name))


def test_ancestry_queries():
    tree = binary_tree(3)
    assert tree.is_ancestor(0, 14)
    assert tree.is_ancestor(2, 14) and not tree.is_ancestor(1, 14)
    assert tree.comparable(14, 2) and not tree.comparable(1, 2)
    anc = tree.ancestor_table()
    for m in range(tree.n_nodes):
        for s in range(tree.t[m] + 1):
            assert anc[m, s] == tree.ancestor_at(m, s)


def test_stopped_node_immediate_and_level_rules():
    tree = binary_tree(2)
    now = make_rule(tree, 0, np.ones(tree.n_nodes, bool))
    assert all(stopped_node(tree, now, leaf) == 0 for leaf in tree.leaves())
    level1 = make_rule(tree, 0, tree.t == 1)
    assert [stopped_node(tree, level1, leaf) for leaf in tree.leaves()] == [1, 1, 2, 2]


def test_stopped_node_up_branch_only():
    tree = binary_tree(2)
    mask = np.zeros(tree.n_nodes, bool)
    mask[1] = True
    rule = make_rule(tree, 0, mask)
    # path walk by hand: leaves 3, 4 sit under node 1, leaves 5, 6 under node 2
    assert [stopped_node(tree, rule, leaf) for leaf in (3, 4, 5, 6)] == [1, 1, 5, 6]
    assert list(stop_nodes_by_leaf(tree, rule)) == [1, 1, 5, 6]


def test_stopped_node_rejects_foreign_leaf():
    tree = binary_tree(2)
    rule = make_rule(tree, 1, np.zeros(tree.n_nodes, bool))
    with pytest.raises(TreeError):
        stopped_node(tree, rule, 6)


def _f(d):
    return 1 if d == 0 else 1 + _f(d - 1) ** 2


@pytest.mark.parametrize("depth,expected", [(0, 1), (1, 2), (2, 5), (4, 677)])
def test_count_stopping_rules_binary(depth, expected):
    assert _f(depth) == expected
    assert count_stopping_rules(binary_tree(depth)) == expected


@pytest.mark.parametrize("depth", [0, 1, 2, 3, 4])
def test_count_matches_enumeration(depth):
    tree = binary_tree(depth)
    assert sum(1 for _ in enumerate_rules(tree)) == count_stopping_rules(tree)


def test_count_ternary_and_subtree():
    tree = tree_from_levels([[0.2, 0.3, 0.5]] * 2)
    # f(leaf)=1, f(t=1)=2, f(root)=1+2^3
    assert count_stopping_rules(tree) == 9
    assert count_stopping_rules(tree, 1) == 2
    assert count_stopping_rules(tree, tree.leaves()[0]) == 1


@pytest.mark.parametrize("seed", range(20))
def test_stop_times_within_horizon(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(4, rng)
    start = int(rng.integers(tree.n_nodes))
    rule = make_rule(tree, start, rng.random(tree.n_nodes) < 0.3)
    validate_rule(tree, rule)
    for leaf in tree.subtree_leaves(start):
        s = stopped_node(tree, rule, leaf)
        assert tree.t[start] <= tree.t[s] <= tree.horizon
        assert rule.decisions[s] == STOP
