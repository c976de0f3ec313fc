"""JSON/CSV readers and writers.  Floats are written with 17 significant digits."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .double import BiReward
from .snell import NodeReward, ValueFamily
from .tree import ScenarioTree, StoppingRule, build_tree


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            return "null"
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# --- trees and rewards -------------------------------------------------------

def tree_to_json(tree: ScenarioTree) -> str:
    return dumps(tree.to_dict())


def load_tree(path) -> ScenarioTree:
    return build_tree(read_json(path))


def reward_to_dict(reward: NodeReward) -> dict:
    return {"reward": [{"node": i, "value": float(v)} for i, v in enumerate(reward.values)]}


def reward_from_dict(tree: ScenarioTree, data: dict) -> NodeReward:
    vals = np.full(tree.n_nodes, np.nan)
    for entry in data["reward"]:
        vals[tree.check_node(int(entry["node"]))] = float(entry["value"])
    return NodeReward(vals)


def psi_to_dict(psi: BiReward) -> dict:
    return {"psi": psi.entries()}


def psi_from_dict(tree: ScenarioTree, data: dict) -> BiReward:
    return BiReward.from_table(tree, data["psi"])


def rule_to_dict(rule: StoppingRule) -> dict:
    return {"start": rule.start, "stop": rule.stop_nodes(), "continue": rule.continue_nodes()}


# --- CSV ---------------------------------------------------------------------

def write_values_csv(path, tree: ScenarioTree, values: ValueFamily) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "t", "phi", "v"])
        for i in range(tree.n_nodes):
            w.writerow([i, int(tree.t[i]), fmt(values.reward.values[i]), fmt(values.v[i])])


def write_u1u2phi_csv(path, tree: ScenarioTree, u1, u2, phi, u) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "t", "u1", "u2", "phi", "u"])
        for i in range(tree.n_nodes):
            w.writerow([i, int(tree.t[i]), fmt(u1[i]), fmt(u2[i]), fmt(phi[i]), fmt(u[i])])


def write_surface_csv(path, surface) -> None:
    lat = surface.lattice
    with open(path, "w", newline="") as fh:
        fh.write("k,t,j1,j2,x1,x2,phi,v,exercise,B\n")
        for k in range(lat.steps + 1):
            x1, x2 = lat.prices(k)
            j1, j2 = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
            t = fmt(lat.time(k))
            cols = [
                j1.ravel(), j2.ravel(), x1[j1.ravel()], x2[j2.ravel()],
                surface.phi[k].ravel(), surface.v[k].ravel(),
                surface.exercise[k].ravel().astype(int), surface.b_flag[k].ravel().astype(int),
            ]
            lines = [
                f"{k},{t},{a},{b},{fmt(c)},{fmt(d)},{fmt(e)},{fmt(f)},{g},{h}"
                for a, b, c, d, e, f, g, h in zip(*cols)
            ]
            fh.write("\n".join(lines) + "\n")


def write_boundary_csv(path, rows, lattice) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "fixed_axis", "fixed_index", "min_exercise_index"])
        for k, axis, idx, first in rows:
            w.writerow([k, fmt(lattice.time(k)), axis, idx, first])
