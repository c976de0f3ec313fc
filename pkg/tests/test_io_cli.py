import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from multistop import io
from multistop.cli import main
from multistop.double import BiReward
from multistop.tree import binary_tree, random_tree

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def check(path, name):
    doc = json.loads(Path(path).read_text())
    jsonschema.validate(doc, schema(name))
    return doc


@pytest.fixture
def depth1_files(tmp_path):
    tree = binary_tree(1)
    (tmp_path / "tree.json").write_text(io.tree_to_json(tree))
    io.write_json(tmp_path / "reward.json", {"reward": [
        {"node": 0, "value": 0.0}, {"node": 1, "value": 2.0}, {"node": 2, "value": 0.0}]})
    return tmp_path


def test_fixture_files_match_schemas(depth1_files):
    check(depth1_files / "tree.json", "tree")
    check(depth1_files / "reward.json", "reward")
    tree = random_tree(2, np.random.default_rng(0))
    io.write_json(depth1_files / "psi.json",
                  io.psi_to_dict(BiReward.random_uniform(tree, np.random.default_rng(1))))
    check(depth1_files / "psi.json", "psi")


def test_floats_written_with_17_digits():
    assert io.fmt(0.1) == "0.10000000000000001"
    assert json.loads(io.dumps({"x": 1 / 3}))["x"] == 1 / 3
    assert json.loads(io.dumps({"x": float("nan")}))["x"] is None


def test_snell_depth1(depth1_files):
    out = depth1_files / "out"
    rc = main(["snell", "--tree", str(depth1_files / "tree.json"),
               "--reward", str(depth1_files / "reward.json"), "--out", str(out)])
    assert rc == 0
    summary = check(out / "summary.json", "snell_summary")
    assert summary["v_root"] == 1.0
    rule = check(out / "rule.json", "rule")
    assert rule["continue"] == [0] and rule["stop"] == [1, 2]
    lines = (out / "values.csv").read_text().splitlines()
    assert lines[0] == "node_id,t,phi,v"
    assert lines[1] == "0,0,0,1"


def test_snell_constant(tmp_path):
    rc = main(["snell", "--depth", "3", "--reward-gen", "constant", "--value", "3",
               "--out", str(tmp_path)])
    assert rc == 0
    assert check(tmp_path / "summary.json", "snell_summary")["v_root"] == 3.0


def test_malformed_json_is_input_error(tmp_path, capsys):
    bad = tmp_path / "tree.json"
    bad.write_text("{ not json")
    assert main(["snell", "--tree", str(bad), "--out", str(tmp_path)]) == 2
    assert "input error" in capsys.readouterr().err


def test_invalid_tree_is_input_error(tmp_path):
    (tmp_path / "tree.json").write_text(json.dumps({"levels": [[0.3, 0.6]]}))
    assert main(["snell", "--tree", str(tmp_path / "tree.json"), "--out", str(tmp_path)]) == 2


def test_double_constant(tmp_path):
    rc = main(["double", "--depth", "2", "--psi-gen", "constant", "--value", "2",
               "--out", str(tmp_path)])
    assert rc == 0
    summary = check(tmp_path / "summary.json", "double_summary")
    assert summary["u_root"] == 2.0
    pair = check(tmp_path / "pair.json", "pair")
    assert pair["tau1"]["stop"] == [0] and pair["tau2"]["stop"] == [0]


def test_double_verify_reports_zero_gap(tmp_path):
    rc = main(["double", "--depth", "3", "--random-probs", "--seed", "5", "--verify",
               "--out", str(tmp_path)])
    assert rc == 0
    summary = check(tmp_path / "summary.json", "double_summary")
    assert summary["oracle_gap"] <= 1e-12
    header = (tmp_path / "u1u2phi.csv").read_text().splitlines()[0]
    assert header == "node_id,t,u1,u2,phi,u"


def test_double_verify_budget_refusal(tmp_path):
    assert main(["double", "--depth", "6", "--verify", "--out", str(tmp_path)]) == 4


def test_verify_command(tmp_path):
    assert main(["verify", "--seeds", "5", "--depth", "3", "--out", str(tmp_path)]) == 0
    report = check(tmp_path / "verify.json", "verify")
    assert report["violations"] == []
    assert report["max_abs_gap_theorem3"] <= 1e-12


def test_verify_fault_injection_names_property(tmp_path, capsys):
    rc = main(["verify", "--seeds", "2", "--depth", "2", "--inject-fault", "--out", str(tmp_path)])
    assert rc == 3
    assert "theorem3" in capsys.readouterr().err


def test_verify_depth5_refused(tmp_path):
    assert main(["verify", "--seeds", "1", "--depth", "5", "--out", str(tmp_path)]) == 4


def test_exchange_outputs(tmp_path):
    rc = main(["--threads", "2", "exchange", "--steps", "40", "--paths", "5000",
               "--out", str(tmp_path)])
    assert rc == 0
    price = check(tmp_path / "price.json", "price")
    assert price["phi0"] <= price["v0"] <= 1.0
    head = (tmp_path / "surface.csv").read_text().splitlines()[0]
    assert head == "k,t,j1,j2,x1,x2,phi,v,exercise,B"
    assert (tmp_path / "boundary.csv").read_text().startswith(
        "k,t,fixed_axis,fixed_index,min_exercise_index")


def test_exchange_near_zero_vol(tmp_path):
    rc = main(["exchange", "--x1", "1.2", "--sigma1", "1e-4", "--sigma2", "1e-4",
               "--steps", "20", "--paths", "0", "--no-surface", "--out", str(tmp_path)])
    assert rc == 0
    assert check(tmp_path / "price.json", "price")["v0"] == pytest.approx(0.2, abs=1e-6)
    assert not (tmp_path / "surface.csv").exists()


@pytest.mark.parametrize("argv", [["--steps", "0"], ["--sigma1", "-0.2"], ["--paths", "-1"]])
def test_exchange_bad_input(tmp_path, argv):
    assert main(["exchange", *argv, "--out", str(tmp_path)]) == 2


def test_reruns_are_bit_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["--threads", "1" if name == "a" else "3", "exchange", "--steps", "30",
                     "--paths", "3000", "--seed", "9", "--out", str(tmp_path / name)]) == 0
        assert main(["double", "--depth", "3", "--seed", "4", "--out",
                     str(tmp_path / name / "d")]) == 0
    for rel in ("price.json", "surface.csv", "boundary.csv", "d/summary.json", "d/pair.json",
                "d/u1u2phi.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_config_merge_flags_win(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 12, "paths": 0, "x1": 1.5, "no_surface": True}))
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "exchange", "--steps", "8", "--out", str(out)]) == 0
    price = check(out / "price.json", "price")
    assert price["n"] == 8
    assert price["paths"] == 0
    assert price["v0"] >= 0.5


def test_bad_config_is_input_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    assert main(["--config", str(cfg), "exchange", "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "multistop", "snell", "--depth", "1",
                          "--reward-gen", "constant", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert json.loads((tmp_path / "summary.json").read_text())["v_root"] == 1.0
