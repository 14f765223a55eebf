import json

import pytest

from dropout_ua.cli import SEED_ENV, config_hash, main, resolve_seed, run


def write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run_cli(tmp_path, command, cfg, out="out", extra=()):
    path = write(tmp_path, f"{command}.json", cfg)
    return main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


def read_report(tmp_path, out="out"):
    return json.loads((tmp_path / out / "report.json").read_text())


DECOMPOSE = {"seed": 1, "network": {"builtin": "two_sigmoid"}, "filter": {"kind": "dropconnect", "p": 0.5},
             "grid": {"lo": -10, "hi": 10, "points": 64}}


def test_decompose_passes(tmp_path):
    assert run_cli(tmp_path, "decompose", DECOMPOSE) == 0
    rep = read_report(tmp_path)
    assert rep["residual"] < 1e-9 and rep["closed_vs_general_max_diff"] == 0.0
    assert rep["seed"] == 1 and rep["config_sha256"] == config_hash(DECOMPOSE)
    table = json.loads((tmp_path / "out" / "coefficients.json").read_text())
    assert table["r"] == 5


def test_decompose_invalid_probability(tmp_path, capsys):
    cfg = {**DECOMPOSE, "filter": {"kind": "dropconnect", "p": [0.5, 1.0]}}
    assert run_cli(tmp_path, "decompose", cfg) == 2
    assert "probability" in capsys.readouterr().err


def test_schema_violations(tmp_path):
    assert run_cli(tmp_path, "decompose", {"network": {"builtin": "kink"}, "filter": {"kind": "unit_mass"}}) == 2
    assert run_cli(tmp_path, "decompose", {**DECOMPOSE, "bogus": 1}) == 2
    assert run_cli(tmp_path, "mu-check", {"seed": -1}) == 2


def test_unreadable_config(tmp_path):
    assert main(["mu-check", "--config", str(tmp_path / "missing.json")]) == 2


def test_blowup_unit_mass(tmp_path):
    cfg = {"seed": 2, "network": {"builtin": "two_sigmoid"}, "filter": {"kind": "unit_mass"}, "M": [1, 4],
           "runs": 3, "grid": {"lo": -10, "hi": 10, "points": 16}}
    assert run_cli(tmp_path, "blowup", cfg) == 0
    rep = read_report(tmp_path)
    assert all(s["report"]["sup_max"] < 1e-12 for s in rep["per_M"])
    lines = (tmp_path / "out" / "runs.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and lines[1] == "M,x,run_id,value,base_value,abs_err"
    assert len(lines) == 2 + 2 * 3 * 16


def test_blowup_sweep_decays(tmp_path):
    cfg = {"seed": 3, "network": {"builtin": "two_sigmoid"}, "filter": {"kind": "dropconnect", "p": [0.5, 0.0]},
           "M": [16, 64, 256, 1024], "runs": 20, "eps": 0.1, "grid": {"lo": -10, "hi": 10, "points": 128}}
    run_cli(tmp_path, "blowup", cfg)
    rep = read_report(tmp_path)
    assert rep["monotone_decay"] and -0.65 < rep["loglog_slope"] < -0.35


def test_blowup_compose_budget(tmp_path):
    cfg = {"seed": 3, "network": {"builtin": "two_sigmoid"}, "target": {"builtin": "bump"}, "mode": "compose",
           "filter": {"kind": "dropconnect", "p": 0.5}, "eps": 0.6, "runs": 30, "m_cap": 8}
    assert run_cli(tmp_path, "blowup", cfg) == 3
    assert read_report(tmp_path)["status"] == "budget_exceeded"


def test_counterexample_default(tmp_path):
    assert run_cli(tmp_path, "counterexample", {"seed": 5}) == 0
    rep = read_report(tmp_path)
    assert rep["avg_filt_sup_error"] == pytest.approx(1.0, abs=1e-9)
    assert rep["blowup_l2_error"] < 0.1 and rep["blowup_exceed"]["ci_high"] < 0.1


def test_counterexample_identity(tmp_path):
    assert run_cli(tmp_path, "counterexample", {"seed": 5, "activation": "identity", "runs": 50}) == 0
    assert read_report(tmp_path)["avg_filt_sup_error"] < 1e-12


def test_mu_check(tmp_path):
    assert run_cli(tmp_path, "mu-check", {"seed": 1, "r": 6, "trials": 20}) == 0
    assert read_report(tmp_path)["max_deviation"] < 1e-10
    assert run_cli(tmp_path, "mu-check", {"seed": 1, "q": [0.5, 1.0]}) == 0


def test_fit(tmp_path):
    cfg = {"seed": 0, "target": {"builtin": "kink"},
           "fit": {"arch": {"dims": [1, 1, 1], "activations": ["relu", "identity"]}}, "threshold": 1e-6}
    assert run_cli(tmp_path, "fit", cfg) == 0
    net = json.loads((tmp_path / "out" / "network.json").read_text())
    assert len(net["layers"]) == 2 and net["seed"] == 0


def test_fit_then_decompose_from_path(tmp_path):
    cfg = {"seed": 0, "target": {"builtin": "kink"},
           "fit": {"arch": {"dims": [1, 1, 1], "activations": ["relu", "identity"]}}}
    run_cli(tmp_path, "fit", cfg, out="fitted")
    dec = {"seed": 0, "network": {"path": "fitted/network.json"}, "filter": {"kind": "node_dropout", "p": [0.5, 0.5]}}
    assert run_cli(tmp_path, "decompose", dec) == 0


def test_tree_unit_mass(tmp_path):
    cfg = {"seed": 4, "network": {"builtin": "toy_relu"}, "p": 0.0, "draws": 40, "csv_runs": 2, "grid_points": 16}
    assert run_cli(tmp_path, "tree", cfg) == 0
    rep = read_report(tmp_path)
    assert rep["tree_sizes"] == {"2": 1, "3": 1} and rep["passed"]
    tree = json.loads((tmp_path / "out" / "tree.json").read_text())
    assert len(tree["vertices"]) == 3 and all(e["stream"] == e["source"] for e in tree["edges"])
    header = (tmp_path / "out" / "runs.csv").read_text().splitlines()[1]
    assert header == "x,mode,run_id,value,base_value"


def test_tree_inadmissible_zeroth_layer(tmp_path):
    cfg = {"seed": 4, "network": {"builtin": "toy_relu"}, "sigma0": {"kind": "leaky_relu", "slope": -1.0}}
    assert run_cli(tmp_path, "tree", cfg) == 2


def test_tree_budget(tmp_path):
    assert run_cli(tmp_path, "tree", {"seed": 4, "network": {"builtin": "toy_relu"}}) == 3
    assert read_report(tmp_path)["status"] == "budget_exceeded"


def test_tree_needs_two_layers(tmp_path):
    net = {"layers": [{"rows": 1, "cols": 1, "weights": [1.0], "bias": [0.0], "activation": "relu"}]}
    assert run_cli(tmp_path, "tree", {"seed": 1, "network": net}) == 2


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert resolve_seed({"seed": 3}) == 3
    monkeypatch.setenv(SEED_ENV, "7")
    assert resolve_seed({"seed": 3}) == 7
    assert resolve_seed({"seed": 3}, flag="9") == 9


def test_env_seed_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "11")
    run_cli(tmp_path, "mu-check", {"seed": 1, "trials": 5})
    assert read_report(tmp_path)["seed"] == 11


def test_jobs_do_not_change_outputs(tmp_path):
    cfg = {"seed": 3, "network": {"builtin": "two_sigmoid"}, "filter": {"kind": "dropconnect", "p": [0.5, 0.0]},
           "M": [16, 64, 256], "runs": 5, "grid": {"lo": -10, "hi": 10, "points": 32}}
    run_cli(tmp_path, "blowup", cfg, out="a")
    run_cli(tmp_path, "blowup", cfg, out="b", extra=["--jobs", "3"])
    for name in ("report.json", "runs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_api(tmp_path):
    assert run("mu-check", {"seed": 2, "trials": 3}, tmp_path / "o") == 0
