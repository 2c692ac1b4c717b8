"""Configuration handling, exit codes, seed parsing and reproducible outputs."""
import json
import os

import pytest

from fkmsle import cli
from fkmsle.experiments import KINDS, ExperimentConfig, run_experiment, write_outputs


@pytest.mark.parametrize("bad, msg", [
    ({"kind": "nope"}, "unknown experiment kind"),
    ({"kind": "duality-check", "q": 3}, "q = 2"),
    ({"kind": "duality-check", "seeds": []}, "empty"),
    ({"kind": "duality-check", "seeds": [1, 1]}, "distinct"),
    ({"kind": "duality-check", "samples": -1}, "non-negative"),
    ({"kind": "duality-check", "threads": 0}, "threads"),
    ({"kind": "duality-check", "colour": "red"}, "unknown configuration keys"),
    ({"samples": 3}, "kind"),
])
def test_config_rejects(bad, msg):
    with pytest.raises(ValueError, match=msg):
        ExperimentConfig.from_dict(bad)


def test_config_defaults_and_override():
    cfg = ExperimentConfig.from_dict({"kind": "estimate-drift", "tolerances": {"sigmas": 3.0}})
    assert cfg.tolerances == {"slope_band": 0.15, "sigmas": 3.0}
    assert cfg.seeds == [0]


def test_inputs_hash_ignores_out_and_threads():
    a = ExperimentConfig.from_dict({"kind": "z-tables", "out": "x", "threads": 1})
    b = ExperimentConfig.from_dict({"kind": "z-tables", "out": "y", "threads": 4})
    c = ExperimentConfig.from_dict({"kind": "z-tables", "seeds": [5]})
    assert a.inputs_hash() == b.inputs_hash() != c.inputs_hash()


@pytest.mark.parametrize("text, seeds", [
    ("1,2,3", [1, 2, 3]), ("1-4", [1, 2, 3, 4]), ("7, 2-3,", [7, 2, 3]), ("-5", [-5]),
])
def test_seed_list(text, seeds):
    assert cli._seed_list(text) == seeds


def test_every_kind_has_subcommand():
    ap = cli.build_parser()
    for kind in KINDS:
        assert ap.parse_args([kind]).kind == kind


def test_exit_code_pass(tmp_path, capsys):
    assert cli.main(["duality-check", "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["passed"] and out["kind"] == "duality-check"
    assert (tmp_path / "results.json").exists() and (tmp_path / "data" / "duality.csv").exists()


def test_exit_code_tolerance_violation(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"kind": "z-tables", "params": {"n_configs": 2},
                                "tolerances": {"A_rel": 0.0, "mobius": 0.0}}))
    assert cli.main(["z-tables", "--config", str(conf)]) == 2


def test_exit_code_error(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"kind": "duality-check", "bogus": 1}))
    assert cli.main(["duality-check", "--config", str(conf)]) == 1
    assert "unknown configuration keys" in capsys.readouterr().err
    conf.write_text(json.dumps({"kind": "event-s"}))
    assert cli.main(["duality-check", "--config", str(conf)]) == 1
    # a runner failure is an error, not a tolerance failure
    conf.write_text(json.dumps({"kind": "duality-check", "marked": {"offsets": [0, 0]}}))
    assert cli.main(["duality-check", "--config", str(conf)]) == 1


def _tree(d):
    out = {}
    for root, _, files in os.walk(d):
        for f in files:
            if f == "timing.json":
                continue
            p = os.path.join(root, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, d)] = fh.read()
    return out


@pytest.mark.parametrize("cfg", [
    {"kind": "duality-check", "domain": {"cells_x": 2, "cells_y": 2}},
    {"kind": "z-tables", "params": {"n_configs": 3}, "seeds": [11]},
    {"kind": "connection-prob", "samples": 400, "seeds": [1, 2],
     "params": {"exact_domains": [[2, 2, [0, 2, 4, 6]]], "burn_in": 20}},
])
def test_outputs_byte_identical(tmp_path, cfg):
    trees = []
    for run in ("a", "b"):
        rec = run_experiment(ExperimentConfig.from_dict(dict(cfg)))
        write_outputs(rec, str(tmp_path / run))
        trees.append(_tree(tmp_path / run))
    assert trees[0] == trees[1]
    assert "results.json" in trees[0] and any(k.startswith("data") for k in trees[0])
    timing = json.loads((tmp_path / "a" / "timing.json").read_text())
    assert timing["wall_clock"] >= 0


def test_seed_count_split_changes_samples_not_totals():
    base = {"kind": "event-s", "samples": 300, "params": {"domains": [[2, 2, [0, 2, 4, 6]]], "burn_in": 20}}
    r1 = run_experiment(ExperimentConfig.from_dict({**base, "seeds": [1]}))
    r2 = run_experiment(ExperimentConfig.from_dict({**base, "seeds": [1, 2, 3]}))
    assert r1.tables["event_s"][0]["n"] == r2.tables["event_s"][0]["n"] == 300
    assert r1.inputs_hash != r2.inputs_hash


def test_small_connection_run_passes():
    rec = run_experiment(ExperimentConfig.from_dict(
        {"kind": "connection-prob", "samples": 4000, "seeds": [3, 4],
         "params": {"exact_domains": [[2, 2, [0, 2, 4, 6]]], "burn_in": 30}}))
    assert rec.passed, rec.results
    pats = {r["pattern"] for r in rec.tables["connection"]}
    assert pats <= {"00", "01"}


def test_thread_count_does_not_change_results():
    cfg = {"kind": "event-s", "samples": 400, "seeds": [1, 2, 3],
           "params": {"domains": [[2, 2, [0, 2, 4, 6]]], "burn_in": 20}}
    r1 = run_experiment(ExperimentConfig.from_dict({**cfg, "threads": 1}))
    r2 = run_experiment(ExperimentConfig.from_dict({**cfg, "threads": 2}))
    assert r1.results == r2.results and r1.tables == r2.tables
