import csv
import json

import pytest

from ilbench import cli, verify
from ilbench.cliff import CliffConfig, build_cliff
from ilbench.mdp import mdp_from_json, policy_from_json


def test_cliff_command_round_trips(tmp_path):
    out = tmp_path / "cliff.json"
    assert cli.main(["cliff", "--preset", "theorem", "--reward-variant", "R_E_only", "--out", str(out)]) == 0
    obj = json.loads(out.read_text())
    assert obj["cliff"]["reward_variant"] == "R_E_only"
    mdp, expert = mdp_from_json(obj["mdp"]), policy_from_json(obj["expert"])
    ref_mdp, ref_expert = build_cliff(CliffConfig(**obj["cliff"]))
    assert mdp.num_states == ref_mdp.num_states and mdp.horizon == ref_mdp.horizon
    assert (expert.table == ref_expert.table).all()


def test_run_command_writes_outputs(tmp_path, capsys):
    config = {
        "env": {"cliff": {"N0": 4, "N1": 8, "H": 6, "A": 3, "beta": 0.2}},
        "algorithms": ["bc", "stagger", {"algorithm": "warm_stagger", "offline_pairs": 12}],
        "num_runs": 2, "equal_cost": True, "max_cost": 60, "eval_every_cost": 20,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(path), "--out", str(out), "--threads", "1"]) == 0
    assert "results.csv" in capsys.readouterr().out
    rows = list(csv.DictReader((out / "results.csv").open()))
    assert {r["run_group"] for r in rows} == {"bc", "stagger", "warm_stagger(12)"}
    assert sorted(p.name for p in out.iterdir()) == ["config.json", "curves.svg", "ledger.csv", "results.csv"]


def test_verify_command_reports_and_sets_exit_code(monkeypatch, capsys):
    passing = verify.CheckResult("sandwich", 10, 0, 0.01)
    failing = verify.CheckResult("regret", 10, 3, 0.01)
    monkeypatch.setattr(cli, "run_suite", lambda name, seed: [passing])
    assert cli.main(["verify", "--suite", "lemmas"]) == 0
    assert "sandwich" in capsys.readouterr().out
    monkeypatch.setattr(cli, "run_suite", lambda name, seed: [passing, failing])
    assert cli.main(["verify"]) == 1


def test_verify_lemma_check_runs_small():
    result = verify.check_hellinger_sandwich(200, seed=1)
    assert result.passed and result.trials == 200


def test_parser_rejects_unknown_suite():
    with pytest.raises(SystemExit):
        cli.main(["verify", "--suite", "everything"])
