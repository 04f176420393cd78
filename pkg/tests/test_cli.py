import json
import subprocess
import sys

import pytest

from physprobe import cli


def run_cli(*args):
    return cli.main(list(args))


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SMALL_TRAIN = {"env": {"name": "heavier", "beta": 10},
               "train": {"total_episodes": 32, "n_envs": 8, "hidden": 8, "embed_dim": 4},
               "eval": {"budget": 300}}


def test_defaults_fill_every_key():
    cfg = cli.resolve_config({"env": {"beta": 3}}, seed=5, out="x")
    assert cfg["env"]["beta"] == 3 and cfg["env"]["name"] == "heavier"
    assert cfg["train"]["gamma"] == 0.95 and cfg["seed"] == 5 and cfg["out"] == "x"
    assert cfg["eval"]["dt_grid"] == [0.01, 0.025, 0.05, 0.075, 0.1]


@pytest.mark.parametrize("raw, key", [({"env": {"bta": 3}}, "bta"),
                                      ({"train": {"gamma": 1.5}}, "train.gamma"),
                                      ({"eval": {"budget": "lots"}}, "eval.budget"),
                                      ({"nope": 1}, "nope")])
def test_schema_error_names_key(raw, key):
    with pytest.raises(cli.ConfigError) as exc:
        cli.resolve_config(raw)
    assert key in str(exc.value)


def test_bad_config_exit_code_and_error_line(tmp_path, capsys):
    path = write_cfg(tmp_path, {"env": {"bta": 3}})
    assert run_cli("train", "--config", path, "--out", str(tmp_path / "o")) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and "bta" in err["message"]


def test_missing_checkpoint(tmp_path, capsys):
    assert run_cli("eval", "--out", str(tmp_path / "o"), "--checkpoint", str(tmp_path / "x")) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "checkpoint"
    assert run_cli("sweep", "--out", str(tmp_path / "o")) == 2


def test_train_eval_outputs_and_reproducibility(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TRAIN)
    outs = []
    for k in range(2):
        out = tmp_path / f"train{k}"
        assert run_cli("train", "--config", cfg, "--seed", "3", "--out", str(out)) == 0
        outs.append(out)
    for name in ("seed.txt", "VERSION", "params.ppck", "curve.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    configs = [json.loads((o / "config.json").read_text()) for o in outs]
    assert [c.pop("out") for c in configs] == [str(o) for o in outs]
    assert configs[0] == configs[1]
    resolved = json.loads((outs[0] / "config.json").read_text())
    assert resolved["seed"] == 3 and resolved["train"]["lr"] == 7e-4
    assert (outs[0] / "seed.txt").read_text() == "3\n"

    evals = []
    for k in range(2):
        out = tmp_path / f"eval{k}"
        assert run_cli("eval", "--config", cfg, "--checkpoint", str(outs[0] / "params.ppck"),
                       "--out", str(out)) == 0
        evals.append(out)
    for name in ("records.ndjson", "summary.csv"):
        assert (evals[0] / name).read_bytes() == (evals[1] / name).read_bytes()
    lines = (evals[0] / "records.ndjson").read_text().splitlines()
    assert sum(json.loads(x)["steps"] for x in lines) <= 300
    assert all(json.loads(x)["randomized"] is False for x in lines)


def test_randomized_flag_marks_records(tmp_path):
    cfg = write_cfg(tmp_path, {"env": {"beta": 3}, "eval": {"budget": 200}})
    out = tmp_path / "o"
    assert run_cli("oracle", "se", "--config", cfg, "--randomized", "--out", str(out)) == 0
    recs = [json.loads(x) for x in (out / "records.ndjson").read_text().splitlines()]
    assert recs and all(r["randomized"] is True for r in recs)
    header, row = (out / "summary.csv").read_text().splitlines()
    assert header.startswith("env,beta,policy,randomized") and ",true," in row


def test_checkpoint_env_mismatch(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_TRAIN)
    assert run_cli("train", "--config", cfg, "--out", str(tmp_path / "t")) == 0
    towers = write_cfg(tmp_path, {"env": {"name": "towers"}}, "towers.json")
    assert run_cli("eval", "--config", towers, "--checkpoint", str(tmp_path / "t" / "params.ppck"),
                   "--out", str(tmp_path / "e")) == 2
    assert "obs_dim" in json.loads(capsys.readouterr().err)["message"]


def test_sweep_command(tmp_path):
    cfg = write_cfg(tmp_path, {"env": {"name": "towers", "actuator": "fist"},
                               "train": {"total_episodes": 8, "n_envs": 8, "hidden": 4,
                                         "embed_dim": 0},
                               "eval": {"dt_grid": [0.05, 0.1], "sweep_episodes": 4}})
    assert run_cli("train", "--config", cfg, "--out", str(tmp_path / "t")) == 0
    out = tmp_path / "s"
    assert run_cli("sweep", "--config", cfg, "--checkpoint", str(tmp_path / "t" / "params.ppck"),
                   "--out", str(out)) == 0
    rows = (out / "fig5.csv").read_text().splitlines()
    assert rows[0].startswith("dt,") and len(rows) == 3
    recs = [json.loads(x) for x in (out / "sweep_records.ndjson").read_text().splitlines()]
    assert sorted({r["control_dt"] for r in recs}) == [0.05, 0.1]


def test_gapdist_command(tmp_path):
    out = tmp_path / "g"
    cfg = write_cfg(tmp_path, {"gapdist": {"betas": [3, 10], "n": 10000}})
    assert run_cli("gapdist", "--config", cfg, "--out", str(out)) == 0
    lines = (out / "fig1_right.csv").read_text().splitlines()
    assert lines[0] == "beta,x,cdf" and len(lines) == 1 + 2 * 101
    assert (out / "VERSION").read_text().strip()


def test_oracle_requires_heavier(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"env": {"name": "towers"}})
    assert run_cli("oracle", "scan", "--config", cfg, "--out", str(tmp_path / "o")) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "physprobe", "gapdist", "--out",
                          str(tmp_path / "m")], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["ok"]
    res = subprocess.run([sys.executable, "-m", "physprobe", "eval", "--out", str(tmp_path / "n")],
                         capture_output=True, text=True)
    assert res.returncode == 2 and json.loads(res.stderr)["error"] == "checkpoint"
