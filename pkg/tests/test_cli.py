import json

import pytest

from cvmim.cli import main, parse_config, ConfigError

TINY = {
    "seed": 0,
    "dataset": {"seqs_per_class": 2, "frames": 16, "seed": 1},
    "train": {"iterations": 12, "batch_size": 8, "dim": 8, "hidden": 16, "q_hidden": 8,
              "d_hidden": 16, "critic_hidden": 16, "critic_out": 8, "checked": False},
    "eval": {"head": "linear", "fractions": [1.0], "retrieval_queries": 5},
}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(TINY, indent=1))
    return str(p)


@pytest.fixture
def trained(tmp_path, config):
    out = tmp_path / "run"
    assert main(["train", "--config", config, "--out", str(out)]) == 0
    return out


def test_unknown_subcommand_prints_usage(capsys):
    assert main(["fly"]) != 0
    assert "usage" in capsys.readouterr().err


def test_config_errors_name_line_and_field(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "seed": 0,\n "train": {"iterations": 5,}\n}')
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="batchsize"):
        parse_config('{"train": {"batchsize": 3}}')
    with pytest.raises(ConfigError, match="colour"):
        parse_config('{"colour": 3}')
    with pytest.raises(ConfigError, match="head"):
        parse_config('{"eval": {"head": "svm"}}')


def test_train_writes_config_log_and_checkpoint(trained):
    saved = json.loads((trained / "config.json").read_text())
    assert saved["train"]["iterations"] == 12 and saved["train"]["seed"] == 0
    assert len((trained / "train.log.jsonl").read_text().splitlines()) == 12
    assert (trained / "checkpoint" / "params.bin").is_file()


def test_train_is_reproducible_from_its_config(tmp_path, trained):
    again = tmp_path / "again"
    assert main(["train", "--config", str(trained / "config.json"), "--out", str(again)]) == 0
    for f in ("train.log.jsonl", "checkpoint/params.bin", "checkpoint/manifest.json"):
        assert (again / f).read_bytes() == (trained / f).read_bytes()


def test_refuses_non_empty_output_without_force(trained, config, capsys):
    assert main(["train", "--config", config, "--out", str(trained)]) == 2
    assert "--force" in capsys.readouterr().err
    assert main(["train", "--config", config, "--out", str(trained), "--force"]) == 0


def test_eval_without_checkpoint(tmp_path, config, capsys):
    assert main(["eval", "--config", config, "--out", str(tmp_path / "e")]) != 0
    assert "checkpoint not found" in capsys.readouterr().err


def test_eval_and_retrieve(tmp_path, trained, config, capsys):
    out = tmp_path / "ev"
    ck = str(trained / "checkpoint")
    assert main(["eval", "--config", config, "--checkpoint", ck, "--out", str(out)]) == 0
    res = json.loads((out / "results.json").read_text())
    assert {"cvmim", "raw2d"} <= set(res["single_shot"])
    assert (out / "results.csv").read_text().startswith("protocol,train_view,test_view,accuracy")
    capsys.readouterr()
    assert main(["retrieve", "--checkpoint", ck, "--query", "0", "3", "1", "-k", "4"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["rank"] for r in rows] == [1, 2, 3, 4]
    assert all(r["sequence"] != 0 for r in rows)
    d = [r["distance"] for r in rows]
    assert d == sorted(d)


def test_oracle_exit_zero_and_no_dpi_violations(capsys):
    assert main(["oracle", "--trials", "1000", "--seed", "0", "--samples", "0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["propositions"]["dpi_violations"] == 0


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--max-coords", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 5 and all(json.loads(line)["passed"] for line in lines)


def test_ablate_fusion_table(tmp_path, config, capsys):
    out = tmp_path / "ab"
    assert main(["ablate-fusion", "--config", config, "--out", str(out)]) == 0
    rows = json.loads((out / "fusion_ablation.json").read_text())
    assert sorted(r["fusion"] for r in rows) == ["concat", "mixture_of_experts", "product_of_experts"]
    assert "spread" in capsys.readouterr().out
