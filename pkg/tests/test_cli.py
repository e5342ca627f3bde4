import json

import pytest

from clusterfair.cli import COMMANDS, build_parser, main
from clusterfair.harness import ExperimentConfig


@pytest.fixture
def config_file(tmp_path):
    cfg = ExperimentConfig(d=3, n=400, seeds=(0,), epochs=2, propensity_epochs=2, hidden=8,
                           propensity_hidden=8, batch_size=64, lambda_grid=(0.0, 2.0),
                           lambda_sweep=(0.0, 5.0), n_eval=40)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_every_subcommand_takes_common_flags():
    parser = build_parser()
    for name in COMMANDS:
        args = parser.parse_args([name, "--seed", "3", "--config", "c.json", "--out", "o"])
        assert args.seed == 3 and str(args.config) == "c.json" and str(args.out) == "o"


@pytest.mark.parametrize("command", ["gen", "graph", "adjust"])
def test_problem_commands(command, config_file, tmp_path, capsys):
    out = tmp_path / "out"
    code, io = run([command, "--seed", "1", "--config", str(config_file), "--out", str(out)], capsys)
    assert code == 0
    json.loads(io.out)
    assert any((out / "graphs").iterdir())


def test_gen_writes_splits(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    run(["gen", "--config", str(config_file), "--out", str(out)], capsys)
    names = sorted(p.name for p in (out / "data").glob("*.csv"))
    assert [n.rsplit("_", 1)[1] for n in names] == ["test.csv", "train.csv", "validation.csv"]


def test_train_then_eval_checkpoint(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    code, io = run(["train", "--config", str(config_file), "--out", str(out),
                    "--method", "oracle"], capsys)
    assert code == 0
    ckpt = json.loads(io.out)["checkpoint"]
    code, io = run(["eval", "--config", str(config_file), "--out", str(out), "--checkpoint", ckpt], capsys)
    assert code == 0
    assert json.loads(io.out)["unfairness"] >= 0


def test_eval_cell(config_file, tmp_path, capsys):
    code, io = run(["eval", "--config", str(config_file), "--out", str(tmp_path),
                    "--method", "c-ifair", "--lam", "2"], capsys)
    assert code == 0 and json.loads(io.out)["lam"] == 2.0


def test_table_and_tradeoff(config_file, tmp_path, capsys):
    code, io = run(["table", "--config", str(config_file), "--out", str(tmp_path),
                    "--methods", "full", "unaware"], capsys)
    assert code == 0 and [r["method"] for r in json.loads(io.out)] == ["full", "unaware"]
    code, io = run(["tradeoff", "--config", str(config_file), "--out", str(tmp_path),
                    "--lambdas", "0", "3"], capsys)
    assert code == 0 and len(json.loads(io.out)["rows"]) == 2


def test_empty_methods_table(config_file, tmp_path, capsys):
    code, io = run(["table", "--config", str(config_file), "--out", str(tmp_path), "--methods"], capsys)
    assert code == 0 and json.loads(io.out) == []


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"d": 0}))
    code, io = run(["graph", "--config", str(path)], capsys)
    assert code == 2 and "error" in io.err
