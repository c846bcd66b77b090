import json

import pytest

from chunkformer import ConfigError, KeywordError, attention_footprint
from chunkformer.cli import RunConfig, main, read_config_file

SMALL = [
    "model.seq_len=24",
    "model.d_model=8",
    "model.heads=2",
    "train.epochs=1",
    "train.progress=false",
    "train.batch_size=16",
]


def _sets(items):
    out = []
    for item in items:
        out += ["--set", item]
    return out


def test_run_config_preset_and_overrides():
    run = RunConfig(preset="td", train={"epochs": 3})
    assert run.data.key_column == "ip"
    assert run.data.categorical == ["app", "device", "os", "channel"]
    assert run.train.learning_rate == 1e-5
    assert run.train.epochs == 3  # the section value wins over the preset
    run.override("model.seq_len=480")
    assert run.model.seq_len == 480
    assert run.model.seed == 7


def test_run_config_file_round_trip(tmp_path):
    run = RunConfig(preset="td", seed=3)
    run.override("train.learning_rate=0.002")
    fn = run.save(tmp_path / "run.json")
    other = RunConfig.load(fn)
    assert other.to_dict() == run.to_dict()
    assert other.train.seed == 3


def test_run_config_int_for_float():
    run = RunConfig()
    run.override("train.learning_rate=1")
    assert run.train.learning_rate == 1.0
    assert isinstance(run.train.learning_rate, float)


def test_run_config_errors(tmp_path):
    with pytest.raises(KeywordError):
        RunConfig().override("model.width=3")
    with pytest.raises(KeywordError):
        RunConfig().override("optimizer.lr=3")
    with pytest.raises(ConfigError):
        RunConfig().override("model.d_model")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        RunConfig(preset="nope")


def test_long_sequence_configuration():
    run = RunConfig(model={"seq_len": 720, "stages": [3, 4]})
    run.model.validate()
    assert attention_footprint(run.model).per_stage == [3 * 720, 4 * 720]


def test_command_chain(tmp_path, capsys):
    out = tmp_path / "run"
    common = ["--output-dir", str(out)]
    synth = ["synth.groups=40", "synth.min_length=16", "synth.max_length=30"]
    assert main(["synth"] + common + _sets(synth)) == 0
    assert (out / "synthetic.csv").exists()

    args = ["preprocess"] + common + ["--preset", "synthetic"] + _sets(SMALL)
    assert main(args) == 0
    cfg = out / "config.json"
    saved = json.loads(cfg.read_text())
    assert saved["model"]["seq_len"] == 24
    assert saved["data"]["input"] == str(out / "synthetic.csv")

    assert main(["train", "--config", str(cfg)]) == 0
    assert (out / "best.npz").exists() and (out / "loss_curve.png").exists()
    assert (out / "train.log").exists()

    assert main(["eval", "--config", str(cfg), "--split", "val"]) == 0
    report = json.loads((out / "eval_val.json").read_text())
    assert report["format"] == "chunkformer-eval"
    assert 0.0 <= report["macro_f1"] <= 1.0

    # same seed and config, a second output directory
    again = out / "again"
    args = ["train", "--config", str(cfg), "--output-dir", str(again)]
    assert main(args + ["--manifest", str(out / "manifest")]) == 0
    assert (again / "metrics.jsonl").read_bytes() == (out / "metrics.jsonl").read_bytes()
    assert "best checkpoint" in capsys.readouterr().out


def test_bench_command(tmp_path):
    bench = [
        "bench.lengths=[12,24]",
        "bench.d_model=8",
        "bench.heads=2",
        "bench.repetitions=3",
        "bench.pin_cpu=false",
    ]
    args = ["bench", "--output-dir", str(tmp_path), "--no-chart", "--no-timing"]
    assert main(args + _sets(bench)) == 0
    doc = json.loads((tmp_path / "bench" / "bench.json").read_text())
    assert len(doc["rows"]) == 4


exit_codes = [  # extra arguments, exit code
    (["train"], 3),  # no manifest
    (["bench", "--set", "bench.repetitions=2"], 2),
    (["train", "--set", "model.width=8"], 2),
    (["train", "--set", "model.heads=3"], 2),
    (["preprocess"], 2),  # no input file named
    (["preprocess", "--set", "data.input=nothing.csv", "--set", 'data.categorical=["a"]'], 3),
]


@pytest.mark.parametrize("test_input, expected", exit_codes)
def test_exit_codes(test_input, expected, tmp_path, capsys):
    assert main(test_input + ["--output-dir", str(tmp_path)]) == expected
    assert "error" in capsys.readouterr().err


def test_newer_config_version(tmp_path, capsys):
    fn = tmp_path / "run.json"
    fn.write_text(json.dumps({"format": "chunkformer-run-config", "version": 99}))
    assert main(["train", "--config", str(fn), "--output-dir", str(tmp_path)]) == 5
    assert "compatibility" in capsys.readouterr().err
