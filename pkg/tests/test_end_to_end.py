"""Full size synthetic run with the settings of the synthetic preset.
Takes several minutes, run with

pytest -m slow
"""

import numpy as np
import pandas as pd
import pytest

from chunkformer import ModelConfig, TrainConfig, preprocess, train, write_synthetic
from chunkformer.cli import RunConfig


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("e2e")
    run = RunConfig(preset="synthetic", output_dir=str(d), train={"progress": False})
    write_synthetic(run.synth, d / "synthetic.csv")
    return run


@pytest.fixture(scope="module")
def full_manifest(run):
    return preprocess(run.data, run.manifest_dir)


@pytest.mark.slow
def test_synthetic_groups(full_manifest):
    n = sum(len(s) for s in full_manifest.splits.values())
    assert n == 2000
    lengths = np.diff(full_manifest.splits["train"].offsets)
    assert lengths.min() >= 48 and lengths.max() <= 240


@pytest.mark.slow
def test_chunkformer_reaches_target(run, full_manifest, tmp_path):
    assert run.model.d_model == 32 and run.model.stages == [3, 4]
    assert run.train.epochs == 10 and run.train.learning_rate == 5e-4
    chunked = train(run.model, full_manifest, run.train, tmp_path / "chunkformer")
    mean_pool = ModelConfig(**{**run.model.to_dict(), "encoder": "mean_pool"})
    baseline = train(mean_pool, full_manifest, run.train, tmp_path / "baseline")

    best = chunked.history["val_auc"].max()
    assert best >= 0.90
    assert best >= baseline.history["val_auc"].max() + 0.02
    assert np.all(np.isfinite(chunked.history["train_loss"]))
    assert baseline.best.footprint == {}


@pytest.mark.slow
def test_synthetic_run_is_reproducible(run, full_manifest, tmp_path):
    short = TrainConfig(**{**run.train.to_dict(), "epochs": 2, "batch_size": 32})
    a = train(run.model, full_manifest, short, tmp_path / "a")
    b = train(run.model, full_manifest, short, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (
        tmp_path / "b" / "metrics.jsonl"
    ).read_bytes()
    history = pd.read_json(tmp_path / "a" / "metrics.jsonl", lines=True)
    assert history["val_macro_f1"].between(0.0, 1.0).all()
    assert a.best.epoch == b.best.epoch
