import copy

import numpy as np
import pandas as pd
import pytest

from chunkformer import (
    Adam,
    Checkpoint,
    CompatibilityError,
    ConfigError,
    InputError,
    ModelConfig,
    TrainConfig,
    build_model,
    evaluate,
    length_stability,
    train,
    train_epoch,
)


def small_model(**kw):
    args = dict(d_model=8, heads=2, stages=[3, 4], seq_len=24, prediction_mode="mean_pool")
    args.update(kw)
    return ModelConfig(**args)


def small_train(**kw):
    args = dict(epochs=2, batch_size=8, progress=False, learning_rate=5e-3)
    args.update(kw)
    return TrainConfig(**args)


def test_train_writes_artifacts(manifest, tmp_path):
    result = train(small_model(), manifest, small_train(), tmp_path)
    assert (tmp_path / "best.npz").exists() and (tmp_path / "last.npz").exists()
    history = pd.read_json(tmp_path / "metrics.jsonl", lines=True)
    assert history["epoch"].tolist() == [1, 2]
    assert np.all(np.isfinite(history["train_loss"]))
    assert 0.0 <= result.best.macro_f1 <= 1.0
    assert len(result.best.loss_curve) == 2
    assert result.best.footprint["peak"] > 0


def test_train_is_deterministic(manifest, tmp_path):
    train(small_model(), manifest, small_train(), tmp_path / "a")
    train(small_model(), manifest, small_train(), tmp_path / "b")
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert a == b
    sa = Checkpoint.load(tmp_path / "a" / "last.npz").state
    sb = Checkpoint.load(tmp_path / "b" / "last.npz").state
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_resume_matches_uninterrupted_run(manifest, tmp_path):
    full = train(small_model(), manifest, small_train(epochs=3), tmp_path / "full")
    train(small_model(), manifest, small_train(epochs=1), tmp_path / "part")
    resumed = train(
        small_model(),
        manifest,
        small_train(epochs=3, resume=str(tmp_path / "part" / "last.npz")),
        tmp_path / "part",
    )
    assert len(resumed.history) == 3
    assert np.allclose(
        resumed.history["train_loss"], full.history["train_loss"], rtol=1e-9
    )
    a = full.model.state_dict()
    b = resumed.model.state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_resume_with_no_epochs_left(manifest, tmp_path):
    train(small_model(), manifest, small_train(epochs=1), tmp_path / "part")
    done = small_train(epochs=1, resume=str(tmp_path / "part" / "last.npz"))
    result = train(small_model(), manifest, done, tmp_path / "elsewhere")
    assert result.history.empty
    assert result.best.loss_curve == []
    assert result.best.epoch == 1
    assert 0.0 <= result.best.macro_f1 <= 1.0


def test_frozen_model_keeps_weights(manifest):
    cfg = small_model()
    model = build_model(cfg, manifest.schema.vocab_sizes)
    params = list(model.named_parameters().values())
    for p in params:
        p.requires_grad = False
    before = {k: v.copy() for k, v in model.state_dict().items()}
    data = manifest.windows("train", cfg.seq_len, cfg.prediction_mode)
    loss, norm = train_epoch(
        model, Adam(params, lr=1e-2), data, small_train(epochs=1), np.random.default_rng(0)
    )
    assert np.isfinite(loss) and norm == 0.0
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_evaluate_checkpoint(manifest, tmp_path):
    result = train(small_model(), manifest, small_train(epochs=1), tmp_path)
    report = evaluate(result.best_path, manifest, "test")
    assert report.split == "test" and report.epoch == 1
    assert report.n == len(manifest.windows("test", 24))
    assert set(report.per_class) == {0, 1}


def test_evaluate_schema_mismatch(manifest, tmp_path):
    result = train(small_model(), manifest, small_train(epochs=1), tmp_path)
    other = copy.deepcopy(manifest)
    other.schema.features[0].vocab.append("zzz")
    with pytest.raises(CompatibilityError):
        evaluate(result.best_path, other, "test")


def test_checkpoint_round_trip(manifest, tmp_path):
    result = train(small_model(), manifest, small_train(epochs=1), tmp_path)
    ck = Checkpoint.load(result.last_path)
    assert ck.header["schema_hash"] == manifest.schema_hash
    assert ck.adam is not None and ck.adam.t > 0
    model = ck.build_model()
    state = result.model.state_dict()
    assert all(np.array_equal(model.state_dict()[k], state[k]) for k in state)


def test_length_stability(manifest, tmp_path):
    frame, spread = length_stability(
        small_model(), manifest, small_train(epochs=1), tmp_path, lengths=[12, 24]
    )
    assert frame["seq_len"].tolist() == [12, 24]
    assert spread == frame["val_macro_f1"].max() - frame["val_macro_f1"].min()
    assert (tmp_path / "L12" / "best.npz").exists()


train_config_errors = [
    {"learning_rate": 0.0},
    {"learning_rate": -1e-3},
    {"epochs": 0},
    {"batch_size": 0},
    {"pos_weight": -1.0},
    {"sweep_lengths": [240, 0]},
]


@pytest.mark.parametrize("kwargs", train_config_errors)
def test_train_config_errors(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs).validate()


def test_train_config_types():
    with pytest.raises(InputError):
        TrainConfig(learning_rate=1)
    with pytest.raises(InputError):
        TrainConfig(progress=1)


def test_reference_run_configuration():
    tcfg = TrainConfig(learning_rate=5e-4, epochs=10)
    tcfg.validate()
    assert tcfg.batch_size == 32 and tcfg.positive_weight is None
