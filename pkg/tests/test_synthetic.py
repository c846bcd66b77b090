import numpy as np
import pandas as pd
import pytest

from chunkformer import ConfigError, SynthConfig, generate, seasonal


def test_generate_shape():
    cfg = SynthConfig(groups=50, min_length=16, max_length=40, singletons=4, seed=1)
    df = generate(cfg)
    assert list(df.columns) == ["user_id", "ts", "event", "hour", "level", "label"]
    sizes = df.groupby("user_id").size()
    assert len(sizes) == 54
    assert (sizes == 1).sum() == 4
    many = sizes[sizes > 1]
    assert many.min() >= 16 and many.max() <= 40
    assert set(df["label"].unique()) <= {0, 1}
    assert df["hour"].between(0, 23).all()


def test_hour_follows_timestamp():
    df = generate(SynthConfig(groups=20, min_length=16, max_length=30, singletons=0))
    assert ((df["ts"] // 3600) % 24 == df["hour"]).all()
    for _, g in df.groupby("user_id"):
        assert (np.diff(g.sort_values("ts")["ts"]) == 3600).all()


def test_label_needs_burst_and_phase():
    df = generate(SynthConfig(groups=200, min_length=16, max_length=32, singletons=0))
    for _, g in df.groupby("user_id"):
        g = g.sort_values("ts")
        z = np.flatnonzero(g["event"].to_numpy() == "z")
        assert len(z) == 3
        burst = np.diff(z).max() == 1
        phase_zero = (g["level"] * seasonal(g["hour"], 24)).sum() > 0.0
        assert g["label"].iloc[0] == int(burst and phase_zero)


def test_generate_is_seeded():
    cfg = SynthConfig(groups=20, min_length=16, max_length=20)
    pd.testing.assert_frame_equal(generate(cfg), generate(cfg))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"groups": 0},
        {"min_length": 8},
        {"min_length": 50, "max_length": 40},
        {"burst_rate": 1.5},
        {"period": 1},
    ],
)
def test_synth_config_errors(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs).validate()
