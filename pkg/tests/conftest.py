import os

os.environ.setdefault("MPLBACKEND", "Agg")

import numpy as np
import pytest

from chunkformer import (
    DataConfig,
    SynthConfig,
    preprocess,
    synthetic_data_config,
    write_synthetic,
)


@pytest.fixture(scope="session")
def synthetic_csv(tmp_path_factory):
    """a small generated log, 60 users of 16 to 30 events"""
    fn = tmp_path_factory.mktemp("synth") / "synthetic.csv"
    cfg = SynthConfig(groups=60, min_length=16, max_length=30, singletons=3, seed=3)
    return write_synthetic(cfg, fn)


@pytest.fixture(scope="session")
def manifest(synthetic_csv, tmp_path_factory):
    cfg = DataConfig(**synthetic_data_config(synthetic_csv), splits=[0.6, 0.2, 0.2])
    return preprocess(cfg, tmp_path_factory.mktemp("manifest"))


@pytest.fixture
def rng():
    return np.random.default_rng(42)
