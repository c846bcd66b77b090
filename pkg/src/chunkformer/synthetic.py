"""
     chunkformer: multi-stage chunked transformer encoder for long sequences
     Copyright (C), 2024 the chunkformer developers

     This program is free software: you can redistribute it and/or modify
     it under the terms of the GNU General Public License as published by
     the Free Software Foundation, either version 3 of the License, or
     (at your option) any later version.

     This program is distributed in the hope that it will be useful,
     but WITHOUT ANY WARRANTY; without even the implied warranty of
     MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
     GNU General Public License for more details.

     You should have received a copy of the GNU General Public License
     along with this program.  If not, see <https://www.gnu.org/licenses/>.

     A small event log with a known answer. Every user has three "z"
     events, either back to back (a burst) or spread out, and a numeric
     level that follows a daily cycle in one of two phases. Records are
     hourly and start at a random hour of the day. The label is 1 only
     for a burst AND phase 0. Token counts, hour counts and the level
     distribution are the same for every user, so averaging each column
     over the sequence cannot recover the label.
"""

from __future__ import annotations
import logging
import pathlib as pl
import typing as tp

import numpy as np
import pandas as pd

from .chunkformer_base import chunkformerBase, ConfigError

TOKENS = list("abcdef")
MARKER = "z"


class SynthConfig(chunkformerBase):
    """Example::

        SynthConfig(groups=2000,
                    min_length=48,
                    max_length=240,
                    singletons=20,   # one-record users, removed by preprocess
                    period=24,       # records (hours) per cycle
                    noise=0.3,
                    burst_rate=0.5,
                    phase_rate=0.5,  # share of users in phase 0
                    seed=7,
                    )
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "groups": [2000, (int)],
            "min_length": [48, (int)],
            "max_length": [240, (int)],
            "singletons": [20, (int)],
            "period": [24, (int)],
            "noise": [0.3, (float, int)],
            "burst_rate": [0.5, (float)],
            "phase_rate": [0.5, (float)],
            "seed": [7, (int)],
        }
        self.lrk: tp.List = []
        self.__initialize_keyword_variables__(kwargs)

    def validate(self) -> None:
        if self.groups < 1:
            raise ConfigError("synth: groups must be >= 1")
        if not 16 <= self.min_length <= self.max_length:
            raise ConfigError("synth: need 16 <= min_length <= max_length")
        if self.singletons < 0 or self.period < 2 or self.noise < 0:
            raise ConfigError("synth: need singletons >= 0, period >= 2 and noise >= 0")
        for key in ("burst_rate", "phase_rate"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"synth: {key} must be in [0, 1]")


def _marker_positions(rng: np.random.Generator, n: int, burst: bool) -> np.ndarray:
    if burst:
        s = int(rng.integers(0, n - 2))
        return np.array([s, s + 1, s + 2])
    while True:
        pos = np.sort(rng.choice(n, size=3, replace=False))
        if np.diff(pos).min() > 4:
            return pos


def seasonal(hour: np.ndarray, period: int) -> np.ndarray:
    """The phase 0 cycle, peaking a quarter period in"""
    return np.sin(2.0 * np.pi * np.asarray(hour) / period)


def generate(cfg: SynthConfig) -> pd.DataFrame:
    """Rows user_id, ts, event, hour, level, label in shuffled order"""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    parts = []
    for g in range(cfg.groups):
        n = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        burst = bool(rng.random() < cfg.burst_rate)
        sign = 1.0 if rng.random() < cfg.phase_rate else -1.0  # phase 0 or pi
        t = int(rng.integers(0, cfg.period)) + np.arange(n)
        hour = t % cfg.period
        events = rng.choice(TOKENS, size=n).astype(object)
        events[_marker_positions(rng, n, burst)] = MARKER
        level = sign * seasonal(hour, cfg.period) + cfg.noise * rng.standard_normal(n)
        parts.append(
            pd.DataFrame(
                {
                    "user_id": f"u{g:05d}",
                    "ts": 1_700_006_400 + 3600 * t,
                    "event": events,
                    "hour": hour,
                    "level": np.round(level, 3),
                    "label": int(burst and sign > 0),
                }
            )
        )
    for s in range(cfg.singletons):
        parts.append(
            pd.DataFrame(
                {
                    "user_id": [f"solo{s:03d}"],
                    "ts": [1_700_006_400],
                    "event": [TOKENS[s % len(TOKENS)]],
                    "hour": [0],
                    "level": [0.0],
                    "label": [0],
                }
            )
        )
    df = pd.concat(parts, ignore_index=True)
    df = df.iloc[rng.permutation(len(df))].reset_index(drop=True)
    logging.info(
        f"synthetic log: {cfg.groups} users, {len(df)} rows, "
        f"{df.groupby('user_id')['label'].first().mean():.2f} positive"
    )
    return df


def write_synthetic(cfg: SynthConfig, fn: pl.Path | str) -> pl.Path:
    fn = pl.Path(fn)
    fn.parent.mkdir(parents=True, exist_ok=True)
    generate(cfg).to_csv(fn, index=False)
    return fn


def synthetic_data_config(fn: pl.Path | str) -> dict:
    """DataConfig keywords that read a file written by write_synthetic"""
    return {
        "input": str(fn),
        "key_column": "user_id",
        "time_column": "ts",
        "label_column": "label",
        "categorical": ["event", "hour"],
        "numeric": ["level"],
        "precision": 0.01,
        "max_vocab": 24,  # level buckets, keeps all 24 hours
    }
