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

     Measure attention score memory and wall time of chunked against
     full attention over a range of sequence lengths.
"""

from __future__ import annotations
import contextlib
import logging
import os
import time
import typing as tp
from dataclasses import dataclass

import numpy as np
import pandas as pd
import psutil
from scipy.stats import iqr

from . import Q_
from .chunkformer_base import chunkformerBase, ConfigError, ContractError
from .numerics import DTYPE, GradTape
from .attention import ScoreMatrixCounter
from .chunkformer import ChunkFormer, ModelConfig, attention_footprint
from .utility_functions import check_chunk_sizes

FULL = "full"


class BenchConfig(chunkformerBase):
    """Sweep settings. Example::

        BenchConfig(lengths=[180, 240, 480, 720],
                    variants=[[3, 4], "full"],  # chunk sizes or "full"
                    d_model=32,
                    heads=4,
                    batch_size=1,
                    repetitions=5,              # >= 3
                    warmup=1,
                    backward=False,             # time forward + backward
                    pin_cpu=True,
                    seed=7,
                    )
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "lengths": [[180, 240, 480, 720], (list)],
            "variants": [[[3, 4], FULL], (list)],
            "d_model": [32, (int)],
            "heads": [4, (int)],
            "batch_size": [1, (int)],
            "repetitions": [5, (int)],
            "warmup": [1, (int)],
            "backward": [False, (bool)],
            "pin_cpu": [True, (bool)],
            "seed": [7, (int)],
        }
        self.lrk: tp.List = []
        self.__initialize_keyword_variables__(kwargs)

    def validate(self) -> None:
        if not self.lengths or any(not isinstance(L, int) or L < 1 for L in self.lengths):
            raise ConfigError(f"bench lengths {self.lengths} must be ints >= 1")
        if not self.variants:
            raise ConfigError("bench needs at least one variant")
        for v in self.variants:
            if v != FULL:
                if not isinstance(v, list):
                    raise ConfigError(f"variant {v!r} must be a list of chunk sizes or 'full'")
                check_chunk_sizes(v)
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} must be divisible by heads {self.heads}")
        if self.repetitions < 3:
            raise ConfigError(f"repetitions = {self.repetitions} must be >= 3")
        if self.batch_size < 1 or self.warmup < 0:
            raise ConfigError("batch_size must be >= 1 and warmup >= 0")

    def cases(self) -> list[BenchCase]:
        return [
            BenchCase(
                length=L,
                d_model=self.d_model,
                heads=self.heads,
                stages=v,
                batch_size=self.batch_size,
                repetitions=self.repetitions,
                backward=self.backward,
                warmup=self.warmup,
                seed=self.seed,
            )
            for L in self.lengths
            for v in self.variants
        ]


@dataclass
class BenchCase:
    length: int
    d_model: int
    heads: int
    stages: list[int] | str
    batch_size: int = 1
    repetitions: int = 5
    backward: bool = False
    warmup: int = 1
    seed: int = 7

    def __post_init__(self) -> None:
        if self.repetitions < 3:
            raise ConfigError(f"repetitions = {self.repetitions} must be >= 3")

    @property
    def chunk_sizes(self) -> list[int]:
        return [self.length] if self.stages == FULL else list(self.stages)

    @property
    def variant(self) -> str:
        return FULL if self.stages == FULL else "-".join(str(k) for k in self.stages)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            heads=self.heads,
            stages=self.chunk_sizes,
            seq_len=self.length,
            dropout_rate=0.0,
            seed=self.seed,
        )

    def build(self) -> tuple[ChunkFormer, np.ndarray, np.ndarray]:
        """Model plus a random batch of ids and a full mask"""
        model = ChunkFormer(config=self.model_config(), vocab_sizes=[16])
        rng = np.random.default_rng(self.seed)
        ids = rng.integers(1, 16, size=(self.batch_size, self.length, 1))
        mask = np.ones((self.batch_size, self.length), dtype=bool)
        return model, ids, mask


@dataclass
class FootprintMeasurement:
    per_stage: dict[str, int]
    peak: int
    predicted_per_stage: list[int]
    predicted_peak: int
    full: int


def measure_footprint(case: BenchCase) -> FootprintMeasurement:
    """Count score matrix elements during one forward pass and compare
    them with attention_footprint.

    :raises ContractError: if measured and predicted counts differ
    """
    model, ids, mask = case.build()
    with ScoreMatrixCounter() as counter:
        model.logits(ids, mask, training=False)
    predicted = attention_footprint(model.config)
    measured = counter.per_head()
    result = FootprintMeasurement(
        per_stage=measured,
        peak=counter.peak(),
        predicted_per_stage=predicted.per_stage,
        predicted_peak=predicted.peak,
        full=predicted.full,
    )
    if list(measured.values()) != predicted.per_stage:
        raise ContractError(
            f"{case.variant} L={case.length}: measured {measured} "
            f"!= predicted {predicted.per_stage}"
        )
    return result


@contextlib.contextmanager
def pinned_cpu(enabled: bool = True):
    """Restrict the process to one cpu where the platform allows it"""
    proc = psutil.Process(os.getpid())
    previous = None
    if enabled and hasattr(proc, "cpu_affinity"):
        try:
            previous = proc.cpu_affinity()
            proc.cpu_affinity(previous[:1])
        except (psutil.Error, OSError) as e:
            logging.debug(f"cpu pinning unavailable: {e}")
            previous = None
    try:
        yield
    finally:
        if previous is not None:
            proc.cpu_affinity(previous)


@dataclass
class TimingResult:
    median: float  # seconds
    spread: float  # interquartile range, seconds
    repetitions: int


def measure_time(case: BenchCase) -> TimingResult:
    """Median wall time of forward (or forward + backward) passes after
    case.warmup untimed passes"""
    model, ids, mask = case.build()

    def step() -> None:
        if case.backward:
            with GradTape() as tape:
                loss = model.logits(ids, mask, training=False).sum()
            tape.backward(loss)
        else:
            model.logits(ids, mask, training=False)

    for _ in range(max(case.warmup, 1)):
        step()
    times = []
    for _ in range(case.repetitions):
        t0 = time.perf_counter()
        step()
        times.append(time.perf_counter() - t0)
    times = np.asarray(times)
    return TimingResult(float(np.median(times)), float(iqr(times)), case.repetitions)


def rss_mib() -> float:
    rss = Q_(psutil.Process(os.getpid()).memory_info().rss, "byte")
    return float(rss.to("MiB").magnitude)


def sweep(cfg: BenchConfig, timing: bool = True) -> pd.DataFrame:
    """One row per (length, variant) with measured and predicted score
    elements, their memory, the ratio to full attention and timings"""
    cfg.validate()
    itemsize = np.dtype(DTYPE).itemsize
    rows = []
    with pinned_cpu(cfg.pin_cpu):
        for case in cfg.cases():
            fp = measure_footprint(case)
            elements = fp.peak * case.heads * case.batch_size
            score_mem = Q_(elements * itemsize, "byte").to("MiB")
            row = {
                "length": case.length,
                "variant": case.variant,
                "peak_elements": fp.peak,
                "predicted_elements": fp.predicted_peak,
                "full_elements": fp.full,
                "ratio_to_full": fp.peak / fp.full,
                "full_over_chunked": fp.full / fp.peak,
                "score_mib": float(score_mem.magnitude),
            }
            if timing:
                t = measure_time(case)
                row["median_ms"] = float(Q_(t.median, "s").to("ms").magnitude)
                row["iqr_ms"] = float(Q_(t.spread, "s").to("ms").magnitude)
            rows.append(row)
            logging.info(f"bench {case.variant} L={case.length}: {row}")
    frame = pd.DataFrame(rows)
    frame["rss_mib"] = rss_mib()
    return frame
