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

     Settings for the three event log use cases: content delivery
     network sessions (cdn), ad click fraud (td) and online education
     answers (oe). A preset only touches the fields it names; anything
     else in the run config keeps its value.
"""

from __future__ import annotations
import logging
import pathlib as pl
import typing as tp

from .chunkformer_base import ConfigError
from .synthetic import synthetic_data_config

if tp.TYPE_CHECKING:
    from .cli import RunConfig

__all__ = ["PRESETS", "SEQUENCE_LENGTHS", "apply_preset"]

SEQUENCE_LENGTHS = [180, 240, 480, 720]


def _common(run: RunConfig) -> None:
    run.model.stages = [3, 4]
    run.model.head_activation = "sigmoid"
    run.data.min_group_size = 2
    run.data.precision = 0.001
    run.train.sweep_lengths = list(SEQUENCE_LENGTHS)


def cdn(run: RunConfig) -> None:
    """Connection failures in CDN session logs, grouped by server IP.
    The KPI columns are site specific and have to be named by the user."""
    _common(run)
    run.data.key_column = "ip"  # server IP
    run.data.time_column = "timestamp"
    run.data.label_column = "failure"
    run.data.splits = [80000, 2000, 2019]  # groups
    run.train.learning_rate = 5e-4
    run.train.epochs = 20


def td(run: RunConfig) -> None:
    """Click fraud: IPs with many clicks and no app install"""
    _common(run)
    run.data.key_column = "ip"
    run.data.time_column = "click_time"
    run.data.label_column = "is_attributed"
    run.data.categorical = ["app", "device", "os", "channel"]
    run.data.numeric = []
    run.data.splits = [50000, 10000, 8740]
    run.train.learning_rate = 1e-5
    run.train.epochs = 30


def oe(run: RunConfig) -> None:
    """Will the student answer the next question correctly"""
    _common(run)
    run.data.key_column = "user_id"
    run.data.time_column = "timestamp"
    run.data.label_column = "answered_correctly"
    run.data.categorical = ["content_id", "content_type_id", "task_container_id"]
    run.data.numeric = ["prior_question_elapsed_time"]
    run.data.splits = [20000, 10000, 3000]
    run.train.learning_rate = 5e-4
    run.train.epochs = 10


def synthetic(run: RunConfig) -> None:
    """The generated log of write_synthetic in <output_dir>/synthetic.csv.
    Mean pooling lets the head see the whole sequence."""
    for key, value in synthetic_data_config(
        pl.Path(run.output_dir) / "synthetic.csv"
    ).items():
        setattr(run.data, key, value)
    run.data.splits = [0.8, 0.1, 0.1]
    run.model.stages = [3, 4]
    run.model.seq_len = 240
    run.model.d_model = 32
    run.model.prediction_mode = "mean_pool"
    run.model.dropout_rate = 0.0
    run.train.learning_rate = 5e-4
    run.train.epochs = 10
    run.train.batch_size = 8
    run.train.pos_weight = 3.0


PRESETS: dict[str, tp.Callable[[RunConfig], None]] = {
    "cdn": cdn,
    "td": td,
    "oe": oe,
    "synthetic": synthetic,
}


def apply_preset(run: RunConfig, name: str) -> None:
    """:raises ConfigError: for an unknown preset name"""
    if name not in PRESETS:
        raise ConfigError(f"preset {name!r} must be one of {sorted(PRESETS)}")
    PRESETS[name](run)
    logging.info(f"applied preset {name}")
