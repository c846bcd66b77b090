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

     Training loop, checkpoints and the evaluation metrics.
"""

from __future__ import annotations
import copy
import json
import logging
import pathlib as pl
import typing as tp
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import rankdata
from tqdm import tqdm

from .chunkformer_base import (
    chunkformerBase,
    CompatibilityError,
    ConfigError,
    IngestionError,
    MetricError,
    NumericError,
    NDArrayFloat,
)
from .numerics import Adam, AdamState, GradientMap, GradTape, Tensor, bce_with_logits
from .chunkformer import ChunkFormer, ModelConfig, attention_footprint, build_model
from .pipeline import DatasetManifest, WindowedSplit
from .utility_functions import package_version

CHECKPOINT_FORMAT = "chunkformer-checkpoint"
CHECKPOINT_VERSION = 1
HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "val_auc", "val_macro_f1", "grad_norm"]


class TrainConfig(chunkformerBase):
    """Optimizer and loop settings. Example::

        TrainConfig(learning_rate=5e-4,
                    epochs=10,
                    batch_size=32,
                    seed=7,                # shuffle order and dropout
                    report_every=1,        # print every n epochs
                    pos_weight="None",     # or a float > 0
                    weight_decay=0.0,
                    resume="None",         # checkpoint to continue from
                    sweep_lengths=[],      # for length_stability()
                    progress=True,         # tqdm bar per epoch
                    )
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "learning_rate": [5e-4, (float)],
            "epochs": [10, (int)],
            "batch_size": [32, (int)],
            "seed": [7, (int)],
            "report_every": [1, (int)],
            "pos_weight": ["None", (str, float, int)],
            "weight_decay": [0.0, (float)],
            "resume": ["None", (str)],
            "sweep_lengths": [[], (list)],
            "progress": [True, (bool)],
        }
        self.lrk: tp.List = []
        self.__initialize_keyword_variables__(kwargs)

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate = {self.learning_rate} must be > 0")
        if self.epochs < 1:
            raise ConfigError(f"epochs = {self.epochs} must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size = {self.batch_size} must be >= 1")
        if self.report_every < 1:
            raise ConfigError(f"report_every = {self.report_every} must be >= 1")
        if self.pos_weight != "None" and not self.pos_weight > 0:
            raise ConfigError(f"pos_weight = {self.pos_weight} must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if any(not isinstance(L, int) or L < 1 for L in self.sweep_lengths):
            raise ConfigError(f"sweep_lengths {self.sweep_lengths} must be ints >= 1")

    @property
    def positive_weight(self) -> float | None:
        return None if self.pos_weight == "None" else float(self.pos_weight)


# --- metrics -----------------------------------------------------------


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic: the
    probability that a random positive scores above a random negative,
    ties counting 1/2.

    :raises MetricError: unless both classes are present
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.size} scores for {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc is undefined unless both classes are present")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def per_class_scores(preds: np.ndarray, labels: np.ndarray) -> dict[int, dict[str, float]]:
    """precision, recall, f1 and support for the classes 0 and 1. A
    ratio with a zero denominator is 0."""
    preds = np.asarray(preds).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if preds.shape != labels.shape:
        raise MetricError(f"{preds.size} predictions for {labels.size} labels")
    if preds.size == 0:
        raise MetricError("no predictions to score")
    out = {}
    for c in (0, 1):
        tp_ = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        out[c] = {
            "precision": tp_ / (tp_ + fp) if tp_ + fp else 0.0,
            "recall": tp_ / (tp_ + fn) if tp_ + fn else 0.0,
            "f1": 2 * tp_ / (2 * tp_ + fp + fn) if tp_ + fp + fn else 0.0,
            "support": int(np.sum(labels == c)),
        }
    return out


def macro_f1(preds: np.ndarray, labels: np.ndarray) -> float:
    """Unweighted mean of the F1 of class 0 and class 1. A class that is
    neither predicted nor present scores 0."""
    scores = per_class_scores(preds, labels)
    return (scores[0]["f1"] + scores[1]["f1"]) / 2.0


@dataclass
class EvalReport:
    split: str
    n: int
    loss: float
    auc: float
    macro_f1: float
    per_class: dict = field(default_factory=dict)
    epoch: int = 0
    loss_curve: list[float] = field(default_factory=list)
    footprint: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return d

    def summary(self) -> pd.DataFrame:
        rows = [
            {"class": c, **{k: v for k, v in s.items()}} for c, s in self.per_class.items()
        ]
        return pd.DataFrame(rows)


# --- loss and evaluation ----------------------------------------------


def batch_loss(
    model: ChunkFormer,
    logits: Tensor,
    labels: np.ndarray,
    mask: np.ndarray,
    pos_weight: float | None = None,
) -> Tensor:
    """Mean BCE over sequences, or over real positions in per_position
    mode"""
    if model.config.prediction_mode == "per_position":
        return bce_with_logits(logits, labels, weights=mask, pos_weight=pos_weight)
    return bce_with_logits(logits, labels, pos_weight=pos_weight)


def collect_logits(
    model: ChunkFormer, data: WindowedSplit, batch_size: int = 256
) -> tuple[NDArrayFloat, np.ndarray, float]:
    """Logits and labels of all real predictions, plus the mean loss"""
    logits, labels, losses, weights = [], [], [], []
    per_position = model.config.prediction_mode == "per_position"
    for ids, mask, y in data.batches(batch_size):
        z = model.logits(ids, mask, training=False)
        loss = batch_loss(model, z, y, mask)
        n = int(mask.sum()) if per_position else len(y)
        losses.append(loss.item() * n)
        weights.append(n)
        if per_position:
            logits.append(z.data[mask])
            labels.append(y[mask])
        else:
            logits.append(z.data)
            labels.append(y)
    return np.concatenate(logits), np.concatenate(labels), sum(losses) / sum(weights)


def evaluate_model(
    model: ChunkFormer, data: WindowedSplit, split: str, batch_size: int = 256
) -> EvalReport:
    """Metrics of model on data. Predictions threshold the logit at 0
    (probability 0.5), the AUC uses sigmoid scores."""
    logits, labels, loss = collect_logits(model, data, batch_size)
    preds = (logits > 0).astype(np.int64)
    try:
        a = auc(expit(logits), labels)
    except MetricError as e:
        logging.warning(f"{split}: {str(e).strip()}")
        a = float("nan")
    fp = {}
    if model.config.encoder == "chunkformer":
        fp = asdict(attention_footprint(model.config))
    return EvalReport(
        split=split,
        n=len(labels),
        loss=float(loss),
        auc=a,
        macro_f1=macro_f1(preds, labels),
        per_class=per_class_scores(preds, labels),
        footprint=fp,
    )


# --- checkpoints -------------------------------------------------------


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and continue training"""

    header: dict
    state: dict[str, np.ndarray]
    adam: AdamState | None = None

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.header["model_config"])

    def save(self, path: pl.Path | str) -> pl.Path:
        path = pl.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {"__header__": np.array(json.dumps(self.header, sort_keys=True))}
        arrays.update(self.state)
        if self.adam is not None:
            names = list(self.state)
            arrays["adam.t"] = np.array(self.adam.t, dtype=np.int64)
            for name, m, v in zip(names, self.adam.m, self.adam.v):
                arrays[f"adam.m.{name}"] = m
                arrays[f"adam.v.{name}"] = v
        with open(path, "wb") as f:
            np.savez(f, **arrays)
        return path

    @classmethod
    def load(cls, path: pl.Path | str) -> Checkpoint:
        """
        :raises IngestionError: if the file does not exist
        :raises CompatibilityError: on a format or version mismatch
        """
        path = pl.Path(path)
        if not path.exists():
            raise IngestionError(f"checkpoint {path} does not exist")
        with np.load(path, allow_pickle=False) as z:
            if "__header__" not in z.files:
                raise CompatibilityError(f"{path} is not a chunkformer checkpoint")
            header = json.loads(str(z["__header__"]))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise CompatibilityError(f"{path} is not a chunkformer checkpoint")
            if header.get("version") != CHECKPOINT_VERSION:
                raise CompatibilityError(
                    f"checkpoint version {header.get('version')} is not supported"
                )
            names = header["parameters"]
            state = {n: z[n] for n in names}
            adam = None
            if "adam.t" in z.files:
                adam = AdamState(
                    t=int(z["adam.t"]),
                    m=[z[f"adam.m.{n}"] for n in names],
                    v=[z[f"adam.v.{n}"] for n in names],
                )
        return cls(header, state, adam)

    def check_schema(self, schema_hash: str) -> None:
        """:raises CompatibilityError: if the model was trained on a
        different schema"""
        if self.header.get("schema_hash") != schema_hash:
            raise CompatibilityError(
                f"checkpoint schema {self.header.get('schema_hash', '?')[:12]} does not "
                f"match dataset schema {schema_hash[:12]}"
            )

    def build_model(self) -> ChunkFormer:
        model = build_model(self.model_config, self.header["vocab_sizes"])
        model.load_state_dict(self.state)
        return model


def make_checkpoint(
    model: ChunkFormer,
    optimizer: Adam | None,
    schema_hash: str,
    tcfg: TrainConfig,
    epoch: int,
    best_metric: float,
    rng_state: dict | None = None,
) -> Checkpoint:
    state = model.state_dict()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "package_version": package_version(),
        "schema_hash": schema_hash,
        "model_config": model.config.to_dict(),
        "train_config": tcfg.to_dict(),
        "vocab_sizes": [int(v) for v in model.vocab_sizes],
        "parameters": list(state),
        "epoch": epoch,
        "best_metric": best_metric,
        "rng": rng_state or {},
    }
    adam = None if optimizer is None else copy.deepcopy(optimizer.state)
    return Checkpoint(header, state, adam)


# --- training ----------------------------------------------------------


def train_epoch(
    model: ChunkFormer,
    optimizer: Adam,
    data: WindowedSplit,
    tcfg: TrainConfig,
    rng: np.random.Generator,
    epoch: int = 0,
) -> tuple[float, float]:
    """One pass over data in the shuffle order drawn from rng.

    :returns: mean batch loss and the last gradient norm
    :raises NumericError: if the loss or the gradient is not finite
    """
    losses = []
    last_norm = float("nan")
    batches = tqdm(
        data.batches(tcfg.batch_size, rng),
        total=-(-len(data) // tcfg.batch_size),
        desc=f"epoch {epoch + 1}/{tcfg.epochs}",
        disable=not tcfg.progress,
        leave=False,
    )
    for ids, mask, labels in batches:
        with GradTape() as tape:
            logits = model.logits(ids, mask, training=True)
            loss = batch_loss(model, logits, labels, mask, tcfg.positive_weight)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(
                f"loss is {value} in epoch {epoch + 1}, "
                f"learning rate {tcfg.learning_rate}, "
                f"last gradient norm {last_norm:.3e}"
            )
        # a model without trainable parameters records nothing
        grads = tape.backward(loss) if loss._tape is tape else GradientMap()
        last_norm = grads.global_norm()
        if not np.isfinite(last_norm):
            raise NumericError(
                f"gradient norm is {last_norm} in epoch {epoch + 1}, "
                f"learning rate {tcfg.learning_rate}"
            )
        optimizer.step(grads)
        losses.append(value)
    return float(np.mean(losses)), last_norm


@dataclass
class TrainResult:
    model: ChunkFormer
    history: pd.DataFrame
    best: EvalReport
    best_path: pl.Path
    last_path: pl.Path


def train(
    model_cfg: ModelConfig,
    manifest: DatasetManifest,
    tcfg: TrainConfig,
    output_dir: pl.Path | str,
) -> TrainResult:
    """Fit a model with Adam on the train split and validate after every
    epoch. The best checkpoint by validation macro F1 is kept as
    best.npz, the most recent one as last.npz, and one json record per
    epoch goes to metrics.jsonl.

    :raises NumericError: if the loss or the gradient becomes non-finite
    :raises CompatibilityError: if the resume checkpoint does not fit
    """
    model_cfg.validate()
    tcfg.validate()
    output_dir = pl.Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    schema_hash = manifest.schema_hash
    mode = model_cfg.prediction_mode
    train_w = manifest.windows("train", model_cfg.seq_len, mode)
    val_w = manifest.windows("val", model_cfg.seq_len, mode)
    logging.info(f"train on {len(train_w)} sequences, validate on {len(val_w)}")

    model = build_model(model_cfg, manifest.schema.vocab_sizes)
    params = list(model.named_parameters().values())
    optimizer = Adam(
        params,
        lr=tcfg.learning_rate,
        weight_decay=tcfg.weight_decay,
        decay_masks=model.decay_masks(),
    )
    shuffle_rng = np.random.default_rng(tcfg.seed)
    model.dropout_rng = np.random.default_rng(tcfg.seed + 1)
    history: list[dict] = []
    start, best = 0, -np.inf

    if tcfg.resume != "None":
        ck = Checkpoint.load(tcfg.resume)
        ck.check_schema(schema_hash)
        model.load_state_dict(ck.state)
        if ck.adam is not None:
            optimizer.state = ck.adam
        start = int(ck.header["epoch"])
        best = float(ck.header["best_metric"])
        rng = ck.header.get("rng", {})
        if rng:
            shuffle_rng.bit_generator.state = rng["shuffle"]
            model.dropout_rng.bit_generator.state = rng["dropout"]
        fn = output_dir / "metrics.jsonl"
        if fn.exists():
            history = pd.read_json(fn, lines=True).to_dict("records")[:start]
        logging.info(f"resuming from {tcfg.resume} after epoch {start}")

    best_report = None
    for epoch in range(start, tcfg.epochs):
        train_loss, last_norm = train_epoch(
            model, optimizer, train_w, tcfg, shuffle_rng, epoch
        )
        report = evaluate_model(model, val_w, "val")
        record = {
            "epoch": epoch + 1,
            "train_loss": train_loss,
            "val_loss": report.loss,
            "val_auc": report.auc,
            "val_macro_f1": report.macro_f1,
            "grad_norm": last_norm,
        }
        history.append(record)
        pd.DataFrame(history).to_json(
            output_dir / "metrics.jsonl", orient="records", lines=True
        )
        if (epoch + 1) % tcfg.report_every == 0:
            logging.info(
                f"epoch {epoch + 1}: loss {record['train_loss']:.4f} "
                f"val auc {report.auc:.4f} val macro f1 {report.macro_f1:.4f}"
            )

        rng_state = {
            "shuffle": shuffle_rng.bit_generator.state,
            "dropout": model.dropout_rng.bit_generator.state,
        }
        improved = report.macro_f1 > best
        if improved:
            best = report.macro_f1
        ck = make_checkpoint(
            model, optimizer, schema_hash, tcfg, epoch + 1, float(best), rng_state
        )
        if improved:
            ck.save(output_dir / "best.npz")
            best_report = report
            best_report.epoch = epoch + 1
        ck.save(output_dir / "last.npz")

    frame = pd.DataFrame(history, columns=HISTORY_COLUMNS)
    if best_report is None:
        # nothing improved after a resume, report the stored best model
        best_fn = output_dir / "best.npz"
        best_model = Checkpoint.load(best_fn).build_model() if best_fn.exists() else model
        best_report = evaluate_model(best_model, val_w, "val")
        best_report.epoch = start
    best_report.loss_curve = [float(x) for x in frame["train_loss"]]
    return TrainResult(
        model, frame, best_report, output_dir / "best.npz", output_dir / "last.npz"
    )


def evaluate(
    checkpoint: pl.Path | str,
    manifest: DatasetManifest,
    split: str = "test",
    batch_size: int = 256,
) -> EvalReport:
    """Load a checkpoint and score it on one split of manifest

    :raises CompatibilityError: if the checkpoint schema differs
    """
    ck = Checkpoint.load(checkpoint)
    ck.check_schema(manifest.schema_hash)
    model = ck.build_model()
    data = manifest.windows(split, model.config.seq_len, model.config.prediction_mode)
    report = evaluate_model(model, data, split, batch_size)
    report.epoch = int(ck.header.get("epoch", 0))
    return report


def length_stability(
    model_cfg: ModelConfig,
    manifest: DatasetManifest,
    tcfg: TrainConfig,
    output_dir: pl.Path | str,
    lengths: tp.Sequence[int] | None = None,
) -> tuple[pd.DataFrame, float]:
    """Train one model per sequence length and compare the best
    validation macro F1 of each.

    :returns: one row per length and max - min of macro F1
    """
    lengths = list(lengths if lengths is not None else tcfg.sweep_lengths)
    if not lengths:
        raise ConfigError("length_stability needs at least one sequence length")
    rows = []
    for L in lengths:
        cfg = ModelConfig(**{**model_cfg.to_dict(), "seq_len": int(L)})
        result = train(cfg, manifest, tcfg, pl.Path(output_dir) / f"L{L}")
        rows.append(
            {
                "seq_len": int(L),
                "val_auc": result.best.auc,
                "val_macro_f1": result.best.macro_f1,
                "epoch": result.best.epoch,
            }
        )
    frame = pd.DataFrame(rows)
    spread = float(frame["val_macro_f1"].max() - frame["val_macro_f1"].min())
    logging.info(f"macro f1 spread over lengths {lengths}: {spread:.4f}")
    return frame, spread
