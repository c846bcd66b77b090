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

     From a csv file of event records to encoded, grouped and split
     sequences:

     1. numeric columns are discretized to integer codes, codes are
        bucketed if there are too many of them, categorical columns get
        a vocabulary. Index 0 is reserved for missing and unseen values.
     2. records are grouped by entity and ordered in time, small groups
        are removed
     3. groups are assigned to train, val and test
     4. at load time, groups are cut into windows of the model length
"""

from __future__ import annotations
import json
import logging
import pathlib as pl
import typing as tp
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numba import njit

from .chunkformer_base import (
    chunkformerBase,
    CompatibilityError,
    ConfigError,
    EncodingError,
    IngestionError,
    SchemaError,
    NDArrayBool,
    NDArrayInt,
)
from .utility_functions import package_version, stable_hash

SPLITS = ("train", "val", "test")
MANIFEST_FORMAT = "chunkformer-manifest"
MANIFEST_VERSION = 1
INVALID_POLICIES = ("drop", "zero", "raise")


@njit
def _discretize_kernel(x, lo, hi, p):
    """codes and a status per value: 0 ok, 1 missing, 2 not finite"""
    n = x.shape[0]
    codes = np.zeros(n, np.int64)
    status = np.zeros(n, np.int8)
    for i in range(n):
        v = x[i]
        if np.isnan(v):
            status[i] = 1
        elif np.isinf(v):
            status[i] = 2
        else:
            if v < lo:
                v = lo
            elif v > hi:
                v = hi
            codes[i] = np.int64(np.rint(v / p))
    return codes, status


def discretize(x: float, lo: float, hi: float, precision: float) -> int:
    """round(clamp(x, lo, hi) / precision). A missing value (NaN) gives
    the reserved code 0.

    :raises SchemaError: if precision <= 0 or lo > hi
    :raises EncodingError: if x is infinite
    """
    codes, status = discretize_array(np.array([x], dtype=np.float64), lo, hi, precision)
    if status[0] == 2:
        raise EncodingError(f"cannot discretize non-finite value {x}")
    return int(codes[0])


def discretize_array(
    x: np.ndarray, lo: float, hi: float, precision: float
) -> tuple[NDArrayInt, np.ndarray]:
    """Vector form of discretize. Returns the codes and a status array
    (0 ok, 1 missing, 2 not finite)."""
    if not precision > 0:
        raise SchemaError(f"precision must be > 0, not {precision}")
    if lo > hi:
        raise SchemaError(f"lower bound {lo} exceeds upper bound {hi}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _discretize_kernel(x, float(lo), float(hi), float(precision))


@dataclass
class Buckets:
    """Maps integer codes to embedding indices 1 .. size.

    Without bucketing every distinct training code is its own index.
    With bucketing, bins holds quantile boundaries and index j covers
    codes in (bins[j - 1], bins[j]].
    """

    codes: list[int]
    bins: list[float] | None = None

    @property
    def bucketed(self) -> bool:
        return self.bins is not None

    @property
    def size(self) -> int:
        return len(self.bins) - 1 if self.bucketed else len(self.codes)

    def index(self, codes: np.ndarray) -> NDArrayInt:
        codes = np.asarray(codes, dtype=np.int64)
        if self.bucketed:
            inner = np.asarray(self.bins[1:-1], dtype=np.float64)
            return np.searchsorted(inner, codes, side="left").astype(np.int64) + 1
        known = np.asarray(self.codes, dtype=np.int64)
        return np.searchsorted(known, codes, side="right").astype(np.int64)

    def midpoint(self, index: np.ndarray) -> np.ndarray:
        """Representative code of each index, 0 gives NaN"""
        index = np.asarray(index, dtype=np.int64)
        if self.bucketed:
            b = np.asarray(self.bins, dtype=np.float64)
            table = np.concatenate([[np.nan], (b[:-1] + b[1:]) / 2.0])
        else:
            table = np.concatenate([[np.nan], np.asarray(self.codes, dtype=np.float64)])
        return table[index]


def bucketize(codes: np.ndarray, max_vocab: int = 10000) -> Buckets:
    """Build the code to index map from the training codes. Quantile
    buckets of roughly equal training mass are used only if there are
    more than max_vocab distinct codes.

    :raises SchemaError: if codes is empty or max_vocab < 1
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size == 0:
        raise SchemaError("cannot build buckets from an empty distribution")
    if max_vocab < 1:
        raise SchemaError(f"max_vocab must be >= 1, not {max_vocab}")
    distinct = np.unique(codes)
    if distinct.size <= max_vocab:
        return Buckets(codes=distinct.tolist())
    _, bins = pd.qcut(codes, q=max_vocab, retbins=True, duplicates="drop")
    logging.debug(f"{distinct.size} distinct codes -> {len(bins) - 1} buckets")
    return Buckets(codes=distinct.tolist(), bins=[float(b) for b in bins])


@dataclass
class FeatureSpec:
    """Encoding of one input column"""

    name: str
    kind: str  # "numeric" or "categorical"
    precision: float = 0.001
    lo: float = 0.0
    hi: float = 0.0
    buckets: Buckets | None = None
    vocab: list[str] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        """number of indices including the reserved 0"""
        if self.kind == "numeric":
            return self.buckets.size + 1
        return len(self.vocab) + 1

    @classmethod
    def fit(
        cls, name: str, kind: str, values: pd.Series, precision: float, max_vocab: int
    ) -> FeatureSpec:
        """Learn bounds, buckets or vocabulary from training values"""
        if kind == "numeric":
            x = pd.to_numeric(values, errors="coerce").to_numpy(dtype=np.float64)
            x = x[np.isfinite(x)]
            if x.size == 0:
                raise SchemaError(f"numeric feature {name} has no finite training value")
            lo, hi = float(x.min()), float(x.max())
            codes, _ = discretize_array(x, lo, hi, precision)
            return cls(name, kind, precision, lo, hi, buckets=bucketize(codes, max_vocab))
        if kind == "categorical":
            counts = values.dropna().astype(str).value_counts()
            if counts.empty:
                raise SchemaError(f"categorical feature {name} has no training value")
            # most frequent first, ties by value
            order = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            vocab = sorted(v for v, _ in order[:max_vocab])
            return cls(name, kind, precision, vocab=vocab)
        raise SchemaError(f"feature {name}: unknown kind {kind!r}")

    def encode(self, values: pd.Series) -> tuple[NDArrayInt, NDArrayBool]:
        """Indices and a flag for values that are not finite"""
        if self.kind == "numeric":
            x = pd.to_numeric(values, errors="coerce").to_numpy(dtype=np.float64)
            codes, status = discretize_array(x, self.lo, self.hi, self.precision)
            ids = np.where(status == 0, self.buckets.index(codes), 0)
            return ids.astype(np.int64), status == 2
        lookup = {v: i + 1 for i, v in enumerate(self.vocab)}
        s = values.astype(object)
        ids = np.array(
            [0 if pd.isna(v) else lookup.get(str(v), 0) for v in s], dtype=np.int64
        )
        return ids, np.zeros(len(ids), dtype=bool)

    def decode(self, ids: np.ndarray) -> np.ndarray:
        """Numeric value at the bucket midpoint, or the category string.
        Index 0 decodes to NaN (numeric) or None."""
        ids = np.asarray(ids, dtype=np.int64)
        if self.kind == "numeric":
            return self.buckets.midpoint(ids) * self.precision
        table = np.array([None] + list(self.vocab), dtype=object)
        return table[ids]

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "numeric":
            d.update(
                precision=self.precision,
                lo=self.lo,
                hi=self.hi,
                codes=self.buckets.codes,
                bins=self.buckets.bins,
            )
        else:
            d["vocab"] = self.vocab
        return d

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSpec:
        if d["kind"] == "numeric":
            return cls(
                d["name"],
                "numeric",
                d["precision"],
                d["lo"],
                d["hi"],
                buckets=Buckets(codes=d["codes"], bins=d["bins"]),
            )
        return cls(d["name"], "categorical", vocab=list(d["vocab"]))


@dataclass
class FeatureSchema:
    """Frozen encoding of all feature columns, fit on training rows"""

    features: list[FeatureSpec]
    key_column: str
    time_column: str
    label_column: str

    @property
    def vocab_sizes(self) -> list[int]:
        return [f.vocab_size for f in self.features]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @classmethod
    def fit(cls, train: pd.DataFrame, cfg: DataConfig) -> FeatureSchema:
        features = []
        for name in cfg.feature_columns:
            kind = "numeric" if name in cfg.numeric else "categorical"
            features.append(
                FeatureSpec.fit(
                    name, kind, train[name], cfg.precision_for(name), cfg.max_vocab
                )
            )
        schema = cls(features, cfg.key_column, cfg.time_column, cfg.label_column)
        logging.info(f"schema fit on {len(train)} rows, vocab sizes {schema.vocab_sizes}")
        return schema

    def encode(self, df: pd.DataFrame) -> tuple[NDArrayInt, NDArrayBool]:
        """(rows, features) indices and a per-row flag for non-finite values"""
        ids = np.zeros((len(df), len(self.features)), dtype=np.int64)
        bad = np.zeros(len(df), dtype=bool)
        for j, spec in enumerate(self.features):
            ids[:, j], flag = spec.encode(df[spec.name])
            bad |= flag
        return ids, bad

    def to_dict(self) -> dict:
        return {
            "key_column": self.key_column,
            "time_column": self.time_column,
            "label_column": self.label_column,
            "features": [f.to_dict() for f in self.features],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSchema:
        return cls(
            [FeatureSpec.from_dict(f) for f in d["features"]],
            d["key_column"],
            d["time_column"],
            d["label_column"],
        )

    def hash(self) -> str:
        return stable_hash(self.to_dict())


class DataConfig(chunkformerBase):
    """Where the records are and how to read them. Example::

        DataConfig(input="events.csv",
                   key_column="user_id",
                   time_column="ts",
                   label_column="label",
                   categorical=["event"],
                   numeric=["level"],
                   precision=0.001,          # or {"level": 0.01}
                   max_vocab=10000,
                   min_group_size=2,
                   splits=[0.8, 0.1, 0.1],   # fractions or group counts
                   on_invalid="drop",        # drop, zero or raise
                   seed=7,
                   )
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "input": ["None", (str)],
            "key_column": ["user_id", (str)],
            "time_column": ["ts", (str)],
            "label_column": ["label", (str)],
            "categorical": [[], (list)],
            "numeric": [[], (list)],
            "precision": [0.001, (float, dict)],
            "max_vocab": [10000, (int)],
            "min_group_size": [2, (int)],
            "splits": [[0.8, 0.1, 0.1], (list)],
            "on_invalid": ["drop", (str)],
            "seed": [7, (int)],
        }
        self.lrk: tp.List = []
        self.__initialize_keyword_variables__(kwargs)

    @property
    def feature_columns(self) -> list[str]:
        return list(self.categorical) + list(self.numeric)

    def precision_for(self, name: str) -> float:
        if isinstance(self.precision, dict):
            return float(self.precision.get(name, 0.001))
        return float(self.precision)

    def validate(self) -> None:
        if not self.feature_columns:
            raise ConfigError("data: no categorical or numeric feature columns given")
        dup = set(self.categorical) & set(self.numeric)
        if dup:
            raise ConfigError(f"data: {sorted(dup)} are both categorical and numeric")
        for name in self.numeric:
            if not self.precision_for(name) > 0:
                raise ConfigError(f"data: precision of {name} must be > 0")
        if self.max_vocab < 1:
            raise ConfigError("data: max_vocab must be >= 1")
        if self.min_group_size < 1:
            raise ConfigError("data: min_group_size must be >= 1")
        self.check_choice("on_invalid", INVALID_POLICIES)
        split_sizes(self.splits, None)


@dataclass
class GroupedDataset:
    """Records ordered by (key, time, file order). Group i occupies rows
    offsets[i]:offsets[i + 1] of frame."""

    frame: pd.DataFrame
    keys: np.ndarray
    offsets: NDArrayInt
    key_column: str
    time_column: str

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def sizes(self) -> NDArrayInt:
        return np.diff(self.offsets)

    def group(self, i: int) -> pd.DataFrame:
        return self.frame.iloc[self.offsets[i] : self.offsets[i + 1]]

    def select(self, keys: tp.Iterable[str]) -> GroupedDataset:
        """Subset with the given keys, in key order"""
        wanted = set(keys)
        keep = [i for i, k in enumerate(self.keys) if k in wanted]
        parts = [self.group(i) for i in keep]
        frame = pd.concat(parts, ignore_index=True) if parts else self.frame.iloc[:0]
        sizes = self.sizes[keep]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        return GroupedDataset(
            frame, self.keys[keep], offsets, self.key_column, self.time_column
        )


def group_and_order(
    df: pd.DataFrame, key_column: str, time_column: str, min_group_size: int = 2
) -> GroupedDataset:
    """Group records by key_column, sort each group by time_column with
    ties kept in file order, and drop groups with fewer than
    min_group_size records. Keys are compared as strings.

    :raises IngestionError: if a column is missing
    """
    for c in (key_column, time_column):
        if c not in df.columns:
            raise IngestionError(f"column {c!r} not found, have {list(df.columns)}")
    frame = df.reset_index(drop=True).copy()
    frame[key_column] = frame[key_column].astype(str)
    frame["_row"] = np.arange(len(frame))
    frame = frame.sort_values(
        [key_column, time_column, "_row"], kind="mergesort"
    ).reset_index(drop=True)

    sizes = frame.groupby(key_column, sort=True).size()
    small = sizes[sizes < min_group_size]
    if len(small):
        logging.info(f"dropping {len(small)} groups with < {min_group_size} records")
        frame = frame[~frame[key_column].isin(small.index)].reset_index(drop=True)
        sizes = sizes[sizes >= min_group_size]
    frame = frame.drop(columns="_row")
    offsets = np.concatenate([[0], np.cumsum(sizes.to_numpy())]).astype(np.int64)
    return GroupedDataset(
        frame, sizes.index.to_numpy(dtype=str), offsets, key_column, time_column
    )


def split_sizes(sizes: tp.Sequence[float], n: int | None) -> list[int] | None:
    """Turn split fractions or counts into group counts for n groups.
    val and test get what they ask for, train gets every other group.
    With n None only the form of sizes is checked.

    :raises ConfigError: if sizes are malformed or ask for more than n
    """
    if len(sizes) != 3 or any(
        isinstance(s, bool) or not isinstance(s, (int, float)) or s < 0 for s in sizes
    ):
        raise ConfigError(f"splits {list(sizes)} must be three numbers >= 0")
    fractions = any(isinstance(s, float) for s in sizes)
    if fractions and sum(sizes) > 1.0 + 1e-9:
        raise ConfigError(f"split fractions {list(sizes)} sum to more than 1")
    if n is None:
        return None
    if fractions:
        asked = [int(s * n + 1e-9) for s in sizes]
    else:
        asked = [int(s) for s in sizes]
        if sum(asked) > n:
            raise ConfigError(f"split counts {asked} ask for {sum(asked)} of {n} groups")
    train = n - asked[1] - asked[2]
    if train > asked[0]:
        logging.info(f"{train - asked[0]} groups beyond the requested splits go to train")
    return [train, asked[1], asked[2]]


def split_groups(
    keys: tp.Sequence[str], sizes: tp.Sequence[float], seed: int
) -> dict[str, list[str]]:
    """Seeded shuffle of the sorted keys, then consecutive slices for
    train, val and test. The splits cover all keys.

    :raises ConfigError: if more groups are requested than exist
    """
    ordered = sorted(str(k) for k in keys)
    counts = split_sizes(sizes, len(ordered))
    perm = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    out, start = {}, 0
    for name, c in zip(SPLITS, counts):
        out[name] = sorted(shuffled[start : start + c])
        start += c
    logging.info(f"split {len(ordered)} groups into {counts}")
    return out


def window(
    ids: np.ndarray, labels: np.ndarray, length: int, prediction_mode: str = "last_position"
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cut one group into non-overlapping windows of length records,
    aligned at the most recent record. Leading records that do not fill
    a window are dropped; a group shorter than length is one window.

    :returns: list of (ids, label) in time order. label is the label of
        the last record, or all labels for prediction_mode per_position.
    """
    if length < 1:
        raise ConfigError(f"window length must be >= 1, not {length}")
    n = len(ids)
    if n == 0:
        return []
    if n <= length:
        starts = [0]
    else:
        first = n - (n // length) * length
        starts = list(range(first, n, length))
    out = []
    for s in starts:
        e = min(s + length, n)
        label = labels[s:e] if prediction_mode == "per_position" else labels[e - 1]
        out.append((ids[s:e], label))
    return out


@dataclass
class WindowedSplit:
    """Model ready arrays. ids (n, L, features) is padded with 0,
    mask (n, L) marks real records, labels is (n,) or (n, L)."""

    ids: NDArrayInt
    mask: NDArrayBool
    labels: np.ndarray
    group: NDArrayInt

    def __len__(self) -> int:
        return len(self.mask)

    def batches(
        self, batch_size: int, rng: np.random.Generator | None = None
    ) -> tp.Iterator[tuple[NDArrayInt, NDArrayBool, np.ndarray]]:
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for s in range(0, len(self), batch_size):
            i = order[s : s + batch_size]
            # trim trailing columns that are padding in the whole batch
            width = int(self.mask[i].sum(axis=1).max())
            labels = self.labels[i]
            if labels.ndim == 2:
                labels = labels[:, :width]
            yield self.ids[i, :width], self.mask[i, :width], labels


@dataclass
class EncodedSplit:
    """Encoded groups of one split, stored as flat row arrays"""

    keys: np.ndarray
    offsets: NDArrayInt
    ids: NDArrayInt
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)

    def windows(self, length: int, prediction_mode: str) -> WindowedSplit:
        items, group = [], []
        for g in range(len(self.keys)):
            a, b = self.offsets[g], self.offsets[g + 1]
            for w in window(self.ids[a:b], self.labels[a:b], length, prediction_mode):
                items.append(w)
                group.append(g)
        n, f = len(items), self.ids.shape[1]
        if n == 0:
            raise IngestionError("split contains no sequences")
        ids = np.zeros((n, length, f), dtype=np.int64)
        mask = np.zeros((n, length), dtype=bool)
        per_position = prediction_mode == "per_position"
        labels = np.zeros((n, length) if per_position else n, dtype=np.int64)
        for i, (w, lab) in enumerate(items):
            ids[i, : len(w)] = w
            mask[i, : len(w)] = True
            if per_position:
                labels[i, : len(w)] = lab
            else:
                labels[i] = lab
        return WindowedSplit(ids, mask, labels, np.asarray(group, dtype=np.int64))

    def save(self, path: pl.Path) -> None:
        np.savez_compressed(
            path, keys=self.keys, offsets=self.offsets, ids=self.ids, labels=self.labels
        )

    @classmethod
    def load(cls, path: pl.Path) -> EncodedSplit:
        with np.load(path, allow_pickle=False) as z:
            return cls(z["keys"], z["offsets"], z["ids"], z["labels"])


def encode_groups(ds: GroupedDataset, schema: FeatureSchema) -> EncodedSplit:
    ids, _ = schema.encode(ds.frame)
    labels = ds.frame[schema.label_column].to_numpy(dtype=np.int64)
    return EncodedSplit(ds.keys, ds.offsets, ids, labels)


@dataclass
class DatasetManifest:
    """The preprocessed dataset on disk: schema, split assignment and
    the encoded groups of every split"""

    schema: FeatureSchema
    splits: dict[str, EncodedSplit]
    data_config: dict = field(default_factory=dict)

    @property
    def schema_hash(self) -> str:
        return self.schema.hash()

    def windows(
        self, split: str, length: int, prediction_mode: str = "last_position"
    ) -> WindowedSplit:
        if split not in self.splits:
            raise ConfigError(f"split {split!r} must be one of {list(self.splits)}")
        return self.splits[split].windows(length, prediction_mode)

    def save(self, directory: pl.Path | str) -> pl.Path:
        directory = pl.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "package_version": package_version(),
            "schema_hash": self.schema_hash,
            "groups": {k: len(v) for k, v in self.splits.items()},
            "rows": {k: int(v.offsets[-1]) for k, v in self.splits.items()},
            "data_config": self.data_config,
        }
        (directory / "manifest.json").write_text(json.dumps(header, indent=2, sort_keys=True))
        (directory / "schema.json").write_text(
            json.dumps(self.schema.to_dict(), indent=2, sort_keys=True)
        )
        rows = [(str(k), s) for s, e in self.splits.items() for k in e.keys]
        pd.DataFrame(rows, columns=["key", "split"]).to_csv(
            directory / "splits.csv", index=False
        )
        for name, enc in self.splits.items():
            enc.save(directory / f"groups_{name}.npz")
        logging.info(f"wrote dataset manifest to {directory}")
        return directory

    @classmethod
    def load(cls, directory: pl.Path | str) -> DatasetManifest:
        """
        :raises IngestionError: if files are missing
        :raises CompatibilityError: on a format, version or schema mismatch
        """
        directory = pl.Path(directory)
        fn = directory / "manifest.json"
        if not fn.exists():
            raise IngestionError(f"{fn} does not exist")
        header = json.loads(fn.read_text())
        if header.get("format") != MANIFEST_FORMAT:
            raise CompatibilityError(f"{fn} is not a chunkformer dataset manifest")
        if header.get("version") != MANIFEST_VERSION:
            raise CompatibilityError(
                f"manifest version {header.get('version')} is not supported "
                f"(expected {MANIFEST_VERSION})"
            )
        schema = FeatureSchema.from_dict(json.loads((directory / "schema.json").read_text()))
        if schema.hash() != header["schema_hash"]:
            raise CompatibilityError(f"schema.json in {directory} does not match its manifest")
        splits = {
            name: EncodedSplit.load(directory / f"groups_{name}.npz")
            for name in header["groups"]
        }
        return cls(schema, splits, header.get("data_config", {}))


def read_records(cfg: DataConfig) -> pd.DataFrame:
    """Read the csv and apply the on_invalid policy to non-finite
    numeric values.

    :raises IngestionError: if the file or a column is missing
    :raises SchemaError: if labels are not 0 or 1
    :raises EncodingError: for non-finite values with on_invalid="raise"
    """
    fn = pl.Path(cfg.input)
    if not fn.exists():
        raise IngestionError(f"input file {fn} does not exist")
    df = pd.read_csv(fn)
    needed = [cfg.key_column, cfg.time_column, cfg.label_column] + cfg.feature_columns
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise IngestionError(f"{fn} has no column(s) {missing}")

    labels = pd.to_numeric(df[cfg.label_column], errors="coerce")
    if not labels.isin((0, 1)).all():
        raise SchemaError(f"label column {cfg.label_column!r} must hold 0 or 1")
    df[cfg.label_column] = labels.astype(np.int64)

    bad = np.zeros(len(df), dtype=bool)
    for name in cfg.numeric:
        x = pd.to_numeric(df[name], errors="coerce").to_numpy(dtype=np.float64)
        flag = np.isinf(x)
        if flag.any() and cfg.on_invalid == "zero":
            df.loc[flag, name] = np.nan
        bad |= flag
    if bad.any():
        if cfg.on_invalid == "raise":
            first = int(np.flatnonzero(bad)[0])
            raise EncodingError(f"{fn}: non-finite numeric value in data row {first + 1}")
        if cfg.on_invalid == "drop":
            df = df[~bad].reset_index(drop=True)
        logging.warning(f"{int(bad.sum())} rows with non-finite values ({cfg.on_invalid})")
    logging.info(f"read {len(df)} records from {fn}")
    return df


def preprocess(cfg: DataConfig, directory: pl.Path | str) -> DatasetManifest:
    """csv -> grouped, split and encoded dataset manifest in directory.
    The schema only sees training groups."""
    cfg.validate()
    df = read_records(cfg)
    ds = group_and_order(df, cfg.key_column, cfg.time_column, cfg.min_group_size)
    if len(ds) == 0:
        raise IngestionError("no group has enough records")
    assignment = split_groups(ds.keys, cfg.splits, cfg.seed)
    parts = {name: ds.select(assignment[name]) for name in SPLITS}
    if len(parts["train"]) == 0:
        raise ConfigError("the training split is empty")
    schema = FeatureSchema.fit(parts["train"].frame, cfg)
    encoded = {name: encode_groups(p, schema) for name, p in parts.items()}
    manifest = DatasetManifest(schema, encoded, cfg.to_dict())
    manifest.save(directory)
    return manifest
