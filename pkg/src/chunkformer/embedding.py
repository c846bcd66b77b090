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

     Turn the integer codes produced by the pipeline into the vectors
     x_i of the input sequence, and add positional information.
"""

from __future__ import annotations
import math
import typing as tp
from dataclasses import dataclass
import numpy as np

from .chunkformer_base import (
    chunkformerBase,
    EncodingError,
    ConfigError,
    NDArrayBool,
    NDArrayFloat,
)
from .numerics import Tensor, DTYPE, take_rows, concat, mul, add, take

POSITIONAL_MODES = ("sinusoidal", "learned", "none")


def default_embedding_dim(vocab_size: int, cap: int = 64) -> int:
    """ceil(vocab_size ** 0.25), capped"""
    return max(1, min(cap, math.ceil(vocab_size**0.25)))


class EmbeddingTable(chunkformerBase):
    """One embedding table per encoded feature.

    Example::

        EmbeddingTable(name="event",
                       vocab_size=12,  # including the reserved index 0
                       dim=4,          # optional, see default_embedding_dim
                       rng=np.random.default_rng(7),
                       parent=model,   # optional
                       )

    Index 0 is reserved for padding, missing and unseen values. Its row
    starts at zero, never receives a gradient and is excluded from weight
    decay, so it stays zero.
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "name": ["None", (str)],
            "vocab_size": [2, (int)],
            "dim": ["auto", (str, int)],
            "rng": ["None", (str, np.random.Generator)],
            "parent": ["None", (str, chunkformerBase)],
        }
        self.lrk: tp.List = ["name", "vocab_size"]
        self.__initialize_keyword_variables__(kwargs)

        if self.vocab_size < 2:
            raise ConfigError(f"{self.name}: vocab_size must be >= 2")
        if self.dim == "auto":
            self.dim = default_embedding_dim(self.vocab_size)
        if self.rng == "None":
            self.rng = np.random.default_rng(0)

        bound = 1.0 / math.sqrt(self.dim)
        w = self.rng.uniform(-bound, bound, size=(self.vocab_size, self.dim))
        w[0] = 0.0
        self.__register_name_new__()
        self.weights: dict[str, Tensor] = {
            "table": Tensor(w, requires_grad=True, name=f"{self.full_name}.table")
        }

    @property
    def table(self) -> Tensor:
        return self.weights["table"]

    def decay_masks(self) -> dict[str, NDArrayFloat]:
        mask = np.ones((self.vocab_size, 1), dtype=DTYPE)
        mask[0] = 0.0
        return {"table": mask}

    def lookup(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        bad = (ids < 0) | (ids >= self.vocab_size)
        if bad.any():
            raise EncodingError(
                f"feature {self.name}: id {int(ids[bad].reshape(-1)[0])} "
                f"outside vocabulary of size {self.vocab_size}"
            )
        return take_rows(self.table, ids, padding_idx=0)


def embed_step(feature_ids: np.ndarray, tables: tp.Sequence[EmbeddingTable]) -> Tensor:
    """Concatenate the per-feature embedding rows of one time step. Any
    leading axes (batch, position) are carried through.

    :param feature_ids: integer array (..., n_features)
    :param tables: one EmbeddingTable per feature, in column order

    :returns: Tensor (..., sum of table dims)

    :raises EncodingError: if the id count or an id is out of range
    """
    feature_ids = np.asarray(feature_ids)
    if feature_ids.shape[-1] != len(tables):
        raise EncodingError(
            f"expected {len(tables)} feature ids per step, got {feature_ids.shape[-1]}"
        )
    parts = [tab.lookup(feature_ids[..., i]) for i, tab in enumerate(tables)]
    return parts[0] if len(parts) == 1 else concat(parts, axis=-1)


@dataclass
class EmbeddedSequence:
    """The input matrix X for one or more sequences.

    values: Tensor (..., L, d)
    mask:   bool array (..., L), True marks real positions
    label:  (...,) sequence targets or (..., L) per-position targets
    """

    values: Tensor
    mask: NDArrayBool
    label: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.mask.shape[-1]

    @property
    def width(self) -> int:
        return self.values.shape[-1]

    def with_values(self, values: Tensor) -> EmbeddedSequence:
        return EmbeddedSequence(values=values, mask=self.mask, label=self.label)


def sinusoidal_positions(length: int, d: int) -> NDArrayFloat:
    """Fixed encoding; even columns sin(p / 10000**(2i/d)), odd columns cos"""
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = np.exp(-math.log(10000.0) * np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.zeros((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: d // 2])
    return pe.astype(DTYPE)


def add_positions(
    seq: EmbeddedSequence, mode: str, table: Tensor | None = None
) -> EmbeddedSequence:
    """Add a position signal to the real positions of seq.

    :param mode: "sinusoidal", "learned" (needs table) or "none"
    :param table: learned position table of shape (>= L, d)
    """
    if mode == "none":
        return seq
    L, d = seq.length, seq.width
    keep = seq.mask[..., None].astype(DTYPE)
    if mode == "sinusoidal":
        signal = Tensor(sinusoidal_positions(L, d) * keep)
    elif mode == "learned":
        if table is None or table.shape[0] < L or table.shape[1] != d:
            raise ConfigError(f"learned positions need a table of at least ({L}, {d})")
        signal = mul(take(table, slice(0, L)), keep)
    else:
        raise ConfigError(f"positional mode {mode!r} must be one of {POSITIONAL_MODES}")
    return seq.with_values(add(seq.values, signal))
