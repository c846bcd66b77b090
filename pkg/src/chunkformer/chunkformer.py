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

     The multi stage encoder. A sequence of length L is cut into
     L / k_1 chunks, every chunk passes through the stage 1 attention
     block, the chunk outputs are concatenated back to length L and the
     result is cut again with the next (larger) chunk size. A small
     feed forward head turns the final hidden states into logits.
"""

from __future__ import annotations
import logging
import typing as tp
from dataclasses import dataclass
import numpy as np

from .chunkformer_base import (
    chunkformerBase,
    CompatibilityError,
    ConfigError,
    ContractError,
    DimensionError,
    IngestionError,
    NDArrayBool,
    NDArrayFloat,
)
from .numerics import (
    Tensor,
    ACTIVATIONS,
    DTYPE,
    concat,
    linear,
    mul,
    take,
    tsum,
)
from .embedding import (
    POSITIONAL_MODES,
    EmbeddedSequence,
    EmbeddingTable,
    add_positions,
    embed_step,
)
from .attention import AttentionBlock, footprint_section
from .utility_functions import aligned_length, check_chunk_sizes

PREDICTION_MODES = ("last_position", "per_position", "mean_pool")
ENCODERS = ("chunkformer", "mean_pool")


class ModelConfig(chunkformerBase):
    """All settings that define a model. Example::

        ModelConfig(d_model=32,
                    heads=4,
                    d_ff="auto",            # 4 * d_model
                    dropout_rate=0.1,
                    stages=[3, 4],          # chunk size per stage
                    seq_len=240,
                    head_hidden="auto",     # d_model
                    prediction_mode="last_position",
                    positional="sinusoidal",
                    norm="pre",
                    activation="gelu",      # inside the blocks
                    head_activation="gelu", # gelu, relu, sigmoid, tanh
                    embedding_dims="auto",  # or one int per feature
                    encoder="chunkformer",  # or "mean_pool"
                    seed=7,
                    )

    stages=[seq_len] is the regular transformer.
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "name": ["model", (str)],
            "d_model": [32, (int)],
            "heads": [4, (int)],
            "d_ff": ["auto", (str, int)],
            "dropout_rate": [0.1, (int, float)],
            "stages": [[3, 4], (list)],
            "seq_len": [240, (int)],
            "head_hidden": ["auto", (str, int)],
            "prediction_mode": ["last_position", (str)],
            "positional": ["sinusoidal", (str)],
            "norm": ["pre", (str)],
            "activation": ["gelu", (str)],
            "head_activation": ["gelu", (str)],
            "embedding_dims": ["auto", (str, list)],
            "layer_norm_eps": [1e-5, (float)],
            "encoder": ["chunkformer", (str)],
            "seed": [7, (int)],
        }
        self.lrk: tp.List = []
        self.__initialize_keyword_variables__(kwargs)
        self.parent = "None"

    def validate(self) -> None:
        """Check all cross field constraints

        :raises ConfigError: on the first violation
        """
        if self.d_model < 1 or self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(
                f"d_model = {self.d_model} must be divisible by heads = {self.heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate = {self.dropout_rate} must be in [0, 1)")
        if self.seq_len < 1:
            raise ConfigError(f"seq_len = {self.seq_len} must be >= 1")
        if self.encoder == "chunkformer":
            check_chunk_sizes(self.stages)
        self.check_choice("prediction_mode", PREDICTION_MODES)
        self.check_choice("positional", POSITIONAL_MODES)
        self.check_choice("norm", ("pre", "post"))
        self.check_choice("activation", ACTIVATIONS)
        self.check_choice("head_activation", ACTIVATIONS)
        self.check_choice("encoder", ENCODERS)
        for key in ("d_ff", "head_hidden"):
            v = getattr(self, key)
            if v != "auto" and not (isinstance(v, int) and v >= 0):
                raise ConfigError(f"{key} = {v!r} must be 'auto' or an int >= 0")
        if self.head_hidden == 0:
            raise ConfigError("head_hidden must be >= 1")

    @property
    def padded_length(self) -> int:
        if self.encoder != "chunkformer":
            return self.seq_len
        return aligned_length(self.seq_len, self.stages)

    @property
    def hidden_width(self) -> int:
        return self.d_model if self.head_hidden == "auto" else self.head_hidden


@dataclass
class ChunkPartition:
    """B half open, 0-based ranges [m * k, (m + 1) * k) covering the
    positions 0 .. padded_length - 1"""

    ranges: list[tuple[int, int]]
    chunk_size: int
    length: int
    padded_length: int

    @property
    def B(self) -> int:
        return len(self.ranges)


def partition(length: int, chunk_size: int) -> ChunkPartition:
    """Cut positions 0 .. length - 1 into chunks of chunk_size. If length
    is not a multiple of chunk_size, the last chunk extends into padding.

    :raises ConfigError: if chunk_size < 1
    """
    if chunk_size < 1:
        raise ConfigError(f"chunk size {chunk_size} must be >= 1")
    if length < 1:
        raise IngestionError("cannot partition an empty sequence")
    padded = -(-length // chunk_size) * chunk_size
    ranges = [(s, s + chunk_size) for s in range(0, padded, chunk_size)]
    return ChunkPartition(ranges, chunk_size, length, padded)


def pad_to_multiple(
    seq: EmbeddedSequence, chunk_sizes: tp.Sequence[int]
) -> EmbeddedSequence:
    """Right pad seq with masked zero positions up to the smallest length
    every chunk size divides. Labels are not touched.

    :raises IngestionError: if seq has length 0
    """
    L = seq.length
    target = aligned_length(L, chunk_sizes)
    if target == L:
        return seq
    lead = seq.values.shape[:-2]
    pad = Tensor._wrap(np.zeros(lead + (target - L, seq.width), dtype=DTYPE))
    mask = np.concatenate(
        [seq.mask, np.zeros(lead + (target - L,), dtype=bool)], axis=-1
    )
    return EmbeddedSequence(
        values=concat([seq.values, pad], axis=-2), mask=mask, label=seq.label
    )


def pad_ids(
    ids: np.ndarray, mask: NDArrayBool, target: int
) -> tuple[np.ndarray, NDArrayBool]:
    """Right pad (n, L, f) feature ids with the reserved id 0"""
    n, L = mask.shape
    if L > target:
        raise DimensionError(f"sequence length {L} exceeds model length {target}")
    if L == target:
        return ids, mask
    ids = np.concatenate([ids, np.zeros((n, target - L) + ids.shape[2:], ids.dtype)], 1)
    mask = np.concatenate([mask, np.zeros((n, target - L), dtype=bool)], 1)
    return ids, mask


@dataclass
class HiddenStates:
    """h_1 .. h_L after stage_index stages, shape (n, L, d_model)"""

    values: Tensor
    mask: NDArrayBool
    stage_index: int = 0

    @property
    def length(self) -> int:
        return self.mask.shape[-1]


class Stage(chunkformerBase):
    """One chunk size and the attention block shared by all its chunks"""

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "name": ["None", (str)],
            "index": [1, (int)],
            "chunk_size": [3, (int)],
            "parent": ["None", (str, chunkformerBase)],
        }
        self.lrk: tp.List = ["name", "chunk_size", "parent"]
        self.__initialize_keyword_variables__(kwargs)
        if self.chunk_size < 1:
            raise ConfigError(f"{self.name}: chunk size must be >= 1")
        self.model = self.parent.model
        self.__register_name_new__()

        cfg = self.model.config
        self.block = AttentionBlock(
            name="block",
            d_model=cfg.d_model,
            heads=cfg.heads,
            d_ff=cfg.d_ff,
            dropout_rate=float(cfg.dropout_rate),
            norm=cfg.norm,
            activation=cfg.activation,
            layer_norm_eps=cfg.layer_norm_eps,
            rng=self.model.init_rng,
            parent=self,
        )


def stage_forward(h: HiddenStates, stage: Stage, training: bool) -> HiddenStates:
    """Apply stage.block to each of the L / k chunks of h and join the
    results in order.

    :raises ContractError: if L is not a multiple of the chunk size
    """
    n, L, d = h.values.shape
    k = stage.chunk_size
    if L % k:
        raise ContractError(
            f"{stage.full_name}: length {L} is not a multiple of chunk size {k}"
        )
    B = L // k
    # (n, L, d) -> (n * B, k, d); chunk m of item i is row i * B + m
    chunks = h.values.reshape((n * B, k, d))
    mask = h.mask.reshape(n * B, k)
    with footprint_section(stage.name, items=n, heads=stage.block.heads):
        out = stage.block.forward(
            chunks, mask, training=training, rng=stage.model.dropout_rng
        )
    return HiddenStates(
        values=out.reshape((n, L, d)), mask=h.mask, stage_index=h.stage_index + 1
    )


class ChunkFormer(chunkformerBase):
    """The classifier. Example::

        model = ChunkFormer(config=ModelConfig(stages=[3, 4], seq_len=240),
                            vocab_sizes=[12, 7, 101],  # one per feature
                            )
        logits = model.logits(ids, mask)   # ids: (n, L, features)

    model.forward() takes an already embedded sequence, model.embed()
    produces one from feature ids.
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "name": ["model", (str)],
            "config": ["None", (str, ModelConfig)],
            "vocab_sizes": [[], (list)],
        }
        self.lrk: tp.List = ["config", "vocab_sizes"]
        self.__initialize_keyword_variables__(kwargs)

        self.config.validate()
        if len(self.vocab_sizes) == 0:
            raise ConfigError("the model needs at least one feature")
        self.model = self
        self.parent = "None"
        self.lmo: tp.List = []  # list of registered object names
        self.dmo: dict = {}  # name -> object
        self.__register_name_new__()

        cfg = self.config
        self.init_rng = np.random.default_rng(cfg.seed)
        self.dropout_rng = np.random.default_rng(cfg.seed + 1)
        self.__build_embeddings__()
        self.stages: list[Stage] = self.__build_stages__()
        self.weights: dict[str, Tensor] = {}
        self.__build_own_weights__()
        logging.info(
            f"{self.__class__.__name__} {self.full_name}: "
            f"{self.parameter_count()} parameters, stages {self.chunk_sizes}"
        )

    def __build_embeddings__(self) -> None:
        dims = self.config.embedding_dims
        if dims == "auto":
            dims = ["auto"] * len(self.vocab_sizes)
        elif len(dims) != len(self.vocab_sizes):
            raise ConfigError(
                f"{len(dims)} embedding dims for {len(self.vocab_sizes)} features"
            )
        self.tables = [
            EmbeddingTable(
                name=f"embed_{i}", vocab_size=int(v), dim=dim, rng=self.init_rng, parent=self
            )
            for i, (v, dim) in enumerate(zip(self.vocab_sizes, dims))
        ]
        self.input_width = sum(t.dim for t in self.tables)

    def __build_stages__(self) -> list[Stage]:
        return [
            Stage(name=f"stage_{i + 1}", index=i + 1, chunk_size=k, parent=self)
            for i, k in enumerate(self.config.stages)
        ]

    def __build_own_weights__(self) -> None:
        cfg = self.config
        D, H = cfg.d_model, cfg.hidden_width

        def glorot(fan_in, fan_out, name):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = self.init_rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights[name] = Tensor(w, requires_grad=True, name=f"{self.full_name}.{name}")

        def zeros(n, name):
            self.weights[name] = Tensor(
                np.zeros(n), requires_grad=True, name=f"{self.full_name}.{name}"
            )

        if self.input_width != D:
            glorot(self.input_width, D, "w_in")
            zeros(D, "b_in")
        if cfg.positional == "learned":
            self.weights["positions"] = Tensor(
                np.zeros((cfg.padded_length, D)),
                requires_grad=True,
                name=f"{self.full_name}.positions",
            )
        glorot(D, H, "w_head_1")
        zeros(H, "b_head_1")
        glorot(H, 1, "w_head_2")
        zeros(1, "b_head_2")

    @property
    def chunk_sizes(self) -> list[int]:
        return [s.chunk_size for s in self.stages]

    # --- parameters ----------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        """All trainable tensors by full name, in a fixed order"""
        params: dict[str, Tensor] = {}
        for table in self.tables:
            params[table.table.name] = table.table
        for stage in self.stages:
            for t in stage.block.weights.values():
                params[t.name] = t
        for t in self.weights.values():
            params[t.name] = t
        return params

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.named_parameters().values()))

    def decay_masks(self) -> list[NDArrayFloat | None]:
        """One entry per named parameter. Embedding padding rows, biases
        and layer norm parameters are not decayed."""
        masks = {t.table.name: t.decay_masks()["table"] for t in self.tables}
        out = []
        for name, t in self.named_parameters().items():
            if name in masks:
                out.append(masks[name])
            elif t.ndim == 1:
                out.append(np.zeros_like(t.data))
            else:
                out.append(None)
        return out

    def state_dict(self) -> dict[str, NDArrayFloat]:
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into the parameters

        :raises CompatibilityError: if names or shapes do not match
        """
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise CompatibilityError(
                f"parameter names differ. missing: {missing[:5]}, unexpected: {extra[:5]}"
            )
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=DTYPE)
            if arr.shape != t.shape:
                raise CompatibilityError(
                    f"{name} has shape {arr.shape} in the checkpoint, {t.shape} in the model"
                )
            t.data = arr.copy()

    # --- forward -------------------------------------------------------

    def embed(
        self, ids: np.ndarray, mask: NDArrayBool, label: np.ndarray | None = None
    ) -> EmbeddedSequence:
        """Pad, embed, project and position-encode a batch of feature ids

        :param ids: int array (n, L, features)
        :param mask: bool array (n, L), real data must be a prefix
        """
        ids = np.asarray(ids)
        mask = np.asarray(mask, dtype=bool)
        if ids.ndim != 3 or ids.shape[:2] != mask.shape:
            raise DimensionError(f"ids {ids.shape} and mask {mask.shape} do not match")
        if not mask.any(axis=1).all():
            raise IngestionError("batch contains an empty sequence")
        ids, mask = pad_ids(ids, mask, self.target_length(mask.shape[1]))
        x = embed_step(ids, self.tables)
        if "w_in" in self.weights:
            x = linear(x, self.weights["w_in"], self.weights["b_in"])
        seq = EmbeddedSequence(values=x, mask=mask, label=label)
        return add_positions(seq, self.config.positional, self.weights.get("positions"))

    def target_length(self, length: int) -> int:
        return aligned_length(max(length, 1), self.chunk_sizes)

    def encode(self, seq: EmbeddedSequence, training: bool = False) -> HiddenStates:
        """Run all stages over seq of shape (n, L, d_model)"""
        if len(self.stages) == 0:
            raise ConfigError("a ChunkFormer needs at least one stage")
        if seq.width != self.config.d_model:
            raise DimensionError(f"input width {seq.width} != d_model {self.config.d_model}")
        seq = pad_to_multiple(seq, self.chunk_sizes)
        h = HiddenStates(values=seq.values, mask=seq.mask)
        for stage in self.stages:
            h = stage_forward(h, stage, training)
        return h

    def head(self, h: Tensor) -> Tensor:
        """Two layer feed forward head (..., d_model) -> (...,)"""
        w = self.weights
        act = ACTIVATIONS[self.config.head_activation]
        z = act(linear(h, w["w_head_1"], w["b_head_1"]))
        z = linear(z, w["w_head_2"], w["b_head_2"])
        return z.reshape(z.shape[:-1])

    def readout(self, h: HiddenStates) -> Tensor:
        """Reduce the final hidden states according to prediction_mode"""
        mode = self.config.prediction_mode
        n = h.values.shape[0]
        if mode == "last_position":
            last = h.mask.sum(axis=1) - 1
            return self.head(take(h.values, (np.arange(n), last)))
        if mode == "mean_pool":
            return self.head(masked_mean(h.values, h.mask))
        return mul(self.head(h.values), h.mask.astype(DTYPE))

    def forward(self, seq: EmbeddedSequence, training: bool = False) -> Tensor:
        """Logits for seq. A single sequence of shape (L, d) gives a
        scalar (or (L,) per position), a batch (n, L, d) gives (n,) or
        (n, L). Per position logits are cropped to the input length."""
        single = seq.values.ndim == 2
        if single:
            seq = EmbeddedSequence(
                values=seq.values.reshape((1,) + seq.values.shape),
                mask=seq.mask[None],
                label=seq.label,
            )
        L = seq.length
        out = self.readout(self.encode(seq, training))
        if self.config.prediction_mode == "per_position" and out.shape[-1] != L:
            out = take(out, (slice(None), slice(0, L)))
        if single:
            out = out.reshape(out.shape[1:])
        return out

    def logits(self, ids: np.ndarray, mask: NDArrayBool, training: bool = False) -> Tensor:
        """embed() followed by forward(). Per position logits are
        cropped to the input length."""
        L = np.asarray(mask).shape[1]
        out = self.forward(self.embed(ids, mask), training)
        if self.config.prediction_mode == "per_position" and out.shape[-1] != L:
            out = take(out, (slice(None), slice(0, L)))
        return out


class MeanPoolBaseline(ChunkFormer):
    """Attention free reference. Embeddings are averaged over the real
    positions and fed to the same head as ChunkFormer."""

    def __build_stages__(self) -> list[Stage]:
        return []

    def target_length(self, length: int) -> int:
        return max(length, 1)

    def encode(self, seq: EmbeddedSequence, training: bool = False) -> HiddenStates:
        return HiddenStates(values=seq.values, mask=seq.mask)

    def readout(self, h: HiddenStates) -> Tensor:
        if self.config.prediction_mode == "per_position":
            return mul(self.head(h.values), h.mask.astype(DTYPE))
        return self.head(masked_mean(h.values, h.mask))


def masked_mean(values: Tensor, mask: NDArrayBool) -> Tensor:
    """Mean over the real positions, (n, L, d) -> (n, d)"""
    m = mask.astype(DTYPE)[..., None]
    count = np.maximum(m.sum(axis=-2), 1.0)
    return mul(tsum(mul(values, m), axis=-2), 1.0 / count)


def build_model(config: ModelConfig, vocab_sizes: tp.Sequence[int]) -> ChunkFormer:
    """ChunkFormer or MeanPoolBaseline, depending on config.encoder"""
    config.validate()
    cls = MeanPoolBaseline if config.encoder == "mean_pool" else ChunkFormer
    return cls(config=config, vocab_sizes=[int(v) for v in vocab_sizes])


@dataclass
class Footprint:
    """Attention score elements per head and per sequence"""

    per_stage: list[int]
    peak: int
    full: int
    padded_length: int


def attention_footprint(config: ModelConfig, length: int | None = None) -> Footprint:
    """B_s * k_s**2 = k_s * L score elements for stage s, compared with
    L**2 for one full attention block over the same padded length"""
    check_chunk_sizes(config.stages)
    L = aligned_length(config.seq_len if length is None else length, config.stages)
    per_stage = [k * L for k in config.stages]
    return Footprint(per_stage=per_stage, peak=max(per_stage), full=L * L, padded_length=L)


def receptive_fields(chunk_sizes: tp.Sequence[int], length: int) -> list[NDArrayBool]:
    """For each stage s, an (L, L) bool matrix R with R[i, p] True when
    the output of stage s at position i depends on input position p.

    :raises ContractError: if a chunk size does not divide length
    """
    check_chunk_sizes(list(chunk_sizes))
    pos = np.arange(length)
    R = np.eye(length, dtype=bool)
    out = []
    for k in chunk_sizes:
        if length % k:
            raise ContractError(f"chunk size {k} does not divide length {length}")
        same_chunk = (pos[:, None] // k) == (pos[None, :] // k)
        R = (same_chunk.astype(np.int64) @ R.astype(np.int64)) > 0
        out.append(R)
    return out
