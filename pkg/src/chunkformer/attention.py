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

     The transformer encoder block that is applied to each chunk, and
     the instrumentation that counts attention score elements.
"""

from __future__ import annotations
import contextlib
import math
import threading
import typing as tp
from dataclasses import dataclass, field
import numpy as np

from .chunkformer_base import (
    chunkformerBase,
    ConfigError,
    DimensionError,
    DegenerateRowError,
    NDArrayBool,
)
from .numerics import (
    Tensor,
    ACTIVATIONS,
    matmul,
    swap_last,
    softmax_rows,
    layer_norm,
    linear,
    dropout,
    mul,
    DTYPE,
)

_counters = threading.local()


@dataclass
class _Section:
    items: int
    heads: int
    elements: int = 0


@dataclass
class ScoreMatrixCounter:
    """Counts the elements of every attention score matrix allocated
    while the counter is active. Allocations are booked to the current
    section (one per stage), which knows how many sequences and heads
    share it, so per_head() reports elements per head per sequence.

    .. code-block:: python

       with ScoreMatrixCounter() as counter:
           model.forward(seq, training=False)
       counter.per_head()  # {"stage_1": 2160, "stage_2": 2880}
    """

    sections: dict[str, _Section] = field(default_factory=dict)
    current: str | None = None

    def __enter__(self) -> ScoreMatrixCounter:
        _counter_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _counter_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, elements: int) -> None:
        name = self.current if self.current is not None else "unlabelled"
        if name not in self.sections:
            self.sections[name] = _Section(items=1, heads=1)
        self.sections[name].elements += int(elements)

    def per_head(self) -> dict[str, int]:
        return {
            name: s.elements // (s.items * s.heads) for name, s in self.sections.items()
        }

    def peak(self) -> int:
        """Largest per-head, per-sequence section. Stages run one after the
        other and release their scores, so this is the peak that is live
        at any time."""
        per = self.per_head()
        return max(per.values()) if per else 0


def _counter_stack() -> list:
    if not hasattr(_counters, "stack"):
        _counters.stack = []
    return _counters.stack


@contextlib.contextmanager
def footprint_section(name: str, items: int, heads: int):
    """Book score allocations inside the block to section name"""
    stack = _counter_stack()
    counter = stack[-1] if stack else None
    if counter is None:
        yield
        return
    previous = counter.current
    counter.current = name
    if name not in counter.sections:
        counter.sections[name] = _Section(items=items, heads=heads)
    try:
        yield
    finally:
        counter.current = previous


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: NDArrayBool | None = None,
    scale: float | None = None,
    key_mask: NDArrayBool | None = None,
) -> Tensor:
    """softmax(q k^T * scale) v over the last two axes.

    :param q, k, v: tensors (..., n, d_h)
    :param mask: bool array broadcastable to q.shape[:-1]; False keys get
        weight 0, rows of False queries are returned as zeros
    :param scale: defaults to 1 / sqrt(d_h)
    :param key_mask: separate key mask, defaults to mask

    :raises DimensionError: if row counts or widths differ
    :raises DegenerateRowError: if a real query has no real key
    """
    if q.shape[-2] != k.shape[-2] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(
            f"attention rows differ: q {q.shape}, k {k.shape}, v {v.shape}"
        )
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])

    scores = matmul(q, swap_last(k)) * scale
    stack = _counter_stack()
    if stack:
        stack[-1].record(scores.size)

    if mask is None and key_mask is None:
        return matmul(softmax_rows(scores), v)

    mask = np.ones(q.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    keys = mask if key_mask is None else np.asarray(key_mask, dtype=bool)
    keys = keys[..., None, :]
    queries = mask[..., :, None]
    if (queries & ~keys.any(axis=-1, keepdims=True)).any():
        raise DegenerateRowError("a real query position has no real key to attend to")
    weights = softmax_rows(scores, keys)
    return mul(matmul(weights, v), queries.astype(DTYPE))


@dataclass
class ChunkInput:
    """k consecutive positions of a sequence, with their padding mask"""

    values: Tensor
    mask: NDArrayBool

    def __post_init__(self) -> None:
        if self.values.ndim < 2 or self.values.shape[-2] < 1:
            raise DimensionError(f"chunk needs shape (..., k, d), not {self.values.shape}")
        if self.mask.shape != self.values.shape[:-1]:
            raise DimensionError(
                f"chunk mask {self.mask.shape} does not match values {self.values.shape}"
            )


class AttentionBlock(chunkformerBase):
    """One transformer encoder block: multi-head self attention and a
    position-wise feed forward network, each wrapped in a residual
    connection with layer normalization.

    Example::

        AttentionBlock(name="block",
                       d_model=32,
                       heads=4,
                       d_ff="auto",        # 4 * d_model, 0 disables the FFN
                       dropout_rate=0.1,
                       norm="pre",         # or "post"
                       activation="gelu",  # gelu, relu, sigmoid, tanh
                       rng=np.random.default_rng(7),
                       parent=stage,
                       )

    The weights live in self.weights and are shared by every chunk the
    block is applied to.
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "name": ["block", (str)],
            "d_model": [32, (int)],
            "heads": [4, (int)],
            "d_ff": ["auto", (str, int)],
            "dropout_rate": [0.1, (int, float)],
            "norm": ["pre", (str)],
            "activation": ["gelu", (str)],
            "layer_norm_eps": [1e-5, (float)],
            "rng": ["None", (str, np.random.Generator)],
            "parent": ["None", (str, chunkformerBase)],
        }
        self.lrk: tp.List = ["d_model"]
        self.__initialize_keyword_variables__(kwargs)

        if self.d_model < 1 or self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model = {self.d_model} must be divisible by heads = {self.heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate = {self.dropout_rate} must be in [0, 1)")
        self.check_choice("norm", ("pre", "post"))
        self.check_choice("activation", ACTIVATIONS)
        if self.d_ff == "auto":
            self.d_ff = 4 * self.d_model
        if self.rng == "None":
            self.rng = np.random.default_rng(0)
        self.d_head = self.d_model // self.heads
        self.__register_name_new__()
        self.weights = self.__init_weights__()

    def __init_weights__(self) -> dict[str, Tensor]:
        D, F = self.d_model, self.d_ff

        def glorot(fan_in, fan_out, name):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w = self.rng.uniform(-bound, bound, size=(fan_in, fan_out))
            return Tensor(w, requires_grad=True, name=f"{self.full_name}.{name}")

        def const(value, n, name):
            return Tensor(
                np.full(n, value), requires_grad=True, name=f"{self.full_name}.{name}"
            )

        w = {}
        for p in ("q", "k", "v", "o"):
            w[f"w_{p}"] = glorot(D, D, f"w_{p}")
            w[f"b_{p}"] = const(0.0, D, f"b_{p}")
        w["ln1_gamma"] = const(1.0, D, "ln1_gamma")
        w["ln1_beta"] = const(0.0, D, "ln1_beta")
        if F > 0:
            w["w_1"] = glorot(D, F, "w_1")
            w["b_1"] = const(0.0, F, "b_1")
            w["w_2"] = glorot(F, D, "w_2")
            w["b_2"] = const(0.0, D, "b_2")
            w["ln2_gamma"] = const(1.0, D, "ln2_gamma")
            w["ln2_beta"] = const(0.0, D, "ln2_beta")
        return w

    def _norm(self, x: Tensor, i: int) -> Tensor:
        w = self.weights
        return layer_norm(x, w[f"ln{i}_gamma"], w[f"ln{i}_beta"], self.layer_norm_eps)

    def _split_heads(self, t: Tensor) -> Tensor:
        # (..., k, D) -> (..., heads, k, d_head)
        lead = t.shape[:-2]
        n = len(lead)
        t = t.reshape(lead + (t.shape[-2], self.heads, self.d_head))
        return t.transpose(tuple(range(n)) + (n + 1, n, n + 2))

    def _merge_heads(self, t: Tensor) -> Tensor:
        lead = t.shape[:-3]
        n = len(lead)
        t = t.transpose(tuple(range(n)) + (n + 1, n, n + 2))
        return t.reshape(lead + (t.shape[-3], self.d_model))

    def attend(self, x: Tensor, mask: NDArrayBool | None) -> Tensor:
        """Multi-head self attention of x with itself"""
        w = self.weights
        q = self._split_heads(linear(x, w["w_q"], w["b_q"]))
        k = self._split_heads(linear(x, w["w_k"], w["b_k"]))
        v = self._split_heads(linear(x, w["w_v"], w["b_v"]))
        head_mask = None if mask is None else mask[..., None, :]
        o = scaled_dot_attention(q, k, v, head_mask)
        return linear(self._merge_heads(o), w["w_o"], w["b_o"])

    def feed_forward(self, x: Tensor, training: bool, rng) -> Tensor:
        w = self.weights
        hidden = ACTIVATIONS[self.activation](linear(x, w["w_1"], w["b_1"]))
        hidden = dropout(hidden, self.dropout_rate, rng, training)
        return linear(hidden, w["w_2"], w["b_2"])

    def forward(
        self,
        x: Tensor,
        mask: NDArrayBool | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Apply the block to x of shape (..., k, d_model). Rows of
        padded positions are zero in the result."""
        if x.shape[-1] != self.d_model:
            raise DimensionError(
                f"{self.full_name}: input width {x.shape[-1]} != d_model {self.d_model}"
            )
        rng = self.rng if rng is None else rng
        p = self.dropout_rate
        has_ffn = self.d_ff > 0

        if self.norm == "pre":
            y = x + dropout(self.attend(self._norm(x, 1), mask), p, rng, training)
            if has_ffn:
                f = self.feed_forward(self._norm(y, 2), training, rng)
                y = y + dropout(f, p, rng, training)
        else:
            y = self._norm(x + dropout(self.attend(x, mask), p, rng, training), 1)
            if has_ffn:
                f = self.feed_forward(y, training, rng)
                y = self._norm(y + dropout(f, p, rng, training), 2)

        if mask is not None:
            y = mul(y, np.asarray(mask, dtype=DTYPE)[..., None])
        return y


def block_forward(chunk: ChunkInput, block: AttentionBlock, training: bool) -> Tensor:
    """Apply block to one chunk (or a stack of chunks along leading axes)

    :raises DimensionError: if the chunk width differs from d_model
    """
    if chunk.values.shape[-1] != block.d_model:
        raise DimensionError(
            f"chunk width {chunk.values.shape[-1]} != d_model {block.d_model}"
        )
    return block.forward(chunk.values, chunk.mask, training)
