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

     Dense tensors with reverse-mode automatic differentiation. All model
     code is written against the operations in this module.

     Tensors wrap a numpy array. Operations executed inside an active
     GradTape are recorded together with a vector-Jacobian product
     closure; GradTape.backward() replays the record in reverse. Outside
     a tape nothing is recorded, which is the inference path.

     The default precision is 64-bit. Set CHUNKFORMER_FLOAT32=1 before
     the first import to switch to 32-bit.
"""

from __future__ import annotations
import logging
import os
import threading
import typing as tp
from dataclasses import dataclass, field
import numpy as np
from scipy.special import expit

from .chunkformer_base import (
    ConfigError,
    ContractError,
    DimensionError,
    NumericError,
    NDArrayFloat,
)

DTYPE = np.float32 if os.environ.get("CHUNKFORMER_FLOAT32", "0") == "1" else np.float64

_tape_stack = threading.local()


class Tensor:
    """A dense array of DTYPE values with an optional gradient.

    :param data: anything numpy can turn into an array
    :param requires_grad: True for trainable leaves
    :param name: used in error messages and checkpoints
    """

    # let numpy defer to our operators, e.g. np.float64(2) * Tensor
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str = "None") -> None:
        self.data: NDArrayFloat = np.array(data, dtype=DTYPE)
        if 0 in self.data.shape:
            raise DimensionError(f"{name}: zero-sized dimension in shape {self.shape}")
        self.requires_grad = requires_grad
        self.grad: NDArrayFloat | None = None
        self.name = name
        self._tape: GradTape | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> Tensor:
        """Create a tensor around data without copying it"""
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=DTYPE)
        t.requires_grad = False
        t.grad = None
        t.name = "None"
        t._tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> NDArrayFloat:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


@dataclass
class _Node:
    output: Tensor
    inputs: tuple
    vjp: tp.Callable


class GradientMap(dict):
    """Maps leaf tensors to their gradient arrays. Leaves that did not
    take part in the recorded computation have a zero gradient.
    """

    def get_grad(self, t: Tensor) -> NDArrayFloat:
        g = self.get(t)
        return np.zeros_like(t.data) if g is None else g

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.values())))


class GradTape:
    """Ordered record of the primitive operations executed while the
    tape is active. Use as a context manager:

    .. code-block:: python

       with GradTape() as tape:
           loss = model.loss(batch)
       grads = tape.backward(loss)

    The tape is confined to the thread that created it. It is emptied by
    backward(), so each tape supports exactly one backward pass.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> GradTape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    @staticmethod
    def current() -> GradTape | None:
        stack = _stack()
        return stack[-1] if stack else None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> GradientMap:
        """Replay the tape in reverse and return the gradients of all
        leaves that require them. Each leaf's .grad is set as well.

        :param loss: a scalar tensor produced on this tape

        :raises ContractError: if loss is not a scalar produced here
        """
        if loss.data.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, not shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not produced by operations on this tape")

        grads: dict[int, NDArrayFloat] = {id(loss): np.ones_like(loss.data)}
        owners: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            # all consumers of node.output come later on the tape, so its
            # gradient is complete by the time we get here
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    owners[key] = t

        result = GradientMap()
        for key, g in grads.items():
            leaf = owners[key]
            leaf.grad = g
            result[leaf] = g
        self.nodes.clear()
        return result


def _stack() -> list:
    if not hasattr(_tape_stack, "tapes"):
        _tape_stack.tapes = []
    return _tape_stack.tapes


def backward(loss: Tensor) -> GradientMap:
    """Gradients of loss with respect to every requires_grad leaf"""
    if loss._tape is None:
        raise ContractError("loss was not produced by recorded operations")
    return loss._tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=DTYPE))


def _make(data: np.ndarray, inputs: tuple, vjp: tp.Callable) -> Tensor:
    """Wrap the result of a primitive and record it if a tape is active
    and any input requires a gradient"""
    out = Tensor._wrap(data)
    tape = GradTape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, inputs, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over the axes that numpy broadcasting added to shape"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            if b.requires_grad
            else None
        )
        return ga, gb

    return _make(a.data / b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


# --- shape -------------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple) -> Tensor:
    a = as_tensor(a)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swap_last(a: Tensor) -> Tensor:
    """Exchange the last two axes"""
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing, a.data[index]"""
    a = as_tensor(a)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, index, g)
        return (z,)

    return _make(a.data[index], (a,), vjp)


def concat(tensors: tp.Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, vjp)


# --- reductions --------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


# --- linear algebra ----------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a @ b with numpy broadcasting over leading axes.

    :raises DimensionError: if the inner dimensions do not match
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                # weight matrix: fold all leading axes into one product
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b"""
    y = matmul(x, w)
    return y if b is None else add(y, b)


# --- nonlinearities ----------------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = expit(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of the Gaussian error linear unit"""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(y, (a,), vjp)


ACTIVATIONS: dict[str, tp.Callable[[Tensor], Tensor]] = {
    "gelu": gelu,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def softmax_rows(a: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis, computed after subtracting the row
    maximum.

    :param a: tensor of shape (..., n)
    :param mask: optional boolean array broadcastable to a.shape. False
        entries get a weight of exactly 0. Rows without a single True
        entry come out as zeros.

    :raises NumericError: if an unmasked entry is not finite
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        if not np.isfinite(x).all():
            raise NumericError("softmax_rows: input contains NaN or inf")
        e = np.exp(x - x.max(axis=-1, keepdims=True))
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.isfinite(x[mask]).all():
            raise NumericError("softmax_rows: unmasked input contains NaN or inf")
        xm = np.where(mask, x, -np.inf)
        m = xm.max(axis=-1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(mask, np.exp(xm - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    y = e / np.where(s > 0, s, 1.0)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), vjp)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 and variance 1, then apply
    gamma * x + beta.

    :raises DimensionError: if gamma/beta do not match the last axis
    """
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    d = a.shape[-1] if a.ndim > 0 else 0
    if d == 0 or gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: last axis of {a.shape} does not match "
            f"gamma {gamma.shape} / beta {beta.shape}"
        )
    x = a.data
    xc = x - x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def vjp(g):
        gx = gg = gb = None
        if a.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _make(xhat * gamma.data + beta.data, (a, gamma, beta), vjp)


def dropout(
    a: Tensor, rate: float, rng: np.random.Generator, training: bool
) -> Tensor:
    """Inverted dropout. The identity unless training and rate > 0"""
    if not training or rate == 0.0:
        return a
    keep = rng.random(a.shape) >= rate
    return mul(a, Tensor._wrap(keep / (1.0 - rate)))


def take_rows(table: Tensor, ids: np.ndarray, padding_idx: int | None = 0) -> Tensor:
    """Embedding lookup table.data[ids]. The padding row never receives
    a gradient.
    """
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        z = np.zeros_like(table.data)
        np.add.at(z, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        if padding_idx is not None:
            z[padding_idx] = 0.0
        return (z,)

    return _make(table.data[ids], (table,), vjp)


def bce_with_logits(
    logits: Tensor,
    targets,
    weights=None,
    pos_weight: float | None = None,
) -> Tensor:
    """Mean binary cross entropy computed from raw logits:

        max(z, 0) - t * z + log(1 + exp(-|z|))

    :param logits: tensor of shape (n,) or (n, L)
    :param targets: array of 0/1 values with the same shape
    :param weights: optional array of per-entry weights (e.g. a padding
        mask). The mean is taken over sum(weights).
    :param pos_weight: optional factor on the positive-class term

    :raises DimensionError: on a shape mismatch
    :raises ContractError: if targets are not binary
    """
    logits = as_tensor(logits)
    z = logits.data
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != z.shape:
        raise DimensionError(
            f"bce_with_logits: logits {z.shape} and targets {t.shape} differ"
        )
    if not np.isin(t, (0.0, 1.0)).all():
        raise ContractError("bce_with_logits: targets must be 0 or 1")
    w = np.ones_like(z) if weights is None else np.asarray(weights, dtype=DTYPE)
    n = w.sum()
    if n <= 0:
        raise ContractError("bce_with_logits: weights sum to zero")

    tail = np.log1p(np.exp(-np.abs(z)))
    p = expit(z)
    if pos_weight is None:
        per = np.maximum(z, 0.0) - t * z + tail
        dper = p - t
    else:
        sp_pos = np.maximum(z, 0.0) + tail  # log(1 + exp(z))
        sp_neg = np.maximum(-z, 0.0) + tail  # log(1 + exp(-z))
        per = pos_weight * t * sp_neg + (1.0 - t) * sp_pos
        dper = -pos_weight * t * (1.0 - p) + (1.0 - t) * p

    loss = np.asarray((w * per).sum() / n, dtype=DTYPE)
    return _make(loss, (logits,), lambda g: (g * w * dper / n,))


# --- optimizer ---------------------------------------------------------


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter"""

    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: tp.Sequence[Tensor]) -> AdamState:
        return cls(
            t=0,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: tp.Sequence[Tensor],
    grads: tp.Sequence[np.ndarray],
    state: AdamState | None,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decay_masks: tp.Sequence[np.ndarray | None] | None = None,
) -> tuple[tp.Sequence[Tensor], AdamState]:
    """One bias-corrected Adam update. Each parameter's data array is
    replaced by a new array; the arrays held in state are replaced as
    well.

    :param decay_masks: optional per-parameter arrays, broadcastable to
        the parameter, that select the entries weight decay applies to

    :raises ConfigError: if lr <= 0
    :raises DimensionError: if params, grads and state disagree
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, not {lr}")
    if state is None:
        state = AdamState.fresh(params)
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("adam_step: params, grads and state differ in length")

    t = state.t + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_m, new_v = [], []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise DimensionError(
                f"adam_step: {p.name} has shape {p.shape}, gradient {g.shape}"
            )
        if weight_decay:
            mask = 1.0 if decay_masks is None or decay_masks[i] is None else decay_masks[i]
            g = g + weight_decay * p.data * mask
        m = beta1 * state.m[i] + (1.0 - beta1) * g
        v = beta2 * state.v[i] + (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m.append(m)
        new_v.append(v)

    return params, AdamState(t=t, m=new_m, v=new_v)


class Adam:
    """Keeps the parameter list and Adam state between steps"""

    def __init__(
        self,
        params: tp.Sequence[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        decay_masks: tp.Sequence[np.ndarray | None] | None = None,
    ) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, not {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_masks = decay_masks
        self.state = AdamState.fresh(self.params)

    def step(self, grads: GradientMap) -> None:
        _, self.state = adam_step(
            self.params,
            [grads.get_grad(p) for p in self.params],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
            self.decay_masks,
        )


# --- gradient checking -------------------------------------------------


def numerical_gradient(
    f: tp.Callable[[], float],
    t: Tensor,
    indices: tp.Iterable[tuple] | None = None,
    h: float = 1e-5,
) -> dict[tuple, float]:
    """Central finite differences of f() with respect to entries of t.

    :param f: evaluates the scalar function from the current values
    :param indices: entries to check, all of them when None
    """
    if indices is None:
        indices = list(np.ndindex(t.shape))
    out = {}
    for idx in indices:
        old = t.data[idx]
        t.data[idx] = old + h
        fp = f()
        t.data[idx] = old - h
        fm = f()
        t.data[idx] = old
        out[idx] = (fp - fm) / (2.0 * h)
    return out


def gradient_check(
    loss_fn: tp.Callable[[], Tensor],
    params: tp.Sequence[Tensor],
    h: float = 1e-5,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare analytic gradients against central finite differences.

    :param loss_fn: builds the scalar loss from the current parameter values
    :param params: leaves to check
    :param samples: number of entries checked per tensor (all when None)

    :returns: relative error per parameter name,
        ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)
    """
    if rng is None:
        rng = np.random.default_rng(0)
    with GradTape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)

    def f() -> float:
        return float(loss_fn().data)

    errors = {}
    for i, p in enumerate(params):
        all_idx = list(np.ndindex(p.shape))
        if samples is not None and samples < len(all_idx):
            pick = rng.choice(len(all_idx), size=samples, replace=False)
            all_idx = [all_idx[j] for j in sorted(pick)]
        analytic = grads.get_grad(p)
        numeric = numerical_gradient(f, p, all_idx, h)
        a = np.array([analytic[idx] for idx in all_idx])
        n = np.array([numeric[idx] for idx in all_idx])
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-6)
        name = p.name if p.name != "None" else f"param_{i}"
        errors[name] = float(np.linalg.norm(a - n) / denom)
        logging.debug(f"gradient check {name}: {errors[name]:.2e}")
    return errors
