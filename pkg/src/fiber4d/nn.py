"""Minimal reverse-mode automatic differentiation with dense layers.

Covers exactly what the end-to-end shaping pipeline needs: elementwise and
matrix primitives over numpy arrays (single or double precision), dense
networks with relu/linear/sigmoid activations, straight-through
Gumbel-Softmax sampling, and the Adam optimizer.  Custom graph nodes with
hand-written vector-Jacobian products (e.g. the fiber channel) plug in via
`make_node`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class Tensor:
    """Array value with gradient accumulator and reverse-graph linkage."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, grad={'set' if self.grad is not None else 'none'})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self):
        backward(self)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.value.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def constant(value, dtype=None) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def parameter(value, dtype=None) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=True)


def make_node(value, parents: tuple[Tensor, ...], vjp) -> Tensor:
    """Graph node with a custom vector-Jacobian product.

    `vjp(grad)` must return one gradient (or None) per parent.
    """
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate exact reverse-mode gradients of a scalar loss into .grad.

    Visits each reachable node exactly once in reverse topological order.
    Parameters not reachable from the loss keep grad None (read as zero).
    """
    if loss.value.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
            else:
                parent.grad = parent.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def grad_of(t: Tensor) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros_like(t.value)


# ----------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    return make_node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return make_node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return make_node(-a.value, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return make_node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.value.shape), _unbroadcast(g * a.value, b.value.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    return make_node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / b.value**2, b.value.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    return make_node(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map y = x @ W.T + b with W stored (out, in)."""
    if x.value.ndim != 2:
        raise ValueError("linear expects a 2-D input batch")
    if x.value.shape[-1] != weight.value.shape[1]:
        raise ValueError(f"input width {x.value.shape[-1]} != layer input dim {weight.value.shape[1]}")
    return make_node(
        x.value @ weight.value.T + bias.value,
        (x, weight, bias),
        lambda g: (g @ weight.value, g.T @ x.value, g.sum(axis=0)),
    )


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return make_node(np.where(mask, a.value, 0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.value))
    return make_node(s, (a,), lambda g: (g * s * (1 - s),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.value)
    return make_node(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return make_node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a: Tensor) -> Tensor:
    r = np.sqrt(a.value)
    return make_node(r, (a,), lambda g: (g / (2 * r),))


def power(a: Tensor, p: float) -> Tensor:
    return make_node(a.value**p, (a,), lambda g: (g * p * a.value ** (p - 1),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return make_node(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.value.shape).copy(),)

    return make_node(a.value.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return make_node(s, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.value >= lo) & (a.value <= hi)
    return make_node(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


def reshape(a: Tensor, shape) -> Tensor:
    return make_node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    def vjp(g):
        out = np.zeros_like(a.value)
        out[idx] = g
        return (out,)

    return make_node(a.value[idx], (a,), vjp)


def gumbel_softmax_st(
    logits: Tensor, temperature: float, rng: np.random.Generator, n_samples: int | None = None
) -> Tensor:
    """Straight-through Gumbel-Softmax sampling.

    Forward value: exact one-hot at argmax(logits + Gumbel noise), so class
    selection frequencies follow softmax(logits) regardless of temperature.
    Backward: gradient of the temperature-tau softmax of the perturbed logits.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    m = logits.value.shape[-1]
    shape = (m,) if n_samples is None else (n_samples, m)
    noise = rng.gumbel(size=shape)
    z = (logits.value + noise) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    soft = e / e.sum(axis=-1, keepdims=True)
    hard = np.zeros(shape, dtype=logits.value.dtype)
    idx = np.argmax(logits.value + noise, axis=-1)
    if n_samples is None:
        hard[idx] = 1.0
    else:
        hard[np.arange(n_samples), idx] = 1.0

    def vjp(g):
        dot = (g * soft).sum(axis=-1, keepdims=True)
        gl = soft * (g - dot) / temperature
        if n_samples is not None:
            gl = gl.sum(axis=0)
        return (gl.astype(logits.value.dtype),)

    return make_node(hard, (logits,), vjp)


# ----------------------------------------------------------------------------
# dense networks

_ACTIVATIONS = ("relu", "linear", "sigmoid")


@dataclass
class DenseLayer:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)
    activation: str


class DenseNet:
    """Stack of dense layers; dimensions must chain."""

    def __init__(self, layers: list[DenseLayer]):
        for prev, cur in zip(layers, layers[1:]):
            if cur.weight.value.shape[1] != prev.weight.value.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")
        for layer in layers:
            if layer.activation not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        self.layers = layers

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.layers:
            h = linear(h, layer.weight, layer.bias)
            if layer.activation == "relu":
                h = relu(h)
            elif layer.activation == "sigmoid":
                h = sigmoid(h)
        return h

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def state_arrays(self) -> list[np.ndarray]:
        return [p.value for p in self.parameters()]

    def load_state_arrays(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("state array count mismatch")
        for p, arr in zip(params, arrays):
            if p.value.shape != arr.shape:
                raise ValueError(f"state shape mismatch: {p.value.shape} vs {arr.shape}")
            p.value = np.asarray(arr, dtype=p.value.dtype)


def make_dense_net(sizes: list[int], activations: list[str], rng: np.random.Generator, dtype=np.float64) -> DenseNet:
    """He-uniform init for relu layers, Xavier-uniform for linear/sigmoid."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        if act == "relu":
            limit = math.sqrt(6.0 / fan_in)
        else:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        layers.append(DenseLayer(parameter(w), parameter(b), act))
    return DenseNet(layers)


# ----------------------------------------------------------------------------
# optimizer


def adam_init(params: list[Tensor]) -> dict:
    return {
        "m": [np.zeros_like(p.value) for p in params],
        "v": [np.zeros_like(p.value) for p in params],
        "t": 0,
    }


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: dict,
    lr: float = 5e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """Standard bias-corrected Adam update, in place on params."""
    if len(grads) != len(params):
        raise ValueError("one gradient per parameter required")
    state["t"] += 1
    t = state["t"]
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g)
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.value.shape}")
        state["m"][i] = beta1 * state["m"][i] + (1 - beta1) * g
        state["v"][i] = beta2 * state["v"][i] + (1 - beta2) * g**2
        m_hat = state["m"][i] / (1 - beta1**t)
        v_hat = state["v"][i] / (1 - beta2**t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
