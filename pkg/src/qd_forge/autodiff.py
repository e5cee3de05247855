"""Small reverse-mode automatic differentiation engine over dense float64 arrays.

Only the operations needed by the autoencoders in this package are provided:
affine maps, a handful of activations, mean squared error, stop-gradient,
row gathering and basic arithmetic. Every op records its inputs and a closure
that pushes the output gradient back to them; :func:`backward` walks the
recorded graph in reverse topological order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64

ACTIVATIONS = ("relu", "gelu", "silu", "tanh", "sigmoid", "gaussian", "softmax", "identity")


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """Raised for unknown layer or activation settings."""


class Tensor:
    """A float64 array that can take part in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE, order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


# --------------------------------------------------------------------------- ops


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (B, I), weight (I, O), bias (O,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(
            f"affine expects input (B, I), weight (I, O), bias (O,); got "
            f"{x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"affine: input axis 1 has size {x.shape[1]} but weight axis 0 has size {weight.shape[0]}"
        )
    if bias.shape[0] != weight.shape[1]:
        raise DimensionError(
            f"affine: bias axis 0 has size {bias.shape[0]} but weight axis 1 has size {weight.shape[1]}"
        )
    out = _node(x.data @ weight.data + bias.data, (x, weight, bias), "affine")

    def _back(g: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, g @ weight.data.T)
        if weight.requires_grad:
            _accumulate(weight, x.data.T @ g)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))

    out._backward = _back
    return out


def activation_forward(kind: str, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy evaluation, shared by the graph op and inference paths."""
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "gelu":
        return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))
    if kind == "silu":
        return x / (1.0 + np.exp(-x))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if kind == "gaussian":
        return np.exp(-(x * x))
    if kind == "softmax":
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)
    if kind == "identity":
        return x
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation(kind: str, x: Tensor, axis: int = -1) -> Tensor:
    y = activation_forward(kind, x.data, axis)
    out = _node(y, (x,), kind)

    def _back(g: np.ndarray) -> None:
        xd = x.data
        if kind == "relu":
            d = g * (xd > 0)
        elif kind == "gelu":
            cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
            pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
            d = g * (cdf + xd * pdf)
        elif kind == "silu":
            s = 1.0 / (1.0 + np.exp(-xd))
            d = g * (s * (1.0 + xd * (1.0 - s)))
        elif kind == "tanh":
            d = g * (1.0 - y * y)
        elif kind == "sigmoid":
            d = g * (y * (1.0 - y))
        elif kind == "gaussian":
            d = g * (-2.0 * xd * y)
        elif kind == "softmax":
            d = y * (g - (g * y).sum(axis=axis, keepdims=True))
        else:
            d = g
        _accumulate(x, d)

    out._backward = _back
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if a.shape != b.shape:
        raise DimensionError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = _node(np.array(np.mean(diff * diff)), (a, b), "mse")

    def _back(g: np.ndarray) -> None:
        d = (2.0 / n) * diff * g
        _accumulate(a, d)
        _accumulate(b, -d)

    out._backward = _back
    return out


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in the forward pass; blocks the gradient in the backward pass."""
    return Tensor(x.data, requires_grad=False, op="stop_gradient")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add operands differ in shape: {a.shape} vs {b.shape}")
    out = _node(a.data + b.data, (a, b), "add")

    def _back(g):
        _accumulate(a, g)
        _accumulate(b, g)

    out._backward = _back
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub operands differ in shape: {a.shape} vs {b.shape}")
    out = _node(a.data - b.data, (a, b), "sub")

    def _back(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    out._backward = _back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul operands differ in shape: {a.shape} vs {b.shape}")
    out = _node(a.data * b.data, (a, b), "mul")

    def _back(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    out._backward = _back
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _node(a.data * c, (a,), "scale")
    out._backward = lambda g: _accumulate(a, g * c)
    return out


def tsum(a: Tensor) -> Tensor:
    out = _node(np.array(a.data.sum()), (a,), "sum")
    out._backward = lambda g: _accumulate(a, np.broadcast_to(g, a.shape))
    return out


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``table[index]``; gradients scatter-add back into ``table``."""
    index = np.asarray(index, dtype=np.intp)
    out = _node(table.data[index], (table,), "gather")

    def _back(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, index, g)
            _accumulate(table, full)

    out._backward = _back
    return out


# ---------------------------------------------------------------------- graph


@dataclass
class ComputationGraph:
    """Nodes reachable from an output, in an order valid for the forward pass."""

    nodes: list[Tensor]

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationGraph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents and n.requires_grad]

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        for n in self.nodes:
            if n._parents:
                n.grad = None
        loss.grad = np.ones_like(loss.data)
        for n in reversed(self.nodes):
            if n._backward is not None and n.grad is not None:
                n._backward(n.grad)


def backward(
    loss: Tensor, wrt: Sequence[Tensor] = (), graph: ComputationGraph | None = None
) -> ComputationGraph:
    """Populate ``.grad`` on every node that feeds ``loss``.

    Leaf gradients accumulate, so callers zero them between steps. Tensors in
    ``wrt`` that do not influence the loss are given a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = graph or ComputationGraph.from_output(loss)
    graph.backward(loss)
    for p in wrt:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    return graph


# --------------------------------------------------------------------- layers


class Linear:
    """Affine layer with Glorot-uniform weights and zero bias."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.weight = Tensor(rng.uniform(-limit, limit, size=(n_in, n_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class MLP:
    """Stack of Linear layers with a hidden activation and an optional output one.

    ``sizes`` lists every width including input and output, e.g. ``[256, 64, 2]``.
    """

    def __init__(self, sizes: Sequence[int], hidden: str, output: str, rng: np.random.Generator):
        if len(sizes) < 2:
            raise ConfigurationError("an MLP needs at least input and output sizes")
        for kind in (hidden, output):
            if kind not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {kind!r}")
        self.sizes = list(sizes)
        self.hidden = hidden
        self.output = output
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            kind = self.output if i == last else self.hidden
            if kind != "identity":
                x = activation(kind, x)
        return x

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        """Same arithmetic as ``__call__`` without recording a graph."""
        x = np.asarray(x, dtype=DTYPE)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = x @ layer.weight.data + layer.bias.data
            kind = self.output if i == last else self.hidden
            if kind != "identity":
                x = activation_forward(kind, x)
        return x


def flatten_parameters(params: Iterable[Tensor]) -> np.ndarray:
    return np.concatenate([p.data.ravel() for p in params]) if params else np.zeros(0)


def load_flat_parameters(params: Sequence[Tensor], flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=DTYPE)
    total = sum(p.data.size for p in params)
    if flat.size != total:
        raise DimensionError(f"flat vector has {flat.size} values, parameters need {total}")
    offset = 0
    for p in params:
        n = p.data.size
        p.data = flat[offset : offset + n].reshape(p.shape).copy()
        offset += n


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    lr: float = 7e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor]) -> None:
    """One bias-corrected Adam update in place, using each parameter's ``.grad``."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError("Adam state was built for a different parameter list")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} has no gradient; run backward first")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Thin holder pairing a parameter list with its :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 7e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.state, self.params)
