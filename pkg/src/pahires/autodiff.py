"""Small reverse-mode autodiff over float64 numpy arrays.

Graphs are built define-by-run: every primitive call returns a new
:class:`Tensor` that remembers its inputs and how to push a gradient back to
them. Only scalar-tensor and row-vector bias broadcasting is accepted; any
other shape disagreement raises :class:`ShapeError`.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "Parameter", "Graph", "ShapeError", "NonFiniteError", "GradientError",
    "constant", "add", "sub", "mul", "scale", "matmul", "sin", "relu", "concat",
    "slice_", "reshape", "transpose", "sum_", "mean", "softmax", "round_",
    "evaluate", "gradient",
]

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GradientError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "parents", "backward", "op", "id", "requires_grad", "differentiable")

    def __init__(self, value, parents=(), backward=None, op="const", differentiable=True):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward = backward
        self.op = op
        self.id = next(_ids)
        self.requires_grad = any(p.requires_grad for p in self.parents)
        self.differentiable = differentiable

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def name(self) -> str:
        return f"{self.op}#{self.id}"

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor({self.name}, shape={self.shape})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


class Parameter(Tensor):
    """A trainable leaf. Its ``value`` is updated in place by optimizers."""

    __slots__ = ("label",)

    def __init__(self, value, label: str = "param"):
        super().__init__(np.array(value, dtype=np.float64), op="param")
        self.requires_grad = True
        self.label = label

    @property
    def name(self) -> str:
        return self.label


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(value, parents, backward, op, differentiable=True) -> Tensor:
    if not np.all(np.isfinite(value)):
        shapes = ", ".join(str(p.shape) for p in parents)
        raise NonFiniteError(f"non-finite value produced at node {op} (inputs {shapes})")
    return Tensor(value, parents, backward, op, differentiable)


def _is_scalar(t: Tensor) -> bool:
    return t.value.ndim == 0 or t.value.size == 1 and t.value.ndim <= 1


def _reduce_to(grad: np.ndarray, target: Tensor) -> np.ndarray:
    # undo the two permitted broadcasts: scalar and trailing row vector
    if grad.shape == target.shape:
        return grad
    if _is_scalar(target):
        return np.asarray(grad.sum()).reshape(target.shape)
    return grad.reshape(-1, target.shape[-1]).sum(axis=0).reshape(target.shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    for big, small in ((a, b), (b, a)):
        if small.value.ndim == 1 and big.value.ndim >= 1 and big.shape[-1] == small.shape[0]:
            return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ----------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _node(a.value + b.value, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    return add(a, scale(constant(b), -1.0))


def mul(a, b) -> Tensor:
    """Elementwise product (equal shapes or scalar-tensor)."""
    a, b = constant(a), constant(b)
    if not (a.shape == b.shape or _is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def backward(g):
        return _reduce_to(g * bv, a), _reduce_to(g * av, b)

    return _node(av * bv, (a, b), backward, "mul")


def scale(a, c: float) -> Tensor:
    a = constant(a)
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands, or batched 3-D operands with equal batch size."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.ndim not in (2, 3) or av.ndim != bv.ndim or av.shape[-1] != bv.shape[-2] \
            or av.shape[:-2] != bv.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return _node(av @ bv, (a, b), backward, "matmul")


def sin(a) -> Tensor:
    a = constant(a)
    v = a.value
    return _node(np.sin(v), (a,), lambda g: (g * np.cos(v),), "sin")


def relu(a) -> Tensor:
    a = constant(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [constant(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    ndim = tensors[0].value.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.value.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != \
                tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _node(np.concatenate([t.value for t in tensors], axis=ax), tensors, backward, "concat")


def slice_(a, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = constant(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[index] += g
        return (out,)

    return _node(a.value[index], (a,), backward, "slice")


def reshape(a, shape) -> Tensor:
    a = constant(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from exc
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = constant(a)
    if a.value.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got {a.shape}")
    return _node(np.swapaxes(a.value, -1, -2), (a,),
                 lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def sum_(a, axis=None) -> Tensor:
    a = constant(a)
    shape = a.shape
    out = a.value.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a, axis=None) -> Tensor:
    a = constant(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    a = constant(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), backward, "softmax")


def round_(a) -> Tensor:
    """Round half away from zero. Has no derivative; gradients through it are refused."""
    a = constant(a)
    v = a.value
    return _node(np.sign(v) * np.floor(np.abs(v) + 0.5), (a,), None, "round", differentiable=False)


# ------------------------------------------------------------ graph + backward

class Graph:
    """A forward pass recorded by calling ``build(**inputs)``.

    ``build`` returns either a Tensor or a mapping of output names to Tensors.
    Every evaluation records a fresh graph; the parameter set is fixed.
    """

    def __init__(self, build: Callable[..., Tensor | Mapping[str, Tensor]],
                 parameters: Iterable[Parameter] = (), input_shapes: Mapping[str, tuple] | None = None):
        self.build = build
        self.parameters = list(parameters)
        self.input_shapes = dict(input_shapes or {})

    def __call__(self, **inputs):
        return evaluate(self, inputs)


def evaluate(graph: Graph, inputs: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    for key, shape in graph.input_shapes.items():
        if key not in inputs:
            raise ShapeError(f"input {key!r} not supplied")
        got = np.shape(inputs[key])
        if tuple(got) != tuple(shape):
            raise ShapeError(f"input {key!r}: expected shape {tuple(shape)}, got {got}")
    tensors = {k: constant(v) for k, v in inputs.items()}
    for k, t in tensors.items():
        if not np.all(np.isfinite(t.value)):
            raise NonFiniteError(f"non-finite value in input {k!r}")
    out = graph.build(**tensors)
    if isinstance(out, Tensor):
        return {"output": out}
    return dict(out)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def gradient(loss: Tensor, parameters: Iterable[Parameter]) -> dict[Parameter, np.ndarray]:
    """dloss/dparam for every parameter; unused parameters get zeros."""
    parameters = list(parameters)
    if loss.value.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.shape}")
    grads = {p.id: np.zeros(p.shape) for p in parameters}
    if not loss.requires_grad:
        return {p: grads[p.id] for p in parameters}
    acc = {loss.id: np.ones(loss.shape)}
    for node in reversed(_topological(loss)):
        g = acc.pop(node.id, None)
        if g is None:
            continue
        if not node.parents:
            if node.id in grads:
                grads[node.id] = grads[node.id] + g
            continue
        if not node.differentiable:
            raise GradientError(f"non-differentiable op {node.name} on the loss path")
        for parent, pg in zip(node.parents, node.backward(g)):
            if not parent.requires_grad:
                continue
            if parent.id in acc:
                acc[parent.id] = acc[parent.id] + pg
            else:
                acc[parent.id] = pg
    return {p: grads[p.id] for p in parameters}
