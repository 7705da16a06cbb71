"""Tape-based reverse-mode autodiff over dense float64 matrices.

Everything is a 2-D numpy array: features, parameters, gradients, even
scalar losses (shape ``(1, 1)``). A :class:`Tape` records every operation
applied to the tensors it owns; :meth:`Tape.backward` replays the record
in reverse creation order -- a reverse topological order of the
computation graph -- and accumulates gradients into the participating
:class:`Param` buffers.

Sized for small MLPs: no broadcasting beyond row-vector bias addition,
no views, no in-place graph surgery. A tape and its tensors belong to a
single execution context; independent tapes may run concurrently.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, TrainingError

Array = np.ndarray


def as_matrix(data) -> Array:
    """Coerce ``data`` to a 2-D float64 array. 1-D input becomes a row."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


class Param:
    """A trainable matrix with a persistent gradient buffer.

    ``grad`` accumulates across backward passes until cleared by
    :meth:`zero_grad` (optimizer steps clear it automatically).
    """

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = as_matrix(value).copy()
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def copy(self) -> "Param":
        return Param(self.value)

    def __repr__(self) -> str:
        return f"Param(shape={self.value.shape})"


class Tensor:
    """A value recorded on a tape, together with its gradient rule."""

    __slots__ = ("value", "tape", "param", "_backprop")

    def __init__(self, value: Array, tape: "Tape", param: Param | None = None,
                 backprop: Callable | None = None):
        self.value = value
        self.tape = tape
        self.param = param
        self._backprop = backprop

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape})"


class Tape:
    """Ordered record of operations; replayed in reverse for gradients."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._leaves: dict[int, Tensor] = {}

    def _track(self, t: Tensor) -> Tensor:
        self._nodes.append(t)
        return t

    def constant(self, data) -> Tensor:
        """A tensor that does not receive gradients."""
        return self._track(Tensor(as_matrix(data), self))

    def leaf(self, param: Param) -> Tensor:
        """The tensor view of ``param``; one shared node per tape."""
        node = self._leaves.get(id(param))
        if node is None:
            node = self._track(Tensor(param.value, self, param=param))
            self._leaves[id(param)] = node
        return node

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into every participating Param.grad."""
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.value.shape != (1, 1):
            raise ValueError(f"loss must be a 1x1 scalar, got shape {loss.value.shape}")
        grads: dict[int, Array] = {id(loss): np.ones((1, 1))}

        def accumulate(node: Tensor, g: Array) -> None:
            buf = grads.get(id(node))
            if buf is None:
                grads[id(node)] = np.array(g, dtype=np.float64)
            else:
                buf += g

        for node in reversed(self._nodes):
            g = grads.get(id(node))
            if g is None:
                continue
            if node.param is not None:
                node.param.grad += g
            if node._backprop is not None:
                node._backprop(g, accumulate)


def wrap(tape: Tape, x) -> Tensor:
    """Lift a raw array or Param onto ``tape`` (Tensors pass through)."""
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ValueError("operands were recorded on different tapes")
        return x
    if isinstance(x, Param):
        return tape.leaf(x)
    return tape.constant(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise ValueError("at least one operand must be a Tensor")


def matmul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = wrap(tape, a), wrap(tape, b)
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul shapes do not conform: {a.value.shape} x {b.value.shape}")
    av, bv = a.value, b.value

    def backprop(g, acc):
        acc(a, g @ bv.T)
        acc(b, av.T @ g)

    return tape._track(Tensor(av @ bv, tape, backprop=backprop))


def transpose(a: Tensor) -> Tensor:
    tape = a.tape

    def backprop(g, acc):
        acc(a, g.T)

    return tape._track(Tensor(a.value.T.copy(), tape, backprop=backprop))


def _binary_same_shape(a, b, name):
    tape = _tape_of(a, b)
    a, b = wrap(tape, a), wrap(tape, b)
    if a.value.shape != b.value.shape:
        raise DimensionError(
            f"{name} requires equal shapes, got {a.value.shape} and {b.value.shape}")
    return tape, a, b


def add(a, b) -> Tensor:
    tape, a, b = _binary_same_shape(a, b, "add")

    def backprop(g, acc):
        acc(a, g)
        acc(b, g)

    return tape._track(Tensor(a.value + b.value, tape, backprop=backprop))


def sub(a, b) -> Tensor:
    tape, a, b = _binary_same_shape(a, b, "sub")

    def backprop(g, acc):
        acc(a, g)
        acc(b, -g)

    return tape._track(Tensor(a.value - b.value, tape, backprop=backprop))


def mul(a, b) -> Tensor:
    tape, a, b = _binary_same_shape(a, b, "mul")
    av, bv = a.value, b.value

    def backprop(g, acc):
        acc(a, g * bv)
        acc(b, g * av)

    return tape._track(Tensor(av * bv, tape, backprop=backprop))


def add_row(x, row) -> Tensor:
    """Add a 1 x C row vector to every row of an N x C matrix."""
    tape = _tape_of(x, row)
    x, row = wrap(tape, x), wrap(tape, row)
    if row.value.shape != (1, x.value.shape[1]):
        raise DimensionError(
            f"bias shape {row.value.shape} does not match matrix {x.value.shape}")

    def backprop(g, acc):
        acc(x, g)
        acc(row, g.sum(axis=0, keepdims=True))

    return tape._track(Tensor(x.value + row.value, tape, backprop=backprop))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backprop(g, acc):
        acc(a, g * c)

    return a.tape._track(Tensor(a.value * c, a.tape, backprop=backprop))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backprop(g, acc):
        acc(a, g)

    return a.tape._track(Tensor(a.value + c, a.tape, backprop=backprop))


def relu(a) -> Tensor:
    tape = _tape_of(a)
    a = wrap(tape, a)
    mask = a.value > 0

    def backprop(g, acc):
        acc(a, g * mask)

    return tape._track(Tensor(np.where(mask, a.value, 0.0), tape, backprop=backprop))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)

    def backprop(g, acc):
        acc(a, g * out)

    return a.tape._track(Tensor(out, a.tape, backprop=backprop))


def log(a: Tensor) -> Tensor:
    av = a.value

    def backprop(g, acc):
        acc(a, g / av)

    return a.tape._track(Tensor(np.log(av), a.tape, backprop=backprop))


def xlogx(a: Tensor) -> Tensor:
    """Elementwise x*log(x) with the 0*log(0) := 0 convention."""
    av = a.value
    pos = av > 0
    out = np.where(pos, av * np.log(np.where(pos, av, 1.0)), 0.0)

    def backprop(g, acc):
        acc(a, g * np.where(pos, np.log(np.where(pos, av, 1.0)) + 1.0, 0.0))

    return a.tape._track(Tensor(out, a.tape, backprop=backprop))


def rowsum(a: Tensor) -> Tensor:
    """Sum along each row: N x C -> N x 1."""
    shape = a.value.shape

    def backprop(g, acc):
        acc(a, np.broadcast_to(g, shape))

    return a.tape._track(Tensor(a.value.sum(axis=1, keepdims=True), a.tape,
                                backprop=backprop))


def colsum(a: Tensor) -> Tensor:
    """Sum down each column: N x C -> 1 x C."""
    shape = a.value.shape

    def backprop(g, acc):
        acc(a, np.broadcast_to(g, shape))

    return a.tape._track(Tensor(a.value.sum(axis=0, keepdims=True), a.tape,
                                backprop=backprop))


def sum_all(a: Tensor) -> Tensor:
    """Sum over every entry: N x C -> 1 x 1."""
    shape = a.value.shape

    def backprop(g, acc):
        acc(a, np.full(shape, g[0, 0]))

    return a.tape._track(Tensor(np.array([[a.value.sum()]]), a.tape,
                                backprop=backprop))


def softmax_rows(a) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    tape = _tape_of(a)
    a = wrap(tape, a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backprop(g, acc):
        acc(a, (g - (g * out).sum(axis=1, keepdims=True)) * out)

    return tape._track(Tensor(out, tape, backprop=backprop))


def normalize_rows(a) -> Tensor:
    """Scale each row to unit L2 norm; all-zero rows stay zero."""
    tape = _tape_of(a)
    a = wrap(tape, a)
    norms = np.linalg.norm(a.value, axis=1, keepdims=True)
    nonzero = norms > 0
    safe = np.where(nonzero, norms, 1.0)
    out = a.value / safe

    def backprop(g, acc):
        gx = (g - (g * out).sum(axis=1, keepdims=True) * out) / safe
        acc(a, np.where(nonzero, gx, 0.0))

    return tape._track(Tensor(out, tape, backprop=backprop))


def affine(x, weight, bias) -> Tensor:
    """x @ weight + bias, the basic dense layer."""
    return add_row(matmul(x, weight), bias)


def _check_finite_grads(params: Iterable[Param]) -> None:
    for p in params:
        if not np.isfinite(p.grad).all():
            raise TrainingError("non-finite gradient encountered during optimizer step")


class SGD:
    """Plain gradient descent; clears gradients after each step."""

    def __init__(self, lr: float):
        self.lr = float(lr)

    def step(self, params: Sequence[Param]) -> None:
        _check_finite_grads(params)
        for p in params:
            p.value -= self.lr * p.grad
            p.zero_grad()


class Adam:
    """Adam with the conventional defaults; state keyed per parameter."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state: dict[int, tuple[Array, Array]] = {}
        self._step = 0

    def step(self, params: Sequence[Param]) -> None:
        _check_finite_grads(params)
        self._step += 1
        t = self._step
        b1, b2 = self.beta1, self.beta2
        for p in params:
            state = self._state.get(id(p))
            if state is None:
                state = (np.zeros_like(p.value), np.zeros_like(p.value))
                self._state[id(p)] = state
            m, v = state
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad ** 2
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()


def make_optimizer(mode: str, lr: float):
    if mode == "sgd":
        return SGD(lr)
    if mode == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer mode {mode!r} (expected 'sgd' or 'adam')")
