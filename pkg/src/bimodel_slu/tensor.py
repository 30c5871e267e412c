"""Dense tensors with reverse-mode automatic differentiation.

Every operation that consumes a tensor with ``requires_grad=True`` records a
node (its parents plus a closure that maps the output adjoint to parent
adjoints). Calling :meth:`Tensor.backward` on a scalar walks those nodes in
reverse topological order. The recorded graph lives only as long as the
tensors that reference it, so a fresh graph is built for every training step.

Only two broadcasting forms exist: bias addition over the batch axis
(``(m, n) + (n,)``) and a constant mask multiplied into a state.
"""

from __future__ import annotations

import builtins
import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """A precondition of an operation was violated."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _not_scalar(t: Tensor) -> float:
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.data, b.data

    def back(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g))
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise DimensionError(f"add: shapes {a.shape} and {b.shape} are incompatible")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.data, b.data
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    v = x.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


_ELEMENTWISE = {"add": add, "mul": mul, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op: str, *operands: Tensor) -> Tensor:
    """Dispatch one of ``add``, ``mul``, ``sigmoid``, ``tanh`` by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*operands)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: empty tensor list")
    first = tensors[0]
    axis = axis % first.ndim if first.ndim else 0
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            s != f for i, (s, f) in enumerate(zip(t.shape, first.shape)) if i != axis
        ):
            raise DimensionError(
                f"concat: shapes {[x.shape for x in tensors]} differ outside axis {axis}"
            )
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("stack: empty tensor list")
    if any(t.shape != tensors[0].shape for t in tensors):
        raise DimensionError(f"stack: shapes differ {[t.shape for t in tensors]}")
    out = np.stack([t.data for t in tensors])
    return _make(out, tuple(tensors), lambda g: tuple(g))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a 2-D tensor."""
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: bad range {start}:{stop} for shape {x.shape}")
    shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[:, start:stop] = g
        return (full,)

    return _make(x.data[:, start:stop], (x,), back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of a 2-D tensor."""
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[0]:
        raise DimensionError(f"slice_rows: bad range {start}:{stop} for shape {x.shape}")
    shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[start:stop] = g
        return (full,)

    return _make(x.data[start:stop], (x,), back)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full(shape, g, dtype=x.dtype),))


def scale(x: Tensor, factor: float) -> Tensor:
    return _make(x.data * x.dtype.type(factor), (x,), lambda g: (g * factor,))


def blend(mask: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    """``mask * new + (1 - mask) * old`` for a constant 0/1 column mask of shape (batch, 1)."""
    m = np.asarray(mask, dtype=new.dtype).reshape(-1, 1)
    if new.shape != old.shape or m.shape[0] != new.shape[0]:
        raise DimensionError(f"blend: shapes {new.shape}, {old.shape}, mask {m.shape}")
    inv = 1.0 - m
    return _make(m * new.data + inv * old.data, (new, old), lambda g: (g * m, g * inv))


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        bad = idx[(idx < 0) | (idx >= vocab)][0]
        raise IndexError(f"embedding_lookup: index {bad} out of range for vocabulary of {vocab}")
    shape, dtype = table.shape, table.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx], (table,), back)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, target, weights=None, normalizer: float | None = None) -> Tensor:
    """Weighted negative log-likelihood of ``target`` under ``softmax(logits)``.

    Returns ``sum_i w_i * -log p_i[target_i] / normalizer``. With the default
    unit weights and ``normalizer = batch`` this is the mean cross entropy.
    """
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    rows, classes = logits.shape
    tgt = np.asarray(target, dtype=np.int64).reshape(-1)
    if tgt.shape[0] != rows:
        raise DimensionError(f"softmax_cross_entropy: {tgt.shape[0]} targets for {rows} rows")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= classes):
        raise IndexError(f"softmax_cross_entropy: target out of range for {classes} classes")
    w = np.ones(rows, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype).reshape(-1)
    norm = float(rows if normalizer is None else normalizer)
    logp = log_softmax(logits.data)
    nll = -logp[np.arange(rows), tgt]
    loss = np.asarray((w * nll).sum() / norm, dtype=logits.dtype)

    def back(g):
        grad = np.exp(logp)
        grad[np.arange(rows), tgt] -= 1.0
        return (grad * (w / norm)[:, None] * g,)

    return _make(loss, (logits,), back)


def detach(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), dtype=t.dtype)


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable ``t`` with ``requires_grad``."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss is not attached to a graph")
    order = _topological(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    """Adam with bias-corrected moment estimates.

    One instance owns the moment buffers for one list of parameters; the same
    tensor may appear in several optimizers, each keeping its own moments.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"adam_step: parameter {p.name or p.shape} has no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: Sequence[Tensor], state: Adam) -> None:
    """Apply one Adam update; ``params`` must be the list ``state`` was built for."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ContractError("adam_step: parameter list does not match optimizer state")
    state.step()


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(builtins.sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return total

