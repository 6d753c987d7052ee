"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every operation builds a node of a computation DAG; calling ``backward()``
on a scalar result walks the tape in reverse topological order and
accumulates gradients additively into every tracked ancestor.  The tape is
rebuilt on every forward pass and garbage-collected with it.

Binary operations are shape-strict: no implicit broadcasting.  Explicit
ops (``repeat_rows``, ``scale_rows``, ``scale_cols``) cover the few
row/column expansion patterns the models need.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ufin.errors import NumericError, ShapeError

Array = np.ndarray


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer.

    A tensor is *tracked* if it was created with ``requires_grad=True`` or
    derives from a tracked tensor.  Only tracked tensors participate in
    backward passes; ``grad`` stays ``None`` until a backward pass (or
    ``zero_grad``) touches it.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False):
        self.values: Array = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], None] | None = None

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def freeze(self) -> None:
        """Detach from future tapes; used for frozen teacher parameters."""
        self.requires_grad = False
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode pass from a scalar output."""
        if self.values.size != 1:
            raise ShapeError(f"backward requires a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.values))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def __repr__(self) -> str:
        tag = ", tracked" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"


def _node(values: Array, parents: Sequence[Tensor], backward_fn: Callable[[Array], None]) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ: {a.shape} vs {b.shape}")


# -- arithmetic -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def backward(g: Array) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return _node(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def backward(g: Array) -> None:
        a._accumulate(g)
        b._accumulate(-g)

    return _node(a.values - b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _check_same_shape("mul", a, b)

    def backward(g: Array) -> None:
        a._accumulate(g * b.values)
        b._accumulate(g * a.values)

    return _node(a.values * b.values, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g: Array) -> None:
        a._accumulate(g * c)

    return _node(a.values * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes do not conform: {a.shape} @ {b.shape}")

    def backward(g: Array) -> None:
        a._accumulate(g @ b.values.T)
        b._accumulate(a.values.T @ g)

    return _node(a.values @ b.values, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose requires a matrix, got shape {a.shape}")

    def backward(g: Array) -> None:
        a._accumulate(g.T)

    return _node(a.values.T.copy(), (a,), backward)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""

    def backward(g: Array) -> None:
        a._accumulate(np.full_like(a.values, float(g)))

    return _node(np.asarray(a.values.sum()), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}")

    def backward(g: Array) -> None:
        a._accumulate(g.reshape(a.shape))

    return _node(a.values.reshape(shape), (a,), backward)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: empty operand list")
    for p in parts[1:]:
        if p.ndim != parts[0].ndim:
            raise ShapeError(
                f"concat: rank mismatch: {parts[0].shape} vs {p.shape}"
            )
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            p._accumulate(g[tuple(idx)])

    return _node(np.concatenate([p.values for p in parts], axis=axis), parts, backward)


# -- row/column structure ------------------------------------------------


def rows(a: Tensor, idx) -> Tensor:
    """Gather rows of a matrix; index -1 yields a zero row (no gradient)."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"rows: need matrix and 1-d index, got {a.shape} and {idx.shape}")
    if idx.size and (idx.max() >= a.shape[0] or idx.min() < -1):
        raise ShapeError(f"rows: index out of range for {a.shape[0]} rows")
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    out = a.values[safe]
    out[~valid] = 0.0

    def backward(g: Array) -> None:
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.values)
        np.add.at(a.grad, safe[valid], g[valid])

    return _node(out, (a,), backward)


def row(a: Tensor, i: int) -> Tensor:
    """Single row of a matrix, kept two-dimensional."""
    return rows(a, np.asarray([i], dtype=np.int64))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{start}:{stop}] for shape {a.shape}")

    def backward(g: Array) -> None:
        full = np.zeros_like(a.values)
        full[:, start:stop] = g
        a._accumulate(full)

    return _node(a.values[:, start:stop].copy(), (a,), backward)


def repeat_rows(v: Tensor, n: int) -> Tensor:
    """Tile a single-row matrix into n identical rows."""
    if v.ndim != 2 or v.shape[0] != 1:
        raise ShapeError(f"repeat_rows: need shape (1, d), got {v.shape}")

    def backward(g: Array) -> None:
        v._accumulate(g.sum(axis=0, keepdims=True))

    return _node(np.repeat(v.values, n, axis=0), (v,), backward)


def scale_rows(m: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of m by scalar s[i]; s has shape (n, 1)."""
    if m.ndim != 2 or s.shape != (m.shape[0], 1):
        raise ShapeError(f"scale_rows: shapes do not conform: {m.shape} and {s.shape}")

    def backward(g: Array) -> None:
        m._accumulate(g * s.values)
        s._accumulate((g * m.values).sum(axis=1, keepdims=True))

    return _node(m.values * s.values, (m, s), backward)


def scale_cols(m: Tensor, s: Tensor) -> Tensor:
    """Multiply column j of m by scalar s[j]; s has shape (1, d)."""
    if m.ndim != 2 or s.shape != (1, m.shape[1]):
        raise ShapeError(f"scale_cols: shapes do not conform: {m.shape} and {s.shape}")

    def backward(g: Array) -> None:
        m._accumulate(g * s.values)
        s._accumulate((g * m.values).sum(axis=0, keepdims=True))

    return _node(m.values * s.values, (m, s), backward)


def tile_cols(m: Tensor, reps: int) -> Tensor:
    """Repeat a matrix reps times along columns: (n, d) -> (n, reps*d)."""
    if m.ndim != 2:
        raise ShapeError(f"tile_cols: need a matrix, got shape {m.shape}")
    n, d = m.shape

    def backward(g: Array) -> None:
        m._accumulate(g.reshape(n, reps, d).sum(axis=1))

    return _node(np.tile(m.values, (1, reps)), (m,), backward)


# -- normalization and gating ---------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization followed by an elementwise affine map.

    Each row is shifted to mean 0 and scaled to unit variance (up to eps),
    then multiplied by ``gain`` and shifted by ``bias`` (both shape (1, d)).
    Rows of length 1 are rejected: their variance is identically zero.
    """
    if x.ndim != 2:
        raise ShapeError(f"layer_norm: need a matrix, got shape {x.shape}")
    d = x.shape[1]
    if d < 2:
        raise ShapeError(f"layer_norm: row length must be >= 2, got {d}")
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ShapeError(
            f"layer_norm: affine shapes {gain.shape}, {bias.shape} do not match rows of length {d}"
        )
    mu = x.values.mean(axis=1, keepdims=True)
    xc = x.values - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g: Array) -> None:
        gain._accumulate((g * xhat).sum(axis=0, keepdims=True))
        bias._accumulate(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            gh = g * gain.values
            term = gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True)
            x._accumulate(term * inv)

    return _node(xhat * gain.values + bias.values, (x, gain, bias), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if x.ndim != 2:
        raise ShapeError(f"softmax: need a matrix, got shape {x.shape}")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g: Array) -> None:
        x._accumulate(y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _node(y, (x,), backward)


# -- elementwise nonlinearities --------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def backward(g: Array) -> None:
        x._accumulate(g * mask)

    return _node(np.where(mask, x.values, 0.0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = np.exp(-np.logaddexp(0.0, -x.values))

    def backward(g: Array) -> None:
        x._accumulate(g * y * (1.0 - y))

    return _node(y, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        x._accumulate(g * np.exp(-np.logaddexp(0.0, -x.values)))

    return _node(np.logaddexp(0.0, x.values), (x,), backward)


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.values)
    if not np.all(np.isfinite(y)):
        raise NumericError("exp overflow: input too large")

    def backward(g: Array) -> None:
        x._accumulate(g * y)

    return _node(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.values <= 0):
        raise NumericError("log requires strictly positive input")

    def backward(g: Array) -> None:
        x._accumulate(g / x.values)

    return _node(np.log(x.values), (x,), backward)


def cos(x: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        x._accumulate(-g * np.sin(x.values))

    return _node(np.cos(x.values), (x,), backward)


def sin(x: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        x._accumulate(g * np.cos(x.values))

    return _node(np.sin(x.values), (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only where nothing was clipped."""
    inside = (x.values >= lo) & (x.values <= hi)

    def backward(g: Array) -> None:
        x._accumulate(g * inside)

    return _node(np.clip(x.values, lo, hi), (x,), backward)
