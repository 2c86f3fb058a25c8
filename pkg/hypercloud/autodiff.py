"""Reverse-mode differentiation over dense float64 arrays.

Forward values are computed eagerly and appended to a `Tape`; `Tape.backward`
sweeps the tape in reverse and accumulates gradients. Node ids are plain
integers and every node only refers to earlier nodes, so the tape order is
already a topological order.

Conventions that affect exact comparisons:
  * relu'(0) = 0
  * reduce-max routes the gradient to the first (lowest index) maximum
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from hypercloud.errors import DomainError, ShapeError


@dataclass(frozen=True)
class Tensor:
    """Immutable float64 array. The underlying buffer is marked read-only."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: Tensor
    ctx: dict = field(default_factory=dict)
    requires_grad: bool = False


# --- Primitives ---
#
# forward(values, **params) -> (output array, ctx)
# backward(grad, values, out, ctx, needs) -> one gradient (or None) per input


def _check_2d(kind: str, *arrays: np.ndarray):
    for a in arrays:
        if a.ndim != 2:
            raise ShapeError(f"{kind}: expected 2-D operands, got shapes {[x.shape for x in arrays]}")


def _matmul_fwd(values, **_):
    a, b = values
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    return a @ b, {}


def _matmul_bwd(g, values, out, ctx, needs):
    a, b = values
    return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


def _add_fwd(values, **_):
    a, b = values
    if a.shape == b.shape:
        return a + b, {"broadcast": False}
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a + b, {"broadcast": True}
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not conform (equal or row-bias only)")


def _add_bwd(g, values, out, ctx, needs):
    gb = g.sum(axis=0) if ctx["broadcast"] else g
    return (g if needs[0] else None, gb if needs[1] else None)


def _mul_fwd(values, **_):
    a, b = values
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return a * b, {}


def _mul_bwd(g, values, out, ctx, needs):
    a, b = values
    return (g * b if needs[0] else None, g * a if needs[1] else None)


def _relu_fwd(values, **_):
    (x,) = values
    return np.maximum(x, 0.0), {}


def _relu_bwd(g, values, out, ctx, needs):
    (x,) = values
    return (g * (x > 0.0),)


def _tanh_fwd(values, **_):
    (x,) = values
    return np.tanh(x), {}


def _tanh_bwd(g, values, out, ctx, needs):
    return (g * (1.0 - out * out),)


def _exp_fwd(values, **_):
    (x,) = values
    if not np.all(np.isfinite(x)):
        raise DomainError("exp: non-finite input")
    with np.errstate(over="ignore"):
        y = np.exp(x)
    if not np.all(np.isfinite(y)):
        raise DomainError(f"exp: overflow for input max {x.max()}")
    return y, {}


def _exp_bwd(g, values, out, ctx, needs):
    return (g * out,)


def _log_fwd(values, **_):
    (x,) = values
    if not np.all(np.isfinite(x)):
        raise DomainError("log: non-finite input")
    if np.any(x <= 0.0):
        raise DomainError(f"log: non-positive input (min {x.min()})")
    return np.log(x), {}


def _log_bwd(g, values, out, ctx, needs):
    (x,) = values
    return (g / x,)


def _negate_fwd(values, **_):
    (x,) = values
    return -x, {}


def _negate_bwd(g, values, out, ctx, needs):
    return (-g,)


def _sum_fwd(values, **_):
    (x,) = values
    return np.asarray(x.sum()), {}


def _sum_bwd(g, values, out, ctx, needs):
    (x,) = values
    return (np.broadcast_to(g, x.shape).copy(),)


def _max_fwd(values, **_):
    (x,) = values
    _check_2d("max", x)
    if x.shape[0] == 0:
        raise ShapeError("max: empty set dimension")
    idx = np.argmax(x, axis=0)
    return x[idx, np.arange(x.shape[1])], {"argmax": idx}


def _max_bwd(g, values, out, ctx, needs):
    (x,) = values
    gx = np.zeros_like(x)
    gx[ctx["argmax"], np.arange(x.shape[1])] = g
    return (gx,)


def _slice_fwd(values, *, key):
    """Basic slicing or integer-array indexing (a gather)."""
    (x,) = values
    try:
        y = x[key]
    except IndexError as e:
        raise ShapeError(f"slice: {key} out of range for shape {x.shape}") from e
    return np.array(y), {"key": key}


def _slice_bwd(g, values, out, ctx, needs):
    (x,) = values
    gx = np.zeros_like(x)
    # add.at so that repeated integer indices (gathers) accumulate
    np.add.at(gx, ctx["key"], g)
    return (gx,)


def _reshape_fwd(values, *, shape):
    (x,) = values
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return x.reshape(shape).copy(), {}


def _reshape_bwd(g, values, out, ctx, needs):
    (x,) = values
    return (g.reshape(x.shape),)


def _concat_fwd(values, *, axis=0):
    try:
        y = np.concatenate(values, axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: shapes {[v.shape for v in values]} along axis {axis}: {e}") from e
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    return y, {"axis": axis, "bounds": bounds}


def _concat_bwd(g, values, out, ctx, needs):
    parts = np.split(g, ctx["bounds"], axis=ctx["axis"])
    return tuple(p if n else None for p, n in zip(parts, needs))


@dataclass(frozen=True)
class Primitive:
    arity: int | None  # None: variadic
    forward: Callable
    backward: Callable


PRIMITIVES: dict[str, Primitive] = {
    "matmul": Primitive(2, _matmul_fwd, _matmul_bwd),
    "add": Primitive(2, _add_fwd, _add_bwd),
    "mul": Primitive(2, _mul_fwd, _mul_bwd),
    "relu": Primitive(1, _relu_fwd, _relu_bwd),
    "tanh": Primitive(1, _tanh_fwd, _tanh_bwd),
    "exp": Primitive(1, _exp_fwd, _exp_bwd),
    "log": Primitive(1, _log_fwd, _log_bwd),
    "negate": Primitive(1, _negate_fwd, _negate_bwd),
    "sum": Primitive(1, _sum_fwd, _sum_bwd),
    "max": Primitive(1, _max_fwd, _max_bwd),
    "slice": Primitive(1, _slice_fwd, _slice_bwd),
    "reshape": Primitive(1, _reshape_fwd, _reshape_bwd),
    "concat": Primitive(None, _concat_fwd, _concat_bwd),
}


class Tape:
    """Append-only record of eager computations.

    A tape has a single writer. Values are immutable `Tensor`s, so reading
    them from other threads is safe; independent tapes can run concurrently.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._grads: list[np.ndarray | None] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, requires_grad: bool = True) -> int:
        node = Node("leaf", (), Tensor(value), requires_grad=requires_grad)
        return self._append(node)

    def const(self, value) -> int:
        return self.leaf(value, requires_grad=False)

    def apply(self, kind: str, *inputs: int, **params) -> int:
        """Apply primitive `kind` to earlier nodes and return the new node id."""
        prim = PRIMITIVES.get(kind)
        if prim is None:
            raise ValueError(f"Unknown primitive '{kind}'. Known: {sorted(PRIMITIVES)}")
        if prim.arity is not None and len(inputs) != prim.arity:
            raise ValueError(f"{kind} takes {prim.arity} inputs, got {len(inputs)}")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"{kind}: node id {i} is not on this tape")
        values = [self.nodes[i].value.data for i in inputs]
        out, ctx = prim.forward(values, **params)
        requires_grad = any(self.nodes[i].requires_grad for i in inputs)
        return self._append(Node(kind, tuple(inputs), Tensor(out), ctx, requires_grad))

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        self._grads.append(None)
        return len(self.nodes) - 1

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value.data

    def grad(self, node_id: int) -> np.ndarray | None:
        return self._grads[node_id]

    def backward(self, loss: int) -> dict[int, np.ndarray]:
        """Populate gradients of `loss` for every node on a differentiable path
        to it and return the gradients of the trainable leaves."""
        out = self.nodes[loss].value
        if out.shape != ():
            raise ShapeError(f"backward: loss must be a scalar, got shape {out.shape}")

        self._grads = [None] * len(self.nodes)
        self._grads[loss] = np.ones(())
        for node_id in range(loss, -1, -1):
            g = self._grads[node_id]
            node = self.nodes[node_id]
            if g is None or node.kind == "leaf" or not node.requires_grad:
                continue
            values = [self.nodes[i].value.data for i in node.inputs]
            needs = [self.nodes[i].requires_grad for i in node.inputs]
            in_grads = PRIMITIVES[node.kind].backward(g, values, node.value.data, node.ctx, needs)
            for i, gi, need in zip(node.inputs, in_grads, needs):
                if not need or gi is None:
                    continue
                if self._grads[i] is None:
                    self._grads[i] = np.array(gi, dtype=np.float64)
                else:
                    self._grads[i] = self._grads[i] + gi

        return {
            i: (self._grads[i] if self._grads[i] is not None else np.zeros(n.value.shape))
            for i, n in enumerate(self.nodes)
            if n.kind == "leaf" and n.requires_grad
        }

    # --- Primitive shorthands ---

    def matmul(self, a: int, b: int) -> int:
        return self.apply("matmul", a, b)

    def add(self, a: int, b: int) -> int:
        return self.apply("add", a, b)

    def mul(self, a: int, b: int) -> int:
        return self.apply("mul", a, b)

    def relu(self, a: int) -> int:
        return self.apply("relu", a)

    def tanh(self, a: int) -> int:
        return self.apply("tanh", a)

    def exp(self, a: int) -> int:
        return self.apply("exp", a)

    def log(self, a: int) -> int:
        return self.apply("log", a)

    def negate(self, a: int) -> int:
        return self.apply("negate", a)

    def sum(self, a: int) -> int:
        return self.apply("sum", a)

    def max(self, a: int) -> int:
        return self.apply("max", a)

    def slice(self, a: int, key) -> int:
        return self.apply("slice", a, key=key)

    def reshape(self, a: int, shape) -> int:
        return self.apply("reshape", a, shape=tuple(shape))

    def concat(self, ids, axis: int = 0) -> int:
        return self.apply("concat", *ids, axis=axis)

    # --- Composites built from the primitives above ---

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.negate(b))

    def scale(self, a: int, factor: float) -> int:
        return self.mul(a, self.const(np.full(self.value(a).shape, factor)))

    def linear(self, x: int, w: int, b: int) -> int:
        return self.add(self.matmul(x, w), b)


def apply_primitive(tape: Tape, kind: str, inputs) -> int:
    return tape.apply(kind, *inputs)


def backward(tape: Tape, loss: int) -> dict[int, np.ndarray]:
    return tape.backward(loss)


@dataclass(frozen=True)
class GradCheck:
    max_error: float
    excluded: tuple[int, ...] = ()


def grad_check(
    fn: Callable[[Tape, int], int],
    point,
    h: float = 1e-5,
    kink_tol: float = 1e-3,
) -> GradCheck:
    """Compare autodiff against central differences at `point`.

    `fn(tape, x)` builds a scalar graph from the leaf `x`. The error per
    coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). Coordinates whose
    left and right one-sided differences disagree sit on a kink; they are
    left out of the maximum and reported in `excluded`.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    x0 = np.array(point, dtype=np.float64)

    def evaluate(x: np.ndarray) -> float:
        tape = Tape()
        v = float(tape.value(fn(tape, tape.leaf(x))))
        if not np.isfinite(v):
            raise DomainError(f"grad_check: non-finite evaluation {v}")
        return v

    tape = Tape()
    x_id = tape.leaf(x0)
    loss = fn(tape, x_id)
    f0 = float(tape.value(loss))
    if not np.isfinite(f0):
        raise DomainError(f"grad_check: non-finite evaluation {f0}")
    g_ad = tape.backward(loss)[x_id].ravel()

    worst = 0.0
    excluded = []
    flat = x0.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = evaluate(xp.reshape(x0.shape))
        fm = evaluate(xm.reshape(x0.shape))
        right = (fp - f0) / h
        left = (f0 - fm) / h
        if abs(right - left) > kink_tol * max(1.0, abs(right), abs(left)):
            excluded.append(i)
            continue
        g_fd = (fp - fm) / (2.0 * h)
        err = abs(g_ad[i] - g_fd) / max(1.0, abs(g_ad[i]), abs(g_fd))
        worst = max(worst, err)
    return GradCheck(worst, tuple(excluded))
