"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every vector-Jacobian product is itself written with the differentiable
primitives below, so the gradients returned by :func:`grad` with
``create_graph=True`` are ordinary graph nodes and can be differentiated
again. Nesting three times gives the third-order outer gradient used by
the learning-to-meta-learn update.

Example::

    x = leaf(3.0)
    (dx,) = grad(x * x * x, [x], create_graph=True)
    (d2x,) = grad(dx, [x])          # 6 * x = 18
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Expr",
    "ShapeError",
    "NonFiniteError",
    "leaf",
    "const",
    "detach",
    "add",
    "sub",
    "neg",
    "scalar_mul",
    "mul",
    "square",
    "power",
    "matmul",
    "matvec",
    "transpose",
    "relu",
    "sin",
    "cos",
    "sum",
    "mean",
    "reshape",
    "broadcast_to",
    "sum_to",
    "slice_last",
    "pad_last",
    "grad",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Operands of a primitive have incompatible shapes."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible operand shapes {', '.join(map(str, shapes))}")


class NonFiniteError(FloatingPointError):
    """A loss or gradient evaluated to NaN or Inf."""


VJP = Callable[..., tuple]


class Expr:
    """A node in the computation graph.

    ``value`` is always a float64 ndarray (0-d for scalars). Nodes created
    from inputs that do not require gradients are constants: they keep no
    parents and no vjp, so graphs built under ``create_graph=False`` are
    dropped as soon as the caller releases them.
    """

    __slots__ = ("value", "op", "parents", "requires_grad", "_vjp")

    def __init__(self, value, op: str = "const", parents: tuple = (),
                 requires_grad: bool = False, vjp: VJP | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.item())

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Expr(op={self.op!r}, shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(other, self)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(other, self)
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, n: int):
        return power(self, n)


def leaf(value) -> Expr:
    """A differentiable input."""
    return Expr(np.array(value, dtype=np.float64), "leaf", requires_grad=True)


def const(value) -> Expr:
    return Expr(value)


def detach(x: Expr) -> Expr:
    return x if not x.requires_grad else Expr(x.value)


def _as_expr(x) -> Expr:
    return x if isinstance(x, Expr) else Expr(x)


def _node(value: np.ndarray, op: str, parents: tuple, vjp: VJP) -> Expr:
    if any(p.requires_grad for p in parents):
        return Expr(value, op, parents, True, vjp)
    return Expr(value, op)


def _broadcast_shape(op: str, a: Expr, b: Expr) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- shape plumbing ---------------------------------------------------------

def sum_to(x: Expr, shape: tuple[int, ...]) -> Expr:
    """Sum ``x`` down to ``shape``; the adjoint of broadcasting."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    if lead < 0:
        raise ShapeError("sum_to", x.shape, shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1)
    value = x.value.sum(axis=axes, keepdims=True)
    if lead:
        value = value.reshape(value.shape[lead:])
    if value.shape != shape:
        raise ShapeError("sum_to", x.shape, shape)
    return _node(value, "sum_to", (x,), lambda g, a: (broadcast_to(g, a.shape),))


def broadcast_to(x: Expr, shape: tuple[int, ...]) -> Expr:
    x = _as_expr(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        value = np.broadcast_to(x.value, shape)
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, shape) from None
    return _node(value, "broadcast_to", (x,), lambda g, a: (sum_to(g, a.shape),))


def reshape(x: Expr, shape: tuple[int, ...]) -> Expr:
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return _node(value, "reshape", (x,), lambda g, a: (reshape(g, a.shape),))


def transpose(x: Expr) -> Expr:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError("transpose", x.shape)
    return _node(np.swapaxes(x.value, -1, -2), "transpose", (x,),
                 lambda g, a: (transpose(g),))


def slice_last(x: Expr, start: int, stop: int) -> Expr:
    """``x[..., start:stop]``."""
    if not 0 <= start <= stop <= x.shape[-1]:
        raise ShapeError("slice_last", x.shape, (start, stop))
    total = x.shape[-1]
    return _node(x.value[..., start:stop], "slice_last", (x,),
                 lambda g, a: (pad_last(g, start, total),))


def pad_last(x: Expr, start: int, total: int) -> Expr:
    """Embed ``x`` into zeros of length ``total`` along the last axis."""
    stop = start + x.shape[-1]
    if stop > total:
        raise ShapeError("pad_last", x.shape, (start, total))
    value = np.zeros(x.shape[:-1] + (total,))
    value[..., start:stop] = x.value
    return _node(value, "pad_last", (x,), lambda g, a: (slice_last(g, start, stop),))


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Expr:
    a, b = _as_expr(a), _as_expr(b)
    _broadcast_shape("add", a, b)
    return _node(a.value + b.value, "add", (a, b),
                 lambda g, x, y: (sum_to(g, x.shape), sum_to(g, y.shape)))


def sub(a, b) -> Expr:
    a, b = _as_expr(a), _as_expr(b)
    _broadcast_shape("sub", a, b)
    return _node(a.value - b.value, "sub", (a, b),
                 lambda g, x, y: (sum_to(g, x.shape), neg(sum_to(g, y.shape))))


def neg(a: Expr) -> Expr:
    return _node(-a.value, "neg", (a,), lambda g, x: (neg(g),))


def scalar_mul(c: float, a: Expr) -> Expr:
    """Multiply by a non-differentiable Python scalar."""
    c = float(c)
    a = _as_expr(a)
    return _node(c * a.value, "scalar_mul", (a,), lambda g, x: (scalar_mul(c, g),))


def mul(a, b) -> Expr:
    """Elementwise product with broadcasting."""
    a, b = _as_expr(a), _as_expr(b)
    _broadcast_shape("mul", a, b)
    return _node(a.value * b.value, "mul", (a, b),
                 lambda g, x, y: (sum_to(mul(g, y), x.shape), sum_to(mul(g, x), y.shape)))


def square(a: Expr) -> Expr:
    return _node(a.value * a.value, "square", (a,),
                 lambda g, x: (mul(g, scalar_mul(2.0, x)),))


def power(a: Expr, n: int) -> Expr:
    """Integer power ``a ** n`` with ``n >= 0``."""
    if n < 0 or int(n) != n:
        raise ValueError(f"power: exponent must be a non-negative integer, got {n}")
    n = int(n)
    if n == 0:
        return Expr(np.ones_like(a.value))
    if n == 1:
        return a
    return _node(a.value ** n, f"pow{n}", (a,),
                 lambda g, x: (mul(g, scalar_mul(n, power(x, n - 1))),))


def matmul(a, b) -> Expr:
    """Batched matrix product following ``np.matmul`` for operands of ndim >= 2."""
    a, b = _as_expr(a), _as_expr(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def vjp(g, x, y):
        return (sum_to(matmul(g, transpose(y)), x.shape),
                sum_to(matmul(transpose(x), g), y.shape))

    return _node(np.matmul(a.value, b.value), "matmul", (a, b), vjp)


def matvec(m, v) -> Expr:
    """Matrix (n, k) times vector (k,)."""
    m, v = _as_expr(m), _as_expr(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError("matvec", m.shape, v.shape)
    return reshape(matmul(m, reshape(v, (v.shape[0], 1))), (m.shape[0],))


# -- nonlinearities ---------------------------------------------------------

def relu(a: Expr) -> Expr:
    """max(a, 0); the derivative at exactly 0 is taken to be 0."""
    mask = a.value > 0

    def vjp(g, x):
        return (mul(g, Expr(mask.astype(np.float64))),)

    return _node(np.where(mask, a.value, 0.0), "relu", (a,), vjp)


def sin(a: Expr) -> Expr:
    return _node(np.sin(a.value), "sin", (a,), lambda g, x: (mul(g, cos(x)),))


def cos(a: Expr) -> Expr:
    return _node(np.cos(a.value), "cos", (a,), lambda g, x: (neg(mul(g, sin(x))),))


# -- reductions -------------------------------------------------------------

def sum(a: Expr, axis: int | None = None) -> Expr:  # noqa: A001
    """Sum over one axis, or over everything when ``axis`` is None."""
    a = _as_expr(a)
    if axis is None:
        return _node(np.asarray(a.value.sum()), "sum", (a,),
                     lambda g, x: (broadcast_to(g, x.shape),))
    axis = axis % a.ndim
    kept = a.shape[:axis] + (1,) + a.shape[axis + 1:]
    return _node(a.value.sum(axis=axis), "sum", (a,),
                 lambda g, x: (broadcast_to(reshape(g, kept), x.shape),))


def mean(a: Expr | Sequence[Expr], axis: int | None = None) -> Expr:
    """Mean over an axis of one Expr, or the elementwise mean of a list of Exprs."""
    if isinstance(a, Expr):
        n = a.value.size if axis is None else a.shape[axis]
        if n == 0:
            raise ValueError("mean of an empty array")
        return scalar_mul(1.0 / n, sum(a, axis))
    items = list(a)
    if not items:
        raise ValueError("mean of an empty list")
    total = items[0]
    for item in items[1:]:
        if item.shape != total.shape:
            raise ShapeError("mean", total.shape, item.shape)
        total = add(total, item)
    return scalar_mul(1.0 / len(items), total)


# -- differentiation --------------------------------------------------------

def _topo(output: Expr) -> list[Expr]:
    order: list[Expr] = []
    seen: set[int] = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Expr, inputs: Sequence[Expr], create_graph: bool = False) -> list[Expr]:
    """Gradients of a scalar ``output`` with respect to each of ``inputs``.

    Inputs may be leaves or intermediate nodes; the gradient for an
    intermediate node is the partial derivative through that node.
    Inputs that ``output`` does not depend on get exact zeros. With
    ``create_graph=False`` the results are constants.
    """
    if output.value.size != 1:
        raise ShapeError("grad (output must be scalar)", output.shape)
    inputs = list(inputs)
    targets = {id(x) for x in inputs}
    grads: dict[int, Expr] = {}

    if output.requires_grad:
        order = _topo(output)
        # keep only nodes that lie on a path from some input to the output
        needed: set[int] = set()
        for node in order:
            if id(node) in targets or any(id(p) in needed for p in node.parents):
                needed.add(id(node))
        grads[id(output)] = Expr(np.ones_like(output.value))
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._vjp is None or id(node) not in needed:
                continue
            parents = node.parents if create_graph else tuple(detach(p) for p in node.parents)
            if not create_graph:
                g = detach(g)
            for p, gp in zip(node.parents, node._vjp(g, *parents)):
                if gp is None or id(p) not in needed:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = gp if prev is None else add(prev, gp)
    elif id(output) in targets:
        grads[id(output)] = Expr(np.ones_like(output.value))

    out = []
    for x in inputs:
        g = grads.get(id(x))
        if g is None:
            g = Expr(np.zeros_like(x.value))
        elif not create_graph:
            g = detach(g)
        out.append(g)
    return out


def finite_diff_check(f: Callable[[Expr], Expr], theta, eps: float = 1e-5,
                      analytic: np.ndarray | None = None) -> float:
    """Max relative error between the analytic gradient of ``f`` and central differences.

    ``f`` maps a parameter Expr to a scalar Expr. The error per coordinate is
    ``|analytic - fd| / max(1, |fd|)``. Pass ``analytic`` to check a gradient
    computed elsewhere instead of the one obtained by differentiating ``f``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    theta = np.array(getattr(theta, "entries", theta), dtype=np.float64)
    if analytic is None:
        x = leaf(theta)
        y = f(x)
        _check_finite(y.value, "f(theta)")
        analytic = grad(y, [x])[0].value
    analytic = np.asarray(analytic, dtype=np.float64).reshape(theta.shape)

    fd = np.empty_like(theta)
    flat, fd_flat = theta.reshape(-1), fd.reshape(-1)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] += eps
        hi = f(const(probe.reshape(theta.shape))).value
        probe[i] -= 2 * eps
        lo = f(const(probe.reshape(theta.shape))).value
        _check_finite(hi, f"f at +eps probe {i}")
        _check_finite(lo, f"f at -eps probe {i}")
        fd_flat[i] = (float(hi) - float(lo)) / (2 * eps)
    if fd.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))


def _check_finite(value, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value in {what}")


def check_finite(value, what: str) -> None:
    """Raise :class:`NonFiniteError` if ``value`` holds NaN or Inf."""
    _check_finite(value.value if isinstance(value, Expr) else value, what)


def iter_nodes(output: Expr) -> Iterable[Expr]:
    """All differentiable ancestors of ``output`` (debugging aid)."""
    return iter(_topo(output))
