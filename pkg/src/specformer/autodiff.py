"""Eager reverse-mode automatic differentiation over 2-D float64 arrays.

Every value is a matrix (scalars are 1x1). Operations compute their result
immediately and append a node to the tape holding the input ids and a closure
that maps the output gradient to input gradients. :func:`backward` walks the
tape once, in reverse id order.

Only one broadcasting rule exists (:func:`broadcast_row`); every other op
requires exactly matching shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import kernels

__all__ = [
    "ShapeError",
    "Tape",
    "Var",
    "Gradients",
    "backward",
    "gradient_check",
    "GradCheckReport",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "concat_cols",
    "slice_cols",
    "softmax_rows",
    "log_softmax_rows",
    "layer_norm",
    "relu",
    "tanh",
    "exp",
    "mean_all",
    "sum_all",
    "broadcast_row",
    "dropout",
    "mlp_basis_conv",
]

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    pass


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "id", "value", "requires_grad")

    def __init__(self, tape: "Tape", id: int, value: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.id = id
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


@dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    grad_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]


class Tape:
    """Append-only record of a forward computation."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self.trainable: dict[int, str] = {}
        self.needs_grad: list[bool] = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, value, name: Optional[str] = None, trainable: bool = True) -> Var:
        v = np.array(value, dtype=np.float64, ndmin=2, copy=True)
        if v.ndim != 2:
            raise ShapeError(f"leaf values must be 2-D, got shape {v.shape}")
        node_id = len(self.nodes)
        self.nodes.append(_Node("leaf", (), None))
        self.values.append(v)
        self.needs_grad.append(trainable)
        if trainable:
            self.trainable[node_id] = name if name is not None else f"var{node_id}"
        return Var(self, node_id, v, trainable)

    def constant(self, value) -> Var:
        return self.variable(value, trainable=False)

    def params(self, values: Mapping[str, np.ndarray]) -> dict[str, Var]:
        """Register every array of ``values`` as a named trainable leaf."""
        return {name: self.variable(values[name], name=name) for name in values}

    def _push(self, kind, value, inputs, grad_fn) -> Var:
        # nodes downstream of trainable leaves only keep their gradient rule
        node_id = len(self.nodes)
        needed = any(self.needs_grad[i] for i in inputs)
        self.nodes.append(_Node(kind, tuple(inputs), grad_fn if needed else None))
        self.values.append(value)
        self.needs_grad.append(needed)
        return Var(self, node_id, value, needed)


class Gradients(dict):
    """``{var id: gradient}`` for the trainable leaves of a tape."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        super().__init__(grads)
        self._names = dict(tape.trainable)

    def named(self) -> dict[str, np.ndarray]:
        return {self._names[i]: g for i, g in self.items()}


def _tape_of(*vs: Var) -> Tape:
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _same_shape(kind: str, a: Var, b: Var) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------


def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return _tape_of(a, b)._push("add", a.value + b.value, (a.id, b.id), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return _tape_of(a, b)._push("sub", a.value - b.value, (a.id, b.id), lambda g: (g, -g))


def mul(a: Var, b: Var) -> Var:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    ra, rb = a.requires_grad, b.requires_grad

    def grad_fn(g):
        return (g * bv if ra else None, g * av if rb else None)

    return _tape_of(a, b)._push("mul", av * bv, (a.id, b.id), grad_fn)


def scale(a: Var, s: float) -> Var:
    s = float(s)
    return a.tape._push("scale", a.value * s, (a.id,), lambda g: (g * s,))


def matmul(a: Var, b: Var) -> Var:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    ra, rb = a.requires_grad, b.requires_grad

    def grad_fn(g):
        return (g @ bv.T if ra else None, av.T @ g if rb else None)

    return _tape_of(a, b)._push("matmul", av @ bv, (a.id, b.id), grad_fn)


def transpose(a: Var) -> Var:
    return a.tape._push("transpose", np.ascontiguousarray(a.value.T), (a.id,), lambda g: (g.T,))


def concat_cols(parts: Sequence[Var]) -> Var:
    if not parts:
        raise ShapeError("concat_cols: nothing to concatenate")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def grad_fn(g):
        return tuple(g[:, bounds[k] : bounds[k + 1]] for k in range(len(parts)))

    value = np.concatenate([p.value for p in parts], axis=1)
    return _tape_of(*parts)._push("concat_cols", value, tuple(p.id for p in parts), grad_fn)


def slice_cols(a: Var, start: int, stop: int) -> Var:
    rows, cols = a.shape
    if not 0 <= start < stop <= cols:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for shape {a.shape}")

    def grad_fn(g):
        full = np.zeros((rows, cols))
        full[:, start:stop] = g
        return (full,)

    return a.tape._push("slice_cols", a.value[:, start:stop].copy(), (a.id,), grad_fn)


def broadcast_row(a: Var, rows: int) -> Var:
    """Repeat a 1 x c row ``rows`` times."""
    if a.shape[0] != 1:
        raise ShapeError(f"broadcast_row: expected a single row, got shape {a.shape}")
    value = np.repeat(a.value, rows, axis=0)
    return a.tape._push("broadcast_row", value, (a.id,), lambda g: (g.sum(axis=0, keepdims=True),))


def relu(a: Var) -> Var:
    mask = a.value > 0.0
    return a.tape._push("relu", np.where(mask, a.value, 0.0), (a.id,), lambda g: (g * mask,))


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return a.tape._push("tanh", t, (a.id,), lambda g: (g * (1.0 - t * t),))


def exp(a: Var) -> Var:
    e = np.exp(a.value)
    return a.tape._push("exp", e, (a.id,), lambda g: (g * e,))


def sum_all(a: Var) -> Var:
    shape = a.shape
    return a.tape._push(
        "sum_all", np.array([[a.value.sum()]]), (a.id,), lambda g: (np.full(shape, g[0, 0]),)
    )


def mean_all(a: Var) -> Var:
    shape = a.shape
    count = a.value.size
    return a.tape._push(
        "mean_all",
        np.array([[a.value.sum() / count]]),
        (a.id,),
        lambda g: (np.full(shape, g[0, 0] / count),),
    )


# ---------------------------------------------------------------------------
# row-wise normalizations
# ---------------------------------------------------------------------------


def softmax_rows(a: Var) -> Var:
    z = a.value - a.value.max(axis=1, keepdims=True)
    s = np.exp(z)
    s /= s.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return a.tape._push("softmax_rows", s, (a.id,), grad_fn)


def log_softmax_rows(a: Var) -> Var:
    z = a.value - a.value.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    s = np.exp(out)

    def grad_fn(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return a.tape._push("log_softmax_rows", out, (a.id,), grad_fn)


def layer_norm(a: Var, eps: float = LAYER_NORM_EPS) -> Var:
    """Normalize each row to zero mean and unit variance (no affine part)."""
    x = a.value
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv

    def grad_fn(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * xhat).mean(axis=1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return a.tape._push("layer_norm", xhat, (a.id,), grad_fn)


def dropout(a: Var, p: float, rng: Optional[np.random.Generator], train: bool) -> Var:
    """Inverted dropout; the identity when not training or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return a.tape._push("dropout", a.value * keep, (a.id,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# fused convolution through an MLP-combined, materialized basis
# ---------------------------------------------------------------------------


def mlp_basis_conv(
    bases: Sequence[Var], w1: Var, b1: Var, w2: Var, b2: Var, x: Var
) -> Var:
    """Per-channel convolution with ``S_hat = MLP([I || S_1 || ... || S_M])``.

    ``bases`` are n x n matrices, ``w1`` is (M+1) x h, ``b1`` 1 x h, ``w2``
    h x d, ``b2`` 1 x d and ``x`` n x d. Output column i is
    ``S_hat[:, :, i] @ x[:, i]``; the n x n x d tensor is streamed row by row.
    """
    n, dim = x.shape
    nb = len(bases)
    for s in bases:
        if s.shape != (n, n):
            raise ShapeError(f"mlp_basis_conv: basis shape {s.shape} != {(n, n)}")
    if w1.shape[0] != nb + 1 or b1.shape != (1, w1.shape[1]):
        raise ShapeError(f"mlp_basis_conv: first layer {w1.shape}/{b1.shape} for {nb} bases")
    if w2.shape != (w1.shape[1], dim) or b2.shape != (1, dim):
        raise ShapeError(f"mlp_basis_conv: second layer {w2.shape}/{b2.shape} for width {dim}")
    stack = np.ascontiguousarray(np.stack([s.value for s in bases])) if nb else np.zeros((0, n, n))
    args = (
        stack,
        np.ascontiguousarray(w1.value),
        np.ascontiguousarray(b1.value[0]),
        np.ascontiguousarray(w2.value),
        np.ascontiguousarray(b2.value[0]),
        np.ascontiguousarray(x.value),
    )
    out = kernels.mlp_conv_forward(*args)

    def grad_fn(g):
        gs, gw1, gb1, gw2, gb2, gx = kernels.mlp_conv_backward(np.ascontiguousarray(g), *args)
        return tuple(gs[m] for m in range(nb)) + (gw1, gb1[None, :], gw2, gb2[None, :], gx)

    inputs = tuple(s.id for s in bases) + (w1.id, b1.id, w2.id, b2.id, x.id)
    return _tape_of(x, w1, *bases)._push("mlp_basis_conv", out, inputs, grad_fn)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Var) -> Gradients:
    """Reverse accumulation from a 1x1 ``loss``; returns gradients of trainable leaves."""
    if loss.tape is not tape:
        raise ValueError("loss does not belong to this tape")
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be 1x1, got shape {loss.shape}")
    grads: list[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[loss.id] = np.ones((1, 1))
    for node_id in range(loss.id, -1, -1):
        g = grads[node_id]
        node = tape.nodes[node_id]
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.inputs, node.grad_fn(g)):
            if pg is None:
                continue
            # gradient rules may hand back views of shared buffers, so never
            # accumulate in place; fresh arrays are made on the second write
            if grads[parent] is None:
                grads[parent] = pg
            else:
                grads[parent] = grads[parent] + pg
    out = {}
    for var_id in tape.trainable:
        g = grads[var_id]
        if g is None:
            out[var_id] = np.zeros_like(tape.values[var_id])
        else:
            out[var_id] = np.array(g, dtype=np.float64, copy=True)
    return Gradients(tape, out)


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def worst(self, k: int = 5) -> list[tuple[str, float]]:
        return sorted(self.errors.items(), key=lambda kv: -kv[1])[:k]

    def format(self) -> str:
        width = max((len(n) for n in self.errors), default=4)
        lines = [f"{'name':<{width}}  max_rel_err"]
        lines += [f"{n:<{width}}  {e:.3e}" for n, e in self.worst(len(self.errors))]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def gradient_check(
    closure: Callable[[Tape, dict[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare taped gradients of ``closure`` with central differences.

    ``closure(tape, vars)`` must build a deterministic 1x1 loss from the named
    leaves in ``vars``. Relative error per entry uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``; the report keeps the worst per parameter.
    """
    params = {k: np.array(v, dtype=np.float64, ndmin=2) for k, v in params.items()}
    tape = Tape()
    loss = closure(tape, tape.params(params))
    analytic = backward(tape, loss).named()

    def evaluate(values):
        t = Tape()
        return float(closure(t, t.params(values)).value[0, 0])

    report = GradCheckReport(tolerance=tolerance)
    for name, base in params.items():
        worst = 0.0
        for idx in np.ndindex(base.shape):
            probe = dict(params)
            shifted = base.copy()
            shifted[idx] = base[idx] + h
            probe[name] = shifted
            up = evaluate(probe)
            shifted = base.copy()
            shifted[idx] = base[idx] - h
            probe[name] = shifted
            down = evaluate(probe)
            numeric = (up - down) / (2.0 * h)
            exact = analytic[name][idx]
            denom = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denom)
        report.errors[name] = worst
    return report
