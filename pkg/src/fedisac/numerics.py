"""Complex matrix helpers, a reverse-mode tape over real arrays, and optimizers.

Complex quantities never enter the tape directly: a complex array is carried as a
pair of real nodes (real part, imaginary part) and ``abs2`` joins them back into
a real power.  Every node holds a float64 numpy array, so one node can stand for
a whole minibatch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

LEAKY_SLOPE = 0.01


# ---------------------------------------------------------------------------
# complex matrices
# ---------------------------------------------------------------------------

def as_cmat(x) -> np.ndarray:
    """Validate and convert to a 2-D complex128 matrix."""
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def cmat_mul(a, b) -> np.ndarray:
    a = as_cmat(a)
    b = as_cmat(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def herm(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

class Var:
    """A node on a :class:`Tape`. Arithmetic operators build new nodes."""

    __slots__ = ("tape", "index", "value", "parents", "grad_fn", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, tape, value, parents=(), grad_fn=None, requires_grad=False):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad
        self.index = tape._record(self)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(self.tape, other)))

    def __rsub__(self, other):
        return add(_lift(self.tape, other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(self.tape, other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_lift(self.tape, other), self)

    def __getitem__(self, idx):
        return index(self, idx)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"


class Tape:
    """Ordered record of nodes. Inputs always precede the nodes that use them."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def _record(self, node: Var) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, value) -> Var:
        """A differentiable input (model parameter, beamformer, ...)."""
        v = Var(self, np.array(value, dtype=np.float64), requires_grad=True)
        self.leaves.append(v)
        return v

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=np.float64))


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _node(tape, value, parents, grad_fn) -> Var:
    req = any(p.requires_grad for p in parents)
    return Var(tape, value, parents if req else (), grad_fn if req else None, req)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _node(t, a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Var) -> Var:
    return _node(a.tape, -a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    return _node(t, av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def div(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    out = av / bv
    return _node(t, out, (a, b),
                 lambda g: (_unbroadcast(g / bv, a.shape),
                            _unbroadcast(-g * out / bv, b.shape)))


def reciprocal(a: Var) -> Var:
    out = 1.0 / a.value
    return _node(a.tape, out, (a,), lambda g: (-g * out * out,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return _node(a.tape, out, (a,), lambda g: (g * 0.5 / out,))


def log2(a: Var) -> Var:
    av = a.value
    return _node(a.tape, np.log2(av), (a,), lambda g: (g / (av * np.log(2.0)),))


def leaky_relu(a: Var, slope: float = LEAKY_SLOPE) -> Var:
    """max(x, slope*x) for 0 < slope < 1."""
    av = a.value
    d = np.where(av > 0, 1.0, slope)
    return _node(a.tape, av * d, (a,), lambda g: (g * d,))


def abs2(re: Var, im: Var) -> Var:
    """|re + j im|^2 elementwise."""
    t = _tape_of(re, im)
    re, im = _lift(t, re), _lift(t, im)
    rv, iv = re.value, im.value
    return _node(t, rv * rv + iv * iv, (re, im),
                 lambda g: (_unbroadcast(2.0 * g * rv, re.shape),
                            _unbroadcast(2.0 * g * iv, im.shape)))


def sum(a: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(a.tape, np.sum(a.value, axis=axis, keepdims=keepdims), (a,), grad_fn)


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.value.shape[axis]
    return sum(a, axis=axis) * (1.0 / n)


def matmul(a, b) -> Var:
    """Batched matrix product with numpy broadcasting of leading axes."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return _node(t, av @ bv, (a, b), grad_fn)


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return _node(a.tape, a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Var, axes) -> Var:
    inv = np.argsort(axes)
    return _node(a.tape, np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def index(a: Var, idx) -> Var:
    shape = a.shape

    key = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in key)

    def grad_fn(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.tape, a.value[idx], (a,), grad_fn)


def backward(tape: Tape, output: Var, seed=None) -> list[np.ndarray]:
    """Reverse sweep from ``output``; returns one gradient per leaf of ``tape``.

    ``seed`` is the upstream gradient dL/d(output); required unless the output
    is a scalar.
    """
    if output.tape is not tape:
        raise ValueError("output node belongs to another tape")
    if seed is None:
        if output.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        seed = np.ones_like(output.value)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise ValueError(f"seed shape {seed.shape} != output shape {output.shape}")

    adjoints: list[Optional[np.ndarray]] = [None] * (output.index + 1)
    adjoints[output.index] = seed
    for i in range(output.index, -1, -1):
        g = adjoints[i]
        if g is None:
            continue
        node = tape.nodes[i]
        if node.grad_fn is None:
            continue
        for p, gp in zip(node.parents, node.grad_fn(g)):
            if p.index >= i:
                raise RuntimeError(f"tape is not topologically ordered at node {i}")
            if gp is None or not p.requires_grad:
                continue
            adjoints[p.index] = gp if adjoints[p.index] is None else adjoints[p.index] + gp

    grads = []
    for leaf in tape.leaves:
        g = adjoints[leaf.index] if leaf.index < len(adjoints) else None
        grads.append(np.zeros_like(leaf.value) if g is None else np.array(g))
    adjoints.clear()
    return grads


def value_and_grad(fn: Callable[..., Var], *args: np.ndarray):
    """Evaluate ``fn`` on fresh leaves built from ``args``; return (value, grads)."""
    tape = Tape()
    leaves = [tape.leaf(a) for a in args]
    out = fn(*leaves)
    return float(out.value), backward(tape, out)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


def optimizer_step(state: OptimizerState, params: Sequence[np.ndarray],
                   grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Return updated parameters; ``state`` moments are advanced in place.

    Weight decay is decoupled (p <- p - lr*wd*p before the gradient step).
    """
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in parameter {i} at step {state.step + 1} "
                f"(nan={int(np.isnan(g).sum())}, inf={int(np.isinf(g).sum())})")

    state.step += 1
    lr, wd = state.lr, state.weight_decay
    if state.kind == "sgd":
        return [p - lr * wd * p - lr * g for p, g in zip(params, grads)]

    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p = p - lr * wd * p
        out.append(p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out
