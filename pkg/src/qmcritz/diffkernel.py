"""Small reverse-mode tape over numpy arrays.

Only what the deep Ritz loss needs is supported: broadcasting arithmetic,
matmul, slicing/reshape for unpacking a flat parameter vector, sums, and
the swish activation together with its first derivative (so that forward
tangents of the network can themselves be recorded and differentiated).

Nodes hold whole arrays (one entry per batch point) rather than scalars;
this keeps the tape short enough to be driven from Python at training
speed. Everything is float64.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Optional

import numba
import numpy as np
from scipy.special import expit

from .errors import NumericFailure

__all__ = [
    "Tape",
    "Var",
    "swish",
    "swish_prime",
    "dual_affine",
    "swish_dual",
    "value_and_grad",
    "loss_param_grad",
    "finite_diff_gradient",
]


class Node(NamedTuple):
    kind: str
    operands: tuple
    fwd: Optional[Callable]
    vjp: Optional[Callable]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _sigmoid(x):
    # expit saturates cleanly at both ends, so swish(x) = x * expit(x) never overflows
    return expit(x)


def _swish(x):
    return x * _sigmoid(x)


def _swish_d1(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _swish_d2(x):
    s = _sigmoid(x)
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))


class Tape:
    """Topologically ordered record of array operations."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[np.ndarray] = []
        self._sigmoid: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value) -> "Var":
        return self._push("leaf", (), np.asarray(value, dtype=np.float64), None, None)

    def _push(self, kind, operands, value, fwd, vjp) -> "Var":
        self.nodes.append(Node(kind, tuple(v.index for v in operands), fwd, vjp))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1)

    def apply(self, kind, operands, fwd, vjp) -> "Var":
        """Record ``fwd(*operand_values)``; ``vjp(g, vals, out)`` returns one cotangent per operand."""
        vals = [self.values[v.index] for v in operands]
        return self._push(kind, operands, fwd(*vals), fwd, vjp)

    def sigmoid_of(self, x: "Var") -> np.ndarray:
        """Sigmoid of a node's value, computed once per node."""
        s = self._sigmoid.get(x.index)
        if s is None:
            s = self._sigmoid[x.index] = _sigmoid(x.value)
        return s

    def backward(self, output: "Var") -> list:
        """Cotangents of a scalar ``output`` with respect to every node."""
        out_val = self.values[output.index]
        if out_val.size != 1:
            raise ValueError("backward needs a scalar output")
        grads: list = [None] * len(self.nodes)
        grads[output.index] = np.ones_like(out_val)
        for i in range(output.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            vals = [self.values[j] for j in node.operands]
            for j, gj in zip(node.operands, node.vjp(g, vals, self.values[i])):
                if gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        return grads

    def replay(self) -> list:
        """Recompute every node from the leaves; must match ``values`` bitwise."""
        out = []
        for node, recorded in zip(self.nodes, self.values):
            if node.fwd is None:
                out.append(recorded)
            else:
                out.append(node.fwd(*[out[j] for j in node.operands]))
        return out


def _const(x):
    return np.asarray(x, dtype=np.float64)


class Var:
    """Handle to a tape node. Supports the operators used by the network code."""

    __slots__ = ("tape", "index")
    __array_ufunc__ = None  # ndarray OP Var defers to the reflected Var method

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    # -- binary elementwise -------------------------------------------------

    def _binary(self, other, kind, f, da, db, reflected=False):
        tape = self.tape
        if isinstance(other, Var):
            a, b = (other, self) if reflected else (self, other)

            def vjp(g, vals, out):
                x, y = vals
                return _unbroadcast(da(g, x, y), x.shape), _unbroadcast(db(g, x, y), y.shape)

            return tape.apply(kind, (a, b), f, vjp)
        c = _const(other)
        if reflected:
            return tape.apply(
                kind, (self,), lambda y: f(c, y), lambda g, vals, out: (_unbroadcast(db(g, c, vals[0]), vals[0].shape),)
            )
        return tape.apply(
            kind, (self,), lambda x: f(x, c), lambda g, vals, out: (_unbroadcast(da(g, vals[0], c), vals[0].shape),)
        )

    def __add__(self, other):
        return self._binary(other, "add", np.add, lambda g, x, y: g, lambda g, x, y: g)

    def __radd__(self, other):
        return self._binary(other, "add", np.add, lambda g, x, y: g, lambda g, x, y: g, reflected=True)

    def __sub__(self, other):
        return self._binary(other, "sub", np.subtract, lambda g, x, y: g, lambda g, x, y: -g)

    def __rsub__(self, other):
        return self._binary(other, "sub", np.subtract, lambda g, x, y: g, lambda g, x, y: -g, reflected=True)

    def __mul__(self, other):
        return self._binary(other, "mul", np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)

    def __rmul__(self, other):
        return self._binary(other, "mul", np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x, reflected=True)

    def __matmul__(self, other):
        return self._binary(
            other, "matmul", np.matmul, lambda g, x, y: g @ np.swapaxes(y, -1, -2), lambda g, x, y: np.swapaxes(x, -1, -2) @ g
        )

    def __rmatmul__(self, other):
        return self._binary(
            other,
            "matmul",
            np.matmul,
            lambda g, x, y: g @ np.swapaxes(y, -1, -2),
            lambda g, x, y: np.swapaxes(x, -1, -2) @ g,
            reflected=True,
        )

    def __neg__(self):
        return self.tape.apply("neg", (self,), np.negative, lambda g, vals, out: (-g,))

    # -- shape ops --------------------------------------------------------------

    def __getitem__(self, idx):
        def vjp(g, vals, out):
            full = np.zeros_like(vals[0])
            full[idx] = g
            return (full,)

        return self.tape.apply("slice", (self,), lambda x: x[idx], vjp)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.apply("reshape", (self,), lambda x: x.reshape(shape), lambda g, vals, out: (g.reshape(vals[0].shape),))

    @property
    def T(self):
        return self.tape.apply("transpose", (self,), lambda x: x.T, lambda g, vals, out: (g.T,))

    def sum(self, axis=None):
        def vjp(g, vals, out):
            x = vals[0]
            if axis is None:
                return (np.broadcast_to(g, x.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

        return self.tape.apply("sum", (self,), lambda x: np.asarray(x.sum(axis=axis)), vjp)

    def mean(self):
        return self.sum() * (1.0 / self.value.size)


def swish(x):
    """x * sigmoid(x), evaluated without overflow for large |x|."""
    if isinstance(x, Var):
        s = x.tape.sigmoid_of(x)
        z = x.value
        return x.tape._push("swish", (x,), z * s, _swish, lambda g, vals, out: (g * (s * (1.0 + z * (1.0 - s))),))
    return _swish(np.asarray(x, dtype=np.float64))


def swish_prime(x):
    """Derivative of swish; differentiable on the tape via the second derivative."""
    if isinstance(x, Var):
        s = x.tape.sigmoid_of(x)
        z = x.value
        value = s * (1.0 + z * (1.0 - s))
        return x.tape._push(
            "swish_prime", (x,), value, _swish_d1, lambda g, vals, out: (g * (s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))),)
        )
    return _swish_d1(np.asarray(x, dtype=np.float64))


def _affine_fwd(x, w, b):
    out = (x.reshape(-1, x.shape[-1]) @ w.T).reshape(x.shape[:-1] + (w.shape[0],))
    out[0] += b
    return out


def _affine_vjp(g, vals, out):
    xv, wv, _ = vals
    g2 = g.reshape(-1, g.shape[-1])
    gx = (g2 @ wv).reshape(xv.shape)
    gw = g2.T @ xv.reshape(-1, xv.shape[-1])
    return gx, gw, g[0].sum(axis=0)


def dual_affine(x, w, b):
    """``x @ w.T`` on every channel of a stacked ``(1+K, N, m)`` array, plus ``b`` on channel 0.

    Channel 0 carries primal values and channels 1.. their tangents, which
    is why the bias only enters the first channel.
    """
    if not isinstance(w, Var):
        return _affine_fwd(np.asarray(x, dtype=np.float64), np.asarray(w), np.asarray(b))
    if not isinstance(b, Var):
        raise TypeError("dual_affine expects w and b both on the tape or neither")
    if isinstance(x, Var):
        return w.tape.apply("dual_affine", (x, w, b), _affine_fwd, _affine_vjp)
    xc = _const(x)
    return w.tape.apply(
        "dual_affine",
        (w, b),
        lambda wv, bv: _affine_fwd(xc, wv, bv),
        lambda g, vals, out: _affine_vjp(g, (xc,) + tuple(vals), out)[1:],
    )


@numba.njit(cache=True)
def _swish_dual_kernel(z, want_derivs):
    c, n, m = z.shape
    out = np.empty_like(z)
    d1 = np.empty((n, m))
    d2 = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            p = z[0, i, j]
            if p >= 0.0:
                s = 1.0 / (1.0 + math.exp(-p))
            else:
                e = math.exp(p)
                s = e / (1.0 + e)
            a = s * (1.0 + p * (1.0 - s))
            out[0, i, j] = p * s
            for k in range(1, c):
                out[k, i, j] = a * z[k, i, j]
            if want_derivs:
                d1[i, j] = a
                d2[i, j] = s * (1.0 - s) * (2.0 + p * (1.0 - 2.0 * s))
    return out, d1, d2


@numba.njit(cache=True)
def _swish_dual_vjp_kernel(g, z, d1, d2):
    c, n, m = z.shape
    gz = np.empty_like(z)
    for i in range(n):
        for j in range(m):
            acc = g[0, i, j] * d1[i, j]
            for k in range(1, c):
                acc += d2[i, j] * g[k, i, j] * z[k, i, j]
                gz[k, i, j] = d1[i, j] * g[k, i, j]
            gz[0, i, j] = acc
    return gz


def _swish_dual_fwd(z):
    return _swish_dual_kernel(np.ascontiguousarray(z), False)[0]


def swish_dual(z):
    """Swish applied to a stacked dual array.

    Channel 0 is the primal pre-activation; channels 1.. are its tangents,
    which get multiplied by swish'(primal). The elementwise work runs in a
    compiled loop because it dominates the cost of a training step.
    """
    if not isinstance(z, Var):
        return _swish_dual_fwd(np.asarray(z, dtype=np.float64))
    zv = np.ascontiguousarray(z.value)
    value, d1, d2 = _swish_dual_kernel(zv, True)

    def vjp(g, vals, out):
        return (_swish_dual_vjp_kernel(np.ascontiguousarray(g), zv, d1, d2),)

    return z.tape._push("swish_dual", (z,), value, _swish_dual_fwd, vjp)


def value_and_grad(loss_fn: Callable, params: np.ndarray, iteration=None):
    """Evaluate ``loss_fn(theta_var)`` on a fresh tape and return ``(value, grad, aux)``.

    ``loss_fn`` receives the parameter vector as a tape leaf and returns
    either a scalar Var or a tuple ``(scalar Var, aux)``; ``aux`` is passed
    through untouched (the loss breakdown, typically). The tape is dropped
    on return.
    """
    tape = Tape()
    theta = tape.leaf(np.asarray(params, dtype=np.float64))
    # overflow is reported through NumericFailure below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        out = loss_fn(theta)
    aux = None
    if isinstance(out, tuple):
        out, aux = out
    if not isinstance(out, Var):
        # loss does not depend on the parameters at all
        value = float(np.asarray(out))
        return value, np.zeros_like(theta.value), aux
    value = float(out.value)
    if not np.isfinite(value):
        raise NumericFailure("non-finite loss", iteration=iteration)
    with np.errstate(over="ignore", invalid="ignore"):
        grad = tape.backward(out)[theta.index]
    if grad is None:
        grad = np.zeros_like(theta.value)
    if not np.all(np.isfinite(grad)):
        raise NumericFailure("non-finite gradient", iteration=iteration)
    return value, grad, aux


def loss_param_grad(params: np.ndarray, loss_fn: Callable, iteration=None) -> np.ndarray:
    """Gradient of a batch loss with respect to every parameter."""
    return value_and_grad(loss_fn, params, iteration=iteration)[1]


def finite_diff_gradient(f: Callable, params, h: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(p + h e_j) - f(p - h e_j)) / 2h`` per coordinate."""
    if h <= 0:
        raise ValueError("step h must be positive")
    p = np.array(params, dtype=np.float64)
    flat = p.reshape(-1)
    grad = np.empty_like(flat)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f(p)
        flat[j] = orig - h
        fm = f(p)
        flat[j] = orig
        grad[j] = (fp - fm) / (2.0 * h)
    return grad.reshape(p.shape)
