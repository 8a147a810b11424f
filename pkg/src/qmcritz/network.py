"""Residual swish network used as the trial function.

    u(x) = a . f_n(...f_1(W x + c)) + b,   f_i(s) = swish(T2 swish(T1 s + b1) + b2) + s

Parameters live in one flat float64 vector. The same forward code runs on
plain arrays (evaluation) and on tape variables (training), so the network
is written once.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diffkernel import Var, dual_affine, swish, swish_dual
from .errors import ConfigurationError, UsageError

__all__ = [
    "NetworkShape",
    "BoundaryWrap",
    "DualBatch",
    "layout",
    "unflatten",
    "flatten",
    "block_forward",
    "net_forward",
    "dual_forward",
    "forward_with_input_grad",
    "wrapped_forward",
    "wrapped_dual_forward",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<B3I")


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    width: int
    num_blocks: int

    def __post_init__(self):
        if self.input_dim < 1 or self.width < 1 or self.num_blocks < 0:
            raise ConfigurationError(f"invalid network shape {self}")

    @property
    def param_count(self) -> int:
        k, m, n = self.input_dim, self.width, self.num_blocks
        return m * k + m + n * (2 * m * m + 2 * m) + m + 1


def layout(shape: NetworkShape) -> list[tuple[str, int, tuple]]:
    """``(name, offset, array shape)`` for every parameter group, in storage order."""
    k, m = shape.input_dim, shape.width
    groups = [("lift_w", (m, k)), ("lift_b", (m,))]
    for i in range(shape.num_blocks):
        groups += [(f"w1_{i}", (m, m)), (f"b1_{i}", (m,)), (f"w2_{i}", (m, m)), (f"b2_{i}", (m,))]
    groups += [("head_a", (m,)), ("head_b", (1,))]
    out, offset = [], 0
    for name, shp in groups:
        out.append((name, offset, shp))
        offset += int(np.prod(shp))
    return out


def _check(theta, shape: NetworkShape):
    size = theta.shape[0] if isinstance(theta, Var) else np.shape(theta)[0]
    if size != shape.param_count:
        raise ConfigurationError(f"parameter vector has {size} entries, shape {shape} needs {shape.param_count}")


def unflatten(theta, shape: NetworkShape) -> dict:
    """Views (or tape slices) of ``theta`` keyed by group name."""
    _check(theta, shape)
    parts = {}
    for name, offset, shp in layout(shape):
        size = int(np.prod(shp))
        parts[name] = theta[offset : offset + size].reshape(shp)
    return parts


def flatten(parts: dict, shape: NetworkShape) -> np.ndarray:
    return np.concatenate([np.asarray(parts[name], dtype=np.float64).reshape(-1) for name, _, _ in layout(shape)])


def block_forward(s, w1, b1, w2, b2):
    """One residual block ``swish(w2 swish(w1 s + b1) + b2) + s`` on row vectors."""
    return swish(swish(s @ w1.T + b1) @ w2.T + b2) + s


def _as_batch(x, shape: NetworkShape) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != shape.input_dim:
        raise ConfigurationError(f"points have dimension {x.shape[1]}, network expects {shape.input_dim}")
    return x


def net_forward(theta, shape: NetworkShape, x):
    """Network values at the rows of ``x`` (shape ``(N,)``)."""
    p = unflatten(theta, shape)
    s = _as_batch(x, shape) @ p["lift_w"].T + p["lift_b"]
    for i in range(shape.num_blocks):
        s = block_forward(s, p[f"w1_{i}"], p[f"b1_{i}"], p[f"w2_{i}"], p[f"b2_{i}"])
    return (s * p["head_a"]).sum(axis=-1) + p["head_b"]


@dataclass
class DualBatch:
    """Values at N points plus one tangent row per input coordinate.

    ``primal`` has shape ``(N,)`` and ``tangents`` shape ``(K, N)``; either
    may be a tape variable.
    """

    primal: object
    tangents: object

    def __post_init__(self):
        k = self.tangents.shape[0]
        if len(self.tangents.shape) != 2:
            raise UsageError("tangents must be (K, N)")
        self.input_dim = k


def dual_forward(theta, shape: NetworkShape, x) -> DualBatch:
    """Network values and input gradients by forward tangent propagation.

    The hidden state is a stacked array of shape ``(1+K, N, m)``: channel 0
    is the primal value, channel k+1 its derivative along x_k. Weights act
    on every channel; biases only on channel 0.
    """
    x = _as_batch(x, shape)
    n = x.shape[0]
    k = shape.input_dim
    p = unflatten(theta, shape)
    # dual input: the points themselves plus the identity seeds d x / d x_k
    seeds = np.zeros((1 + k, n, k))
    seeds[0] = x
    seeds[1:] = np.eye(k)[:, None, :]
    h = dual_affine(seeds, p["lift_w"], p["lift_b"])
    for i in range(shape.num_blocks):
        z1 = dual_affine(h, p[f"w1_{i}"], p[f"b1_{i}"])
        z2 = dual_affine(swish_dual(z1), p[f"w2_{i}"], p[f"b2_{i}"])
        h = swish_dual(z2) + h
    out = dual_affine(h, p["head_a"].reshape(1, -1), p["head_b"]).reshape(1 + k, n)
    return DualBatch(out[0], out[1:])


def forward_with_input_grad(theta, shape: NetworkShape, x):
    """``(u, grad_x)`` at a single point, or ``(N,)``/``(K, N)`` arrays for a batch."""
    single = np.ndim(x) == 1
    theta = np.asarray(theta, dtype=np.float64)
    d = dual_forward(theta, shape, x)
    if single:
        return float(d.primal[0]), np.asarray(d.tangents[:, 0])
    return d.primal, d.tangents


@dataclass(frozen=True)
class BoundaryWrap:
    """Hard Dirichlet construction ``A(x) * net(x) + B(x)``.

    ``a`` and ``b`` map an ``(N, K)`` array to ``(values (N,), gradients (K, N))``.
    """

    a: Callable
    b: Callable
    mode: str = "wrapped"

    @classmethod
    def identity(cls) -> "BoundaryWrap":
        def one(x):
            return np.ones(x.shape[0]), np.zeros((x.shape[1], x.shape[0]))

        def zero(x):
            return np.zeros(x.shape[0]), np.zeros((x.shape[1], x.shape[0]))

        return cls(one, zero)


def wrapped_forward(theta, shape: NetworkShape, wrap: Optional[BoundaryWrap], x):
    if wrap is None or wrap.mode == "bare":
        return net_forward(theta, shape, x)
    x = _as_batch(x, shape)
    av, _ = wrap.a(x)
    bv, _ = wrap.b(x)
    return av * net_forward(theta, shape, x) + bv


def wrapped_dual_forward(theta, shape: NetworkShape, wrap: Optional[BoundaryWrap], x) -> DualBatch:
    """Dual evaluation of the wrapped trial function (product rule on A * net)."""
    d = dual_forward(theta, shape, x)
    if wrap is None or wrap.mode == "bare":
        return d
    x = _as_batch(x, shape)
    av, ag = wrap.a(x)
    bv, bg = wrap.b(x)
    return DualBatch(av * d.primal + bv, ag * d.primal + av * d.tangents + bg)


def init_params(shape: NetworkShape, seed: int, head_scale: float = 0.1) -> np.ndarray:
    """Glorot-normal weights, zero biases, small random head ``a``, ``b = 0``."""
    rng = np.random.default_rng(seed)
    parts = {}
    for name, _, shp in layout(shape):
        if name.startswith(("lift_w", "w1_", "w2_")):
            fan_out, fan_in = shp
            parts[name] = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shp)
        elif name == "head_a":
            parts[name] = rng.normal(0.0, head_scale / np.sqrt(shp[0]), size=shp)
        else:
            parts[name] = np.zeros(shp)
    return flatten(parts, shape)


def save_checkpoint(path, theta, shape: NetworkShape) -> None:
    """Version byte, then K, m, n as little-endian uint32, then float64 LE parameters."""
    theta = np.asarray(theta, dtype="<f8")
    _check(theta, shape)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_VERSION, shape.input_dim, shape.width, shape.num_blocks))
        fh.write(theta.tobytes())


def load_checkpoint(path) -> tuple[np.ndarray, NetworkShape]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise UsageError(f"{path}: truncated checkpoint header")
    version, k, m, n = _HEADER.unpack_from(raw)
    if version != CHECKPOINT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {version}")
    shape = NetworkShape(k, m, n)
    theta = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    _check(theta, shape)
    return theta, shape
