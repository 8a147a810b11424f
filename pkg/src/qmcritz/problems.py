"""Benchmark problems and their sampled energy functionals.

All three losses estimate integrals as ``measure * mean(integrand)``, where
``measure`` is the box volume (or boundary area for the penalty term), so
values are comparable across domains of different size.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diffkernel import Var
from .errors import ConfigurationError, NumericFailure, UsageError
from .network import BoundaryWrap, NetworkShape, wrapped_dual_forward
from .sampler import DomainBox, PointSet, face_normals

__all__ = [
    "ProblemSpec",
    "LossBreakdown",
    "dirichlet_loss",
    "neumann_loss",
    "penalty_loss",
    "problem_loss",
    "benchmark_dirichlet",
    "benchmark_neumann",
    "problem_by_name",
    "HARD_DIRICHLET",
    "NATURAL_NEUMANN",
    "PENALTY_NEUMANN",
]

HARD_DIRICHLET = "hard_dirichlet"
NATURAL_NEUMANN = "natural_neumann"
PENALTY_NEUMANN = "penalty_neumann"
_MODES = (HARD_DIRICHLET, NATURAL_NEUMANN, PENALTY_NEUMANN)

PI = math.pi


@dataclass
class ProblemSpec:
    """A box-domain Poisson-type problem.

    ``source``, ``exact`` and ``boundary_data`` take an ``(N, K)`` array and
    return ``(N,)`` values. ``exact_grad`` returns ``(K, N)``.
    ``mass_coeff`` is the zeroth-order PDE coefficient (``-Lap u + c u = f``).
    """

    name: str
    box: DomainBox
    source: Callable
    exact: Callable
    exact_grad: Optional[Callable] = None
    boundary_data: Optional[Callable] = None
    bc_mode: str = HARD_DIRICHLET
    beta: float = 0.0
    wrap: Optional[BoundaryWrap] = None
    mass_coeff: float = 0.0

    def __post_init__(self):
        if self.bc_mode not in _MODES:
            raise ConfigurationError(f"unknown boundary mode {self.bc_mode!r}")
        if self.bc_mode == PENALTY_NEUMANN and not self.beta > 0:
            raise ConfigurationError("penalty mode needs beta > 0")
        if (self.wrap is not None) != (self.bc_mode == HARD_DIRICHLET):
            raise ConfigurationError("a boundary wrap is required in hard Dirichlet mode and only there")
        if self.boundary_data is None:
            self.boundary_data = lambda x: np.zeros(x.shape[0])

    @property
    def dim(self) -> int:
        return self.box.dim


@dataclass
class LossBreakdown:
    """Loss components; entries are floats, or tape variables while training."""

    volume_term: object
    penalty_term: object = 0.0
    total: object = field(default=None)

    def values(self) -> "LossBreakdown":
        def f(v):
            return float(v.value) if isinstance(v, Var) else float(v)

        return LossBreakdown(f(self.volume_term), f(self.penalty_term), f(self.total))


def _raw(v):
    return v.value if isinstance(v, Var) else np.asarray(v)


def _check_finite(integrand, what):
    vals = _raw(integrand)
    bad = ~np.isfinite(vals)
    if bad.any():
        raise NumericFailure(f"non-finite {what} integrand", point_index=int(np.argmax(bad)))


def _batch_points(batch: PointSet, spec: ProblemSpec) -> np.ndarray:
    if batch.frame != "domain":
        raise UsageError("losses take domain-frame point sets (use map_to_box)")
    if len(batch) == 0:
        raise UsageError("empty batch")
    if batch.dim != spec.dim:
        raise UsageError(f"batch dimension {batch.dim} does not match problem dimension {spec.dim}")
    return batch.points


def _mean(integrand):
    if isinstance(integrand, Var):
        return integrand.mean()
    return float(np.mean(integrand))


def _trial(theta, shape, wrap, x):
    """Values and input gradients of the trial function at ``x``.

    With ``shape=None``, ``theta`` is any callable ``x -> (u (N,), grad (K, N))``;
    this lets a closed-form function stand in for the network.
    """
    if shape is None:
        u, g = theta(x)
        return u, g
    d = wrapped_dual_forward(theta, shape, wrap, x)
    return d.primal, d.tangents


def _volume_integrand(theta, shape, spec, x, mass):
    u, g = _trial(theta, shape, spec.wrap, x)
    integrand = 0.5 * (g * g).sum(axis=0) - spec.source(x) * u
    if mass:
        integrand = integrand + (0.5 * mass) * (u * u)
    return integrand


def dirichlet_loss(theta, shape: NetworkShape, spec: ProblemSpec, batch: PointSet) -> LossBreakdown:
    """|Omega| * mean(1/2 |grad u|^2 - f u) with the hard-wrapped trial function."""
    if spec.bc_mode != HARD_DIRICHLET:
        raise UsageError("dirichlet_loss needs a hard Dirichlet problem")
    x = _batch_points(batch, spec)
    integrand = _volume_integrand(theta, shape, spec, x, 0.0)
    _check_finite(integrand, "volume")
    vol = _mean(integrand) * batch.measure
    return LossBreakdown(vol, 0.0, vol)


def neumann_loss(theta, shape: NetworkShape, spec: ProblemSpec, batch: PointSet) -> LossBreakdown:
    """|Omega| * mean(1/2 |grad u|^2 + c/2 u^2 - f u) for the bare network."""
    if spec.bc_mode not in (NATURAL_NEUMANN, PENALTY_NEUMANN):
        raise UsageError("neumann_loss needs a Neumann problem")
    x = _batch_points(batch, spec)
    integrand = _volume_integrand(theta, shape, spec, x, spec.mass_coeff)
    _check_finite(integrand, "volume")
    vol = _mean(integrand) * batch.measure
    return LossBreakdown(vol, 0.0, vol)


def _check_on_faces(points, face_ids, box: DomainBox):
    if face_ids is None:
        raise UsageError("boundary batch carries no face ids")
    axes = face_ids // 2
    rows = np.arange(points.shape[0])
    bound = np.where(face_ids % 2 == 1, np.asarray(box.upper)[axes], np.asarray(box.lower)[axes])
    off = np.abs(points[rows, axes] - bound) > 1e-12 * (1.0 + np.abs(bound))
    if off.any():
        raise UsageError(f"boundary point {int(np.argmax(off))} is not on its face")


def penalty_loss(
    theta, shape: NetworkShape, spec: ProblemSpec, volume_batch: PointSet, boundary_batch: PointSet
) -> LossBreakdown:
    """Neumann volume term plus ``beta * |dOmega| * mean((du/dn - g)^2)``."""
    if spec.bc_mode != PENALTY_NEUMANN:
        raise UsageError("penalty_loss needs a penalty Neumann problem")
    vol = neumann_loss(theta, shape, spec, volume_batch).volume_term
    xb = _batch_points(boundary_batch, spec)
    _check_on_faces(xb, boundary_batch.face_ids, spec.box)
    _, g = _trial(theta, shape, None, xb)
    normals = face_normals(boundary_batch.face_ids, spec.dim).T
    resid = (g * normals).sum(axis=0) - spec.boundary_data(xb)
    sq = resid * resid
    _check_finite(sq, "boundary")
    pen = _mean(sq) * boundary_batch.measure
    return LossBreakdown(vol, pen, vol + spec.beta * pen)


def problem_loss(theta, shape, spec: ProblemSpec, volume_batch, boundary_batch=None) -> LossBreakdown:
    if spec.bc_mode == HARD_DIRICHLET:
        return dirichlet_loss(theta, shape, spec, volume_batch)
    if spec.bc_mode == NATURAL_NEUMANN:
        return neumann_loss(theta, shape, spec, volume_batch)
    return penalty_loss(theta, shape, spec, volume_batch, boundary_batch)


# ---------------------------------------------------------------------------
# Benchmarks; both share the exact solution sum_k cos(pi x_k)


def _cos_sum(x):
    return np.cos(PI * x).sum(axis=1)


def _cos_sum_grad(x):
    return (-PI * np.sin(PI * x)).T


def _excl_products(factors):
    """prod_{j != k} factors[:, j] for every k, without dividing."""
    n, k = factors.shape
    left = np.ones((n, k))
    right = np.ones((n, k))
    for j in range(1, k):
        left[:, j] = left[:, j - 1] * factors[:, j - 1]
        right[:, k - 1 - j] = right[:, k - j] * factors[:, k - j]
    return left * right


def dirichlet_wrap() -> BoundaryWrap:
    """A = exp(prod(x_k^2 - 1)) - 1 and B = exp(prod(x_k^2 - 1)) * sum cos(pi x_k)."""

    def pieces(x):
        q = x * x - 1.0
        e = np.exp(np.prod(q, axis=1))
        dprod = (2.0 * x * _excl_products(q)).T  # (K, N)
        return e, dprod

    def a(x):
        e, dprod = pieces(x)
        return e - 1.0, e * dprod

    def b(x):
        e, dprod = pieces(x)
        s = _cos_sum(x)
        return e * s, e * dprod * s + e * _cos_sum_grad(x)

    return BoundaryWrap(a, b)


def benchmark_dirichlet(dim: int) -> ProblemSpec:
    """-Lap u = pi^2 sum cos(pi x_k) on [-1, 1]^K with u = sum cos(pi x_k) on the boundary."""
    if dim < 1:
        raise ConfigurationError("dimension must be >= 1")
    return ProblemSpec(
        name=f"dirichlet{dim}",
        box=DomainBox.cube(dim, -1.0, 1.0),
        source=lambda x: PI**2 * _cos_sum(x),
        exact=_cos_sum,
        exact_grad=_cos_sum_grad,
        boundary_data=_cos_sum,
        bc_mode=HARD_DIRICHLET,
        wrap=dirichlet_wrap(),
    )


def benchmark_neumann(dim: int, penalty: bool = False, beta: float = 1.0) -> ProblemSpec:
    """-Lap u + pi^2 u = 2 pi^2 sum cos(pi x_k) on [0, 1]^K, zero normal derivative."""
    if dim < 1:
        raise ConfigurationError("dimension must be >= 1")
    return ProblemSpec(
        name=f"neumann_penalty{dim}" if penalty else f"neumann{dim}",
        box=DomainBox.cube(dim, 0.0, 1.0),
        source=lambda x: 2.0 * PI**2 * _cos_sum(x),
        exact=_cos_sum,
        exact_grad=_cos_sum_grad,
        boundary_data=lambda x: np.zeros(x.shape[0]),
        bc_mode=PENALTY_NEUMANN if penalty else NATURAL_NEUMANN,
        beta=beta if penalty else 0.0,
        mass_coeff=PI**2,
    )


_NAME_RE = re.compile(r"^(dirichlet|neumann_penalty|neumann)(\d+)$")


def problem_by_name(name: str, beta: float = 1.0) -> ProblemSpec:
    """Resolve names such as ``dirichlet16``, ``neumann4``, ``neumann_penalty2``."""
    m = _NAME_RE.match(name)
    if not m:
        raise ConfigurationError(f"unknown problem {name!r}")
    kind, dim = m.group(1), int(m.group(2))
    if kind == "dirichlet":
        return benchmark_dirichlet(dim)
    return benchmark_neumann(dim, penalty=kind == "neumann_penalty", beta=beta)
