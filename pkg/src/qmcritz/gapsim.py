"""Fixed-step SGD on an isotropic quadratic with synthetic gradient noise.

The loss is ``I(theta) = c/2 |theta|^2`` (so L = c, theta* = 0). Each
gradient call returns ``c theta + eta`` with ``eta`` zero-mean Gaussian of
total variance ``C_V r(N)``, which makes the first-moment constants
mu = mu_G = 1 and M_V = 0, hence M_G = 1 + r(N).

The asymptotic expected gap of this recursion is exactly
``alpha V / (2 (2 - c alpha))``. When the step sits on the admissible
limit ``alpha = mu / (L M_G)`` (where ``QuadraticProblem.saturating``
places the curvature) this equals the bound ``alpha L C_V r / (2 c mu)``
times ``(1 + r) / (1 + 2 r)``, i.e. the two agree up to O(r).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError
from .metrics import fmt_float

__all__ = [
    "QuadraticProblem",
    "NoisyGradientModel",
    "GapResult",
    "GapsimConfig",
    "predicted_gap",
    "exact_gap_limit",
    "simulate_gap",
    "contraction_slopes",
    "run_grid",
    "grid_csv",
    "parse_gapsim_config",
]

R_LAWS = ("mc", "qmc", "const")


@dataclass(frozen=True)
class QuadraticProblem:
    dim: int = 1
    curvature: float = 1.0

    def __post_init__(self):
        if self.dim < 1 or not self.curvature > 0:
            raise ConfigurationError("need dim >= 1 and curvature > 0")

    @property
    def lipschitz(self) -> float:
        return self.curvature

    def gap(self, theta: np.ndarray) -> np.ndarray:
        return 0.5 * self.curvature * np.sum(theta * theta, axis=-1)

    @classmethod
    def saturating(cls, alpha: float, noise: "NoisyGradientModel", n: int, dim: int = 1) -> "QuadraticProblem":
        """Curvature c = L with ``alpha = mu / (L M_G)`` exactly."""
        return cls(dim, noise.mu / (alpha * noise.m_g(n)))


@dataclass(frozen=True)
class NoisyGradientModel:
    """Variance ``C_V r(N)``; ``law='const'`` is the relaxed model with variance ``C_V``.

    ``qmc_dim`` is the K in ``(ln N)^(2K) / N^2``.
    """

    c_v: float = 1.0
    law: str = "mc"
    qmc_dim: int = 1
    mu: float = 1.0

    def __post_init__(self):
        if self.law not in R_LAWS:
            raise ConfigurationError(f"unknown r(N) law {self.law!r}")
        if self.c_v < 0:
            raise ConfigurationError("C_V must be non-negative")

    def r(self, n: int) -> float:
        if self.law == "mc":
            return 1.0 / n
        if self.law == "qmc":
            return math.log(n) ** (2 * self.qmc_dim) / n**2
        return 0.0

    def variance(self, n: int) -> float:
        return self.c_v if self.law == "const" else self.c_v * self.r(n)

    def m_g(self, n: int) -> float:
        return 1.0 + self.r(n)


def predicted_gap(alpha: float, lipschitz: float, curvature: float, mu: float, c_v: float, r: float) -> float:
    """alpha L C_V r / (2 c mu)."""
    if min(alpha, lipschitz, curvature, mu) <= 0 or c_v < 0 or r < 0:
        raise ConfigurationError("constants must be positive")
    return alpha * lipschitz * c_v * r / (2.0 * curvature * mu)


def _predicted(problem: QuadraticProblem, noise: NoisyGradientModel, alpha: float, n: int) -> float:
    r = 1.0 if noise.law == "const" else noise.r(n)
    return predicted_gap(alpha, problem.lipschitz, problem.curvature, noise.mu, noise.c_v, r)


def exact_gap_limit(problem: QuadraticProblem, noise: NoisyGradientModel, alpha: float, n: int) -> float:
    """Fixed point of E[gap'] = (1 - c alpha)^2 E[gap] + c alpha^2 V / 2."""
    c = problem.curvature
    return alpha * noise.variance(n) / (2.0 * (2.0 - c * alpha))


@dataclass
class GapResult:
    n: int
    alpha: float
    law: str
    curvature: float
    predicted: float
    measured: float
    exact: float
    tail_flat: bool
    mean_gap: np.ndarray = field(repr=False, default=None)

    @property
    def relative_deviation(self) -> float:
        if self.predicted == 0:
            return abs(self.measured)
        return (self.measured - self.predicted) / self.predicted


def simulate_gap(
    problem: QuadraticProblem,
    noise: NoisyGradientModel,
    alpha: float,
    n: int,
    iters: int = 1000,
    replicas: int = 1000,
    seed: int = 0,
    tail_fraction: float = 0.2,
    theta0: float = 1.0,
) -> GapResult:
    """Replica-averaged gap over the last ``tail_fraction`` of the iterations."""
    bound = noise.mu / (problem.lipschitz * noise.m_g(n))
    if not 0 < alpha <= bound * (1 + 1e-12):
        raise ConfigurationError(f"stepsize {alpha} outside (0, mu/(L M_G)] = (0, {bound:.6g}]")
    c, d = problem.curvature, problem.dim
    sd = math.sqrt(noise.variance(n) / d)
    theta = np.full((replicas, d), theta0, dtype=np.float64)
    # one generator per replica keyed by (seed, replica); draws are made up front
    eta = np.stack([np.random.default_rng([seed, k]).standard_normal((iters, d)) for k in range(replicas)], axis=1)
    eta *= sd
    mean_gap = np.empty(iters)
    for i in range(iters):
        theta = theta - alpha * (c * theta + eta[i])
        mean_gap[i] = problem.gap(theta).mean()
    tail = mean_gap[int(iters * (1 - tail_fraction)) :]
    measured = float(tail.mean())
    half = len(tail) // 2
    flat = half == 0 or abs(tail[:half].mean() - tail[half:].mean()) <= 0.1 * max(abs(measured), 1e-300)
    return GapResult(
        n=n,
        alpha=alpha,
        law=noise.law,
        curvature=c,
        predicted=_predicted(problem, noise, alpha, n),
        measured=measured,
        exact=exact_gap_limit(problem, noise, alpha, n),
        tail_flat=bool(flat),
        mean_gap=mean_gap,
    )


def contraction_slopes(problem: QuadraticProblem, alpha: float, iters: int = 50) -> tuple[float, float]:
    """Noiseless run: per-step slopes of log |theta - theta*| and of log gap."""
    theta = np.ones(problem.dim)
    dist, gaps = [], []
    for _ in range(iters):
        theta = theta - alpha * problem.curvature * theta
        dist.append(math.log(np.linalg.norm(theta)))
        gaps.append(math.log(float(problem.gap(theta))))
    steps = np.arange(iters)
    return float(np.polyfit(steps, dist, 1)[0]), float(np.polyfit(steps, gaps, 1)[0])


@dataclass
class GapsimConfig:
    alphas: tuple = (0.05, 0.1)
    sizes: tuple = (100, 1000, 10000)
    laws: tuple = ("mc", "qmc")
    c_v: float = 1.0
    qmc_dim: int = 1
    dim: int = 1
    curvature: str = "saturate"
    iters: int = 1000
    replicas: int = 1000
    seed: int = 0
    output: str = ""


def parse_gapsim_config(text: str, overrides=()) -> GapsimConfig:
    kinds = {f.name: f.default for f in fields(GapsimConfig)}
    values = {}
    lines = [ln.split("#", 1)[0] for ln in text.splitlines()] + list(overrides)
    for line in lines:
        if not line.strip():
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected key = value, got {line.strip()!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigurationError(f"unknown gapsim key {key!r}")
        default = kinds[key]
        try:
            if isinstance(default, tuple):
                conv = type(default[0])
                values[key] = tuple(conv(v.strip()) for v in raw.split(",") if v.strip())
            elif isinstance(default, (int, float)) and not isinstance(default, bool):
                values[key] = type(default)(raw)
            else:
                values[key] = raw
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    return GapsimConfig(**values)


def run_grid(cfg: GapsimConfig) -> list[GapResult]:
    results = []
    for law in cfg.laws:
        noise = NoisyGradientModel(cfg.c_v, law, cfg.qmc_dim)
        for alpha in cfg.alphas:
            for n in cfg.sizes:
                if cfg.curvature == "saturate":
                    problem = QuadraticProblem.saturating(alpha, noise, n, cfg.dim)
                else:
                    problem = QuadraticProblem(cfg.dim, float(cfg.curvature))
                results.append(simulate_gap(problem, noise, alpha, n, cfg.iters, cfg.replicas, cfg.seed))
    return results


def grid_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["N", "alpha", "r_law", "predicted_gap", "measured_gap", "relative_deviation"])
    for r in results:
        writer.writerow([r.n, fmt_float(r.alpha), r.law, fmt_float(r.predicted), fmt_float(r.measured), fmt_float(r.relative_deviation)])
    return buf.getvalue()
