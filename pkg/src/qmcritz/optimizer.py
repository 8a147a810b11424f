"""Fixed-step SGD and bias-corrected Adam.

Both descend: ``theta <- theta - step``. Update functions return new arrays
and never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericFailure

__all__ = ["SgdConfig", "AdamState", "sgd_step", "adam_step", "make_optimizer"]


def _require_finite(grad, iteration=None):
    if not np.all(np.isfinite(grad)):
        raise NumericFailure("non-finite gradient passed to optimizer", iteration=iteration)


@dataclass(frozen=True)
class SgdConfig:
    stepsize: float

    def __post_init__(self):
        if not self.stepsize > 0:
            raise ConfigurationError("SGD stepsize must be positive")


def sgd_step(params: np.ndarray, grad: np.ndarray, cfg: SgdConfig, iteration=None) -> np.ndarray:
    _require_finite(grad, iteration)
    return params - cfg.stepsize * grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, **hyper)

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise ConfigurationError("Adam moment vectors differ in size")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigurationError("invalid Adam hyperparameters")


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, iteration=None) -> tuple[np.ndarray, AdamState]:
    _require_finite(grad, iteration)
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)


@dataclass
class _Stepper:
    """Uniform ``step(params, grad, iteration)`` wrapper used by the trainer."""

    kind: str
    size: int
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "adam":
            self.state = AdamState.zeros(self.size, **self.hyper)
        elif self.kind == "sgd":
            self.state = SgdConfig(self.hyper.get("lr", 1e-3))
        else:
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")

    def step(self, params, grad, iteration=None):
        if self.kind == "adam":
            params, self.state = adam_step(params, grad, self.state, iteration)
            return params
        return sgd_step(params, grad, self.state, iteration)


def make_optimizer(kind: str, size: int, **hyper) -> _Stepper:
    return _Stepper(kind, size, hyper)
