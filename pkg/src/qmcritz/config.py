"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment. Unknown keys are rejected so
that typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigurationError
from .network import NetworkShape
from .problems import problem_by_name

__all__ = ["RunConfig", "parse_config_text", "load_config", "DEFAULT_SHAPES"]

# (blocks, width) per problem family and dimension, from the published setups
DEFAULT_SHAPES = {
    "dirichlet": {2: (3, 8), 4: (4, 16), 8: (4, 20), 16: (4, 48)},
    "neumann": {2: (4, 10), 4: (4, 15), 8: (4, 30), 16: (5, 48)},
}


@dataclass
class RunConfig:
    problem: str = "dirichlet2"
    sampler: str = "qmc"
    batch: int = 500
    boundary_batch: int = 100
    iterations: int = 10000
    blocks: Optional[int] = None
    width: Optional[int] = None
    optimizer: str = "adam"
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    penalty_beta: float = 1.0
    seed: int = 0
    init_seed: int = 0
    qmc_offset: int = 0
    qmc_mode: str = "advance"
    eval_every: int = 5
    window: int = 50
    eval_points: int = 2**14
    label: str = ""
    output: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        problem_by_name(self.problem, beta=self.penalty_beta)
        if self.sampler not in ("qmc", "mc"):
            raise ConfigurationError(f"sampler must be qmc or mc, got {self.sampler!r}")
        if self.qmc_mode not in ("advance", "fixed"):
            raise ConfigurationError(f"qmc_mode must be advance or fixed, got {self.qmc_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.batch < 1 or self.boundary_batch < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.iterations < 0 or self.eval_every < 0 or self.window < 1 or self.eval_points < 1:
            raise ConfigurationError("iterations/eval_every must be >= 0, window/eval_points >= 1")
        if self.sampler == "qmc" and self.qmc_mode == "advance":
            if self.qmc_offset + self.batch * self.iterations >= 2**31:
                raise ConfigurationError("QMC stream would run into the evaluation grid's index range")

    @property
    def dim(self) -> int:
        return problem_by_name(self.problem).dim

    @property
    def family(self) -> str:
        return "dirichlet" if self.problem.startswith("dirichlet") else "neumann"

    @property
    def shape(self) -> NetworkShape:
        blocks, width = self.blocks, self.width
        if blocks is None or width is None:
            default = DEFAULT_SHAPES[self.family].get(self.dim)
            if default is None:
                raise ConfigurationError(f"no default network for {self.problem}; set blocks and width")
            blocks = default[0] if blocks is None else blocks
            width = default[1] if width is None else width
        return NetworkShape(self.dim, width, blocks)

    @property
    def run_label(self) -> str:
        if self.label:
            return self.label
        tag = f"{self.problem}_{self.sampler}_n{self.batch}"
        return tag + (f"_s{self.seed}" if self.sampler == "mc" else "")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigurationError(f"unknown config key {name!r}")
    kind = types[name]
    raw = raw.strip()
    if "Optional" in str(kind):
        if raw == "" or raw.lower() == "none":
            return None
        kind = "int"
    try:
        if kind in (int, "int"):
            return int(raw, 0)
        if kind in (float, "float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config_text(text: str, overrides=None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return RunConfig(**values)


def load_config(path, overrides=None) -> RunConfig:
    return parse_config_text(Path(path).read_text(), overrides)
