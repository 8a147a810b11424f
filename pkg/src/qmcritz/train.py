"""Training loop: sample a batch, differentiate the loss, step, evaluate."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .diffkernel import value_and_grad
from .errors import NumericFailure
from .metrics import ErrorSeries, fmt_float, make_eval_grid, relative_l2_error
from .network import init_params, save_checkpoint
from .optimizer import make_optimizer
from .problems import PENALTY_NEUMANN, problem_by_name, problem_loss
from .sampler import BoundaryStream, PrngState, SobolState, boundary_points, map_to_box, mc_points, sobol_points, splitmix64

log = logging.getLogger(__name__)

__all__ = ["RunRecord", "VolumeStream", "train", "write_record"]


class VolumeStream:
    """Fresh volume batches for every iteration.

    QMC continues through the Sobol sequence (batch i takes indices
    offset+iN+1 .. offset+(i+1)N) unless ``fixed`` is set, in which case
    every batch is the same first N points. MC consumes the SplitMix64
    stream in order.
    """

    def __init__(self, cfg: RunConfig, box):
        self.box = box
        self.batch = cfg.batch
        self.kind = cfg.sampler
        self.fixed = cfg.qmc_mode == "fixed"
        if self.kind == "qmc":
            self.state = SobolState(box.dim, cfg.qmc_offset)
            self._fixed_batch = None
        else:
            self.state = PrngState(cfg.seed)

    def next(self):
        if self.kind == "qmc":
            if self.fixed:
                if self._fixed_batch is None:
                    ps, _ = sobol_points(self.state, self.batch)
                    self._fixed_batch = map_to_box(ps, self.box)
                return self._fixed_batch
            ps, self.state = sobol_points(self.state, self.batch)
        else:
            ps, self.state = mc_points(self.state, self.batch, self.box.dim)
        return map_to_box(ps, self.box)


@dataclass
class RunRecord:
    config: RunConfig
    series: ErrorSeries
    losses: list = field(default_factory=list)
    params: Optional[np.ndarray] = None
    wall_clock: float = 0.0
    complete: bool = True
    failure: str = ""
    version: str = __version__

    @property
    def final_error(self) -> float:
        return self.series.final_windowed

    def loss_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "loss"])
        for i, v in enumerate(self.losses, start=1):
            writer.writerow([i, fmt_float(v)])
        return buf.getvalue()

    def meta_text(self) -> str:
        lines = [
            f"label = {self.config.run_label}",
            f"complete = {str(self.complete).lower()}",
            f"failure = {self.failure}",
            f"final_windowed_error = {fmt_float(self.final_error)}",
            f"wall_clock_seconds = {self.wall_clock:.3f}",
            f"version = {self.version}",
        ]
        return "\n".join(lines) + "\n"


def write_record(record: RunRecord, outdir) -> dict:
    """Write ``<label>.csv`` (error series), ``_loss.csv``, ``.params``, ``.meta``, ``.cfg``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    label = record.config.run_label
    paths = {
        "series": outdir / f"{label}.csv",
        "loss": outdir / f"{label}_loss.csv",
        "meta": outdir / f"{label}.meta",
        "config": outdir / f"{label}.cfg",
    }
    paths["series"].write_text(record.series.to_csv())
    paths["loss"].write_text(record.loss_csv())
    paths["meta"].write_text(record.meta_text())
    paths["config"].write_text(record.config.to_text())
    if record.params is not None:
        paths["params"] = outdir / f"{label}.params"
        save_checkpoint(paths["params"], record.params, record.config.shape)
    return paths


def train(cfg: RunConfig, progress: bool = False) -> RunRecord:
    """Run one configuration to completion.

    On a numeric failure the partial record is written (when ``cfg.output``
    is set), flagged incomplete, and attached to the raised exception as
    ``exc.record``.
    """
    spec = problem_by_name(cfg.problem, beta=cfg.penalty_beta)
    shape = cfg.shape
    theta = init_params(shape, cfg.init_seed)
    grid = make_eval_grid(spec, cfg.eval_points)
    volume = VolumeStream(cfg, spec.box)
    boundary = None
    if spec.bc_mode == PENALTY_NEUMANN:
        bseed = int(splitmix64(cfg.seed, 0, 1)[0])
        boundary = BoundaryStream(cfg.sampler, spec.dim, seed=bseed)
    opt = make_optimizer(cfg.optimizer, shape.param_count, **_hyper(cfg))

    series = ErrorSeries(cfg.window)
    record = RunRecord(cfg, series)
    if cfg.eval_every:
        series.add(0, relative_l2_error(theta, shape, spec, grid))
    start = time.perf_counter()
    it = 0
    try:
        for it in range(1, cfg.iterations + 1):
            vbatch = volume.next()
            bbatch = None
            if boundary is not None:
                bbatch, boundary = boundary_points(boundary, cfg.boundary_batch, spec.box)

            def loss_fn(th):
                bd = problem_loss(th, shape, spec, vbatch, bbatch)
                return bd.total, bd

            try:
                value, grad, _ = value_and_grad(loss_fn, theta, iteration=it)
            except NumericFailure as exc:
                exc.iteration = it
                raise
            theta = opt.step(theta, grad, it)
            record.losses.append(value)
            if cfg.eval_every and it % cfg.eval_every == 0:
                series.add(it, relative_l2_error(theta, shape, spec, grid))
                if progress and it % (cfg.eval_every * 200) == 0:
                    log.info("%s it=%d loss=%.6g err=%.4e", cfg.run_label, it, value, series.final_windowed)
    except NumericFailure as exc:
        record.complete = False
        record.failure = f"{exc} (iteration {it})"
        record.params = theta
        record.wall_clock = time.perf_counter() - start
        if cfg.output:
            write_record(record, cfg.output)
        exc.record = record
        raise
    record.params = theta
    record.wall_clock = time.perf_counter() - start
    if cfg.output:
        write_record(record, cfg.output)
    return record


def _hyper(cfg: RunConfig) -> dict:
    if cfg.optimizer == "adam":
        return {"lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps}
    return {"lr": cfg.lr}
