"""Comparison tables and plot-ready series built from finished runs."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path

import numpy as np

from .errors import UsageError
from .metrics import fit_order, fmt_float, pairwise_order

__all__ = ["RunSummary", "summarize", "compare_table", "table_csv", "emit_plot_data"]

_FAMILY_RE = re.compile(r"^([a-z_]+?)(\d+)$")


@dataclass(frozen=True)
class RunSummary:
    problem: str
    sampler: str
    batch: int
    final_error: float
    seed: int = 0
    label: str = ""

    @property
    def family(self) -> str:
        m = _FAMILY_RE.match(self.problem)
        return m.group(1) if m else self.problem

    @property
    def dim(self) -> int:
        m = _FAMILY_RE.match(self.problem)
        return int(m.group(2)) if m else 0


def summarize(record) -> RunSummary:
    cfg = record.config
    return RunSummary(cfg.problem, cfg.sampler, cfg.batch, record.final_error, cfg.seed, cfg.run_label)


def compare_table(summaries) -> list[dict]:
    """One row per (dimension, sampler, batch), replicas averaged.

    Rows within a (dimension, sampler) group are ordered by batch size; the
    pairwise order compares each row with the previous one, and the fitted
    order is the least-squares rate over the whole group.
    """
    summaries = list(summaries)
    if not summaries:
        raise UsageError("nothing to compare")
    families = {s.family for s in summaries}
    if len(families) > 1:
        raise UsageError(f"runs mix problem families: {sorted(families)}")

    def cell_key(s):
        return (s.dim, s.sampler, s.batch)

    rows = []
    for (dim, sampler, batch), grp in groupby(sorted(summaries, key=cell_key), key=cell_key):
        errs = np.array([s.final_error for s in grp])
        rows.append(
            {
                "dimension": dim,
                "sampler": sampler,
                "batch": batch,
                "runs": len(errs),
                "error_mean": float(errs.mean()),
                "error_spread": float(errs.std(ddof=1)) if len(errs) > 1 else 0.0,
                "error_min": float(errs.min()),
                "error_max": float(errs.max()),
                "pairwise_order": None,
                "fitted_order": None,
            }
        )
    for _, grp in groupby(rows, key=lambda r: (r["dimension"], r["sampler"])):
        grp = list(grp)
        if len(grp) < 2:
            continue
        fitted = fit_order([(r["batch"], r["error_mean"]) for r in grp])
        for prev, cur in zip(grp, grp[1:]):
            cur["pairwise_order"] = pairwise_order(prev["error_mean"], cur["error_mean"], cur["batch"] / prev["batch"])
        for r in grp:
            r["fitted_order"] = fitted
    return rows


def table_csv(rows) -> str:
    has_orders = any(r["fitted_order"] is not None for r in rows)
    cols = ["dimension", "sampler", "batch", "runs", "error_mean", "error_spread", "error_min", "error_max"]
    if has_orders:
        cols += ["pairwise_order", "fitted_order"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        out = []
        for c in cols:
            v = r[c]
            out.append("" if v is None else fmt_float(v) if isinstance(v, float) else v)
        writer.writerow(out)
    return buf.getvalue()


def emit_plot_data(records, outdir) -> dict:
    """Write natural-log series for plotting.

    * ``<label>_curve.csv``: iteration, ln(windowed error), one file per run
    * ``curves.csv``: the same for all runs, with a ``label`` column
    * ``size_scaling.csv``: ln N against ln(mean final error) per sampler
    """
    records = list(records)
    if not records:
        raise UsageError("no records to plot")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    combined = io.StringIO()
    cw = csv.writer(combined, lineterminator="\n")
    cw.writerow(["label", "iteration", "ln_error"])
    for rec in records:
        label = rec.config.run_label
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "ln_error"])
        for it, _, win in rec.series.rows():
            w.writerow([it, fmt_float(math.log(win))])
            cw.writerow([label, it, fmt_float(math.log(win))])
        p = outdir / f"{label}_curve.csv"
        p.write_text(buf.getvalue())
        paths[label] = p
    paths["curves"] = outdir / "curves.csv"
    paths["curves"].write_text(combined.getvalue())

    scaling = io.StringIO()
    sw = csv.writer(scaling, lineterminator="\n")
    sw.writerow(["label", "ln_N", "ln_error"])
    finished = [summarize(r) for r in records if r.series.raw]
    if finished:
        for row in compare_table(finished):
            sw.writerow(
                [f"{row['sampler']}{row['dimension']}d", fmt_float(math.log(row["batch"])), fmt_float(math.log(row["error_mean"]))]
            )
    paths["size_scaling"] = outdir / "size_scaling.csv"
    paths["size_scaling"].write_text(scaling.getvalue())
    return paths
