"""Relative L2 error on a fixed Sobol grid, windowed error series, order fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .network import NetworkShape, wrapped_forward
from .problems import ProblemSpec
from .sampler import SobolState, map_to_box, sobol_points

__all__ = [
    "EvalGrid",
    "make_eval_grid",
    "relative_l2",
    "relative_l2_error",
    "ErrorSeries",
    "fit_order",
    "pairwise_order",
    "fmt_float",
    "DEFAULT_EVAL_POINTS",
    "EVAL_INDEX_OFFSET",
]

DEFAULT_EVAL_POINTS = 2**14
# Training streams stay far below this index, so the grid never overlaps them.
EVAL_INDEX_OFFSET = 2**31


def fmt_float(x: float) -> str:
    """Shortest decimal string that round-trips to the same float64."""
    return repr(float(x))


@dataclass
class EvalGrid:
    points: np.ndarray
    exact: np.ndarray

    def __len__(self):
        return self.points.shape[0]


def make_eval_grid(spec: ProblemSpec, n: int = DEFAULT_EVAL_POINTS, offset: int = EVAL_INDEX_OFFSET) -> EvalGrid:
    ps, _ = sobol_points(SobolState(spec.dim, offset), n)
    pts = map_to_box(ps, spec.box).points
    return EvalGrid(pts, spec.exact(pts))


def relative_l2(approx, exact) -> float:
    """sqrt(sum (approx - exact)^2 / sum exact^2)."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = float(np.sum(exact * exact))
    if denom == 0.0:
        raise UsageError("exact solution vanishes on the evaluation grid")
    return math.sqrt(float(np.sum((approx - exact) ** 2)) / denom)


def relative_l2_error(theta, shape: NetworkShape, spec: ProblemSpec, grid: EvalGrid) -> float:
    return relative_l2(wrapped_forward(theta, shape, spec.wrap, grid.points), grid.exact)


@dataclass
class ErrorSeries:
    """Raw errors at evaluation iterations plus their trailing-window means."""

    window: int = 50
    iterations: list = field(default_factory=list)
    raw: list = field(default_factory=list)

    def add(self, iteration: int, error: float) -> None:
        self.iterations.append(int(iteration))
        self.raw.append(float(error))

    @property
    def windowed(self) -> list:
        out = []
        its = np.asarray(self.iterations)
        vals = np.asarray(self.raw)
        for i, it in enumerate(self.iterations):
            lo = np.searchsorted(its, it - self.window, side="right")
            out.append(float(vals[lo : i + 1].mean()))
        return out

    @property
    def final_windowed(self) -> float:
        w = self.windowed
        return w[-1] if w else float("nan")

    def rows(self):
        return list(zip(self.iterations, self.raw, self.windowed))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "raw_error", "windowed_error"])
        for it, raw, win in self.rows():
            writer.writerow([it, fmt_float(raw), fmt_float(win)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, window: int = 50) -> "ErrorSeries":
        series = cls(window)
        for row in csv.DictReader(io.StringIO(text)):
            series.add(int(row["iteration"]), float(row["raw_error"]))
        return series


def fit_order(points) -> float:
    """Least-squares slope of log(error) against log(1/N).

    A positive value means the error shrinks as N grows; errors that scale
    like N^-p give p.
    """
    pts = [(float(n), float(e)) for n, e in points]
    if any(e <= 0 for _, e in pts) or any(n <= 0 for n, _ in pts):
        raise UsageError("fit_order needs positive N and positive errors")
    if len({n for n, _ in pts}) < 2:
        raise UsageError("fit_order needs at least two distinct N")
    x = np.log([1.0 / n for n, _ in pts])
    y = np.log([e for _, e in pts])
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def pairwise_order(e1: float, e2: float, ratio: float) -> float:
    """Order between consecutive sizes N1 and N2 = ratio * N1."""
    if e1 <= 0 or e2 <= 0:
        raise UsageError("errors must be positive")
    if ratio <= 1:
        raise UsageError("size ratio must exceed 1")
    return math.log(e1 / e2) / math.log(ratio)
