"""Volume and boundary point streams: plain Sobol (QMC) and SplitMix64 (MC).

Both generators are pure functions of a small state object so that every
batch of a training run can be regenerated from ``(seed, position)`` or
``(dimension, index)`` alone.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .errors import ConfigurationError, UsageError

__all__ = [
    "BITS",
    "MAX_SOBOL_DIM",
    "DomainBox",
    "PointSet",
    "SobolState",
    "PrngState",
    "BoundaryStream",
    "load_direction_table",
    "direction_numbers",
    "sobol_points",
    "sobol_block",
    "mc_points",
    "splitmix64",
    "map_to_box",
    "boundary_points",
    "face_normals",
    "l2_star_discrepancy",
]

BITS = 32
MAX_SOBOL_DIM = 64
_SCALE = 2.0**-BITS
_TABLE_FILE = "joe_kuo_d64.txt"


@dataclass(frozen=True)
class DomainBox:
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ConfigurationError("box bounds must be non-empty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigurationError(f"box needs lower < upper in every dimension: {lo} {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float) -> "DomainBox":
        return cls((lo,) * dim, (hi,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def face_area(self, axis: int) -> float:
        """(K-1)-measure of either face orthogonal to ``axis`` (1 when K == 1)."""
        lengths = self.lengths
        return float(np.prod(np.delete(lengths, axis)))

    @property
    def boundary_area(self) -> float:
        return 2.0 * sum(self.face_area(k) for k in range(self.dim))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)


@dataclass
class PointSet:
    """Points as rows of ``points``.

    ``frame`` is ``"unit"`` for [0,1]^K or ``"domain"`` after mapping.
    ``measure`` is the volume (or boundary area) the sample mean must be
    multiplied by to estimate an integral. Boundary sets also carry the
    face each point was placed on.
    """

    points: np.ndarray
    frame: str = "unit"
    measure: float = 1.0
    face_ids: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


# ---------------------------------------------------------------------------
# Sobol


def load_direction_table(path=None) -> dict:
    """Parse a Joe-Kuo style table: ``d s a m_1 ... m_s`` per line.

    Returns ``{d: (s, a, (m_1, ..., m_s))}``. The first line is a header.
    """
    if path is None:
        text = resources.files("qmcritz").joinpath("data", _TABLE_FILE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    table = {}
    for lineno, line in enumerate(text.splitlines()):
        fields = line.split()
        if not fields or lineno == 0:
            continue
        d, s, a, *m = (int(v) for v in fields)
        if len(m) != s:
            raise ConfigurationError(f"direction table line {lineno + 1}: expected {s} initial numbers")
        for k, mk in enumerate(m, start=1):
            if mk % 2 == 0 or mk >= 2**k:
                raise ConfigurationError(
                    f"direction table line {lineno + 1}: m_{k}={mk} must be odd and < 2^{k}"
                )
        table[d] = (s, a, tuple(m))
    return table


@functools.lru_cache(maxsize=None)
def _default_table() -> dict:
    return load_direction_table()


@functools.lru_cache(maxsize=None)
def direction_numbers(dim: int) -> np.ndarray:
    """Direction numbers as a ``(dim, BITS)`` uint64 array.

    Column ``j`` holds v_j scaled by 2^BITS, i.e. the contribution of bit
    ``j`` of the Gray-coded index.
    """
    if dim < 1:
        raise ConfigurationError("Sobol dimension must be >= 1")
    table = _default_table()
    if dim > MAX_SOBOL_DIM or any(d not in table for d in range(2, dim + 1)):
        raise ConfigurationError(f"no direction numbers for dimension {dim} (max {MAX_SOBOL_DIM})")
    v = np.zeros((dim, BITS), dtype=np.uint64)
    v[0] = [1 << (BITS - 1 - j) for j in range(BITS)]
    for d in range(2, dim + 1):
        s, a, m = table[d]
        col = [0] * BITS
        for j in range(min(s, BITS)):
            col[j] = m[j] << (BITS - 1 - j)
        for j in range(s, BITS):
            val = col[j - s] ^ (col[j - s] >> s)
            for k in range(1, s):
                if (a >> (s - 1 - k)) & 1:
                    val ^= col[j - k]
            col[j] = val
        v[d - 1] = col
    v.setflags(write=False)
    return v


def _gray_xor(directions: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Accumulator values for an array of indices, shape (len(indices), dim)."""
    gray = indices ^ (indices >> np.uint64(1))
    acc = np.zeros((indices.shape[0], directions.shape[0]), dtype=np.uint64)
    for j in range(BITS):
        bit = ((gray >> np.uint64(j)) & np.uint64(1)).astype(bool)
        if bit.any():
            acc[bit] ^= directions[:, j]
    return acc


@dataclass
class SobolState:
    """Cursor into the unscrambled Sobol sequence.

    ``index`` is the index of the last emitted point (0 = nothing emitted
    yet, since the origin at index 0 is never returned).
    """

    dimension: int
    index: int = 0
    current: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.dimension <= MAX_SOBOL_DIM:
            raise ConfigurationError(f"Sobol dimension {self.dimension} outside 1..{MAX_SOBOL_DIM}")
        if not 0 <= self.index < 2**BITS:
            raise ConfigurationError(f"Sobol index {self.index} outside 32-bit range")
        self.current = _gray_xor(self.directions, np.array([self.index], dtype=np.uint64))[0]

    @property
    def directions(self) -> np.ndarray:
        return direction_numbers(self.dimension)

    def next_point(self) -> np.ndarray:
        """Advance one step by Gray code, O(dimension); returns the new point."""
        if self.index + 1 >= 2**BITS:
            raise ConfigurationError("Sobol index exhausted 32-bit resolution")
        n = self.index
        c = (~n & (n + 1)).bit_length() - 1  # lowest zero bit of n
        self.current = self.current ^ self.directions[:, c]
        self.index = n + 1
        return self.current.astype(np.float64) * _SCALE

    def copy(self) -> "SobolState":
        return SobolState(self.dimension, self.index)


def sobol_points(state: SobolState, n: int) -> tuple[PointSet, SobolState]:
    """Points ``index+1 .. index+n`` of the sequence and the advanced state."""
    if n < 0:
        raise UsageError("point count must be non-negative")
    if n == 0:
        return PointSet(np.zeros((0, state.dimension))), state.copy()
    if state.index + n >= 2**BITS:
        raise ConfigurationError("Sobol index would overflow 32-bit resolution")
    idx = np.arange(state.index + 1, state.index + n + 1, dtype=np.uint64)
    acc = _gray_xor(state.directions, idx)
    return PointSet(acc.astype(np.float64) * _SCALE), SobolState(state.dimension, state.index + n)


def sobol_block(dim: int, first: int, n: int) -> np.ndarray:
    """Raw sequence points with indices ``first .. first+n-1`` (index 0 is the origin).

    Unlike ``sobol_points`` this does not skip the origin, which makes the
    digital-net structure of aligned blocks directly visible.
    """
    if n < 0 or first < 0 or first + n > 2**BITS:
        raise UsageError("index range outside the 32-bit sequence")
    idx = np.arange(first, first + n, dtype=np.uint64)
    return _gray_xor(direction_numbers(dim), idx).astype(np.float64) * _SCALE


# ---------------------------------------------------------------------------
# Pseudo-random stream

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, start: int, count: int) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of SplitMix64 seeded with ``seed``.

    Output i is the finalizer applied to ``seed + (i+1) * 0x9E3779B97F4A7C15``
    (mod 2^64), which is exactly what the sequential generator produces,
    so any window of the stream can be computed directly.
    """
    ctr = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed % 2**64) + ctr * _SM_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _SM_MUL1
        z = (z ^ (z >> np.uint64(27))) * _SM_MUL2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class PrngState:
    seed: int
    position: int = 0


def mc_points(state: PrngState, n: int, dim: int) -> tuple[PointSet, PrngState]:
    """``n`` uniform points in [0,1)^dim; consumes ``n*dim`` words, row-major.

    Doubles are built from the top 53 bits of each word.
    """
    if n < 0 or dim < 1:
        raise UsageError("need n >= 0 and dim >= 1")
    words = splitmix64(state.seed, state.position, n * dim)
    u = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return PointSet(u.reshape(n, dim)), PrngState(state.seed, state.position + n * dim)


# ---------------------------------------------------------------------------
# Mapping and boundary sampling


def map_to_box(ps: PointSet, box: DomainBox) -> PointSet:
    if ps.frame != "unit":
        raise UsageError(f"map_to_box expects a unit-frame point set, got {ps.frame!r}")
    if ps.points.shape[1] != box.dim:
        raise UsageError(f"point dimension {ps.points.shape[1]} does not match box dimension {box.dim}")
    lo = np.asarray(box.lower)
    pts = lo + box.lengths * ps.points
    return PointSet(pts, frame="domain", measure=ps.measure * box.volume)


@dataclass
class BoundaryStream:
    """State for boundary sampling: a face cursor plus a (K-1)-dim stream."""

    strategy: str
    dimension: int
    seed: int = 0
    face_cursor: int = 0
    sobol: Optional[SobolState] = None
    prng: Optional[PrngState] = None

    def __post_init__(self):
        if self.strategy not in ("qmc", "mc"):
            raise ConfigurationError(f"unknown boundary strategy {self.strategy!r}")
        if self.strategy == "qmc" and self.sobol is None and self.dimension > 1:
            self.sobol = SobolState(self.dimension - 1)
        if self.strategy == "mc" and self.prng is None:
            self.prng = PrngState(self.seed)


def face_normals(face_ids: np.ndarray, dim: int) -> np.ndarray:
    """Outward unit normals for face ids ``2*axis + side`` (side 1 = upper)."""
    normals = np.zeros((face_ids.shape[0], dim))
    axis = face_ids // 2
    normals[np.arange(face_ids.shape[0]), axis] = np.where(face_ids % 2 == 1, 1.0, -1.0)
    return normals


def boundary_points(stream: BoundaryStream, n: int, box: DomainBox) -> tuple[PointSet, BoundaryStream]:
    """``n`` points on the faces of ``box``.

    QMC cycles through the 2K faces in the order (x1=lo, x1=hi, x2=lo, ...);
    MC picks faces at random with probability proportional to face area.
    Free coordinates come from a (K-1)-dimensional stream of the same kind.
    """
    dim = box.dim
    if stream.dimension != dim:
        raise UsageError("boundary stream dimension does not match box")
    nfaces = 2 * dim
    new = BoundaryStream(stream.strategy, dim, stream.seed, stream.face_cursor, stream.sobol, stream.prng)
    if stream.strategy == "qmc":
        faces = (stream.face_cursor + np.arange(n)) % nfaces
        new.face_cursor = (stream.face_cursor + n) % nfaces
        if dim > 1:
            free_ps, new.sobol = sobol_points(stream.sobol, n)
            free = free_ps.points
        else:
            free = np.zeros((n, 0))
    else:
        draw, new.prng = mc_points(stream.prng, n, dim)
        u = draw.points
        weights = np.repeat([box.face_area(k) for k in range(dim)], 2)
        cdf = np.cumsum(weights) / weights.sum()
        faces = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), nfaces - 1)
        free = u[:, 1:]
    faces = faces.astype(np.int64)
    lo = np.asarray(box.lower)
    hi = np.asarray(box.upper)
    pts = np.empty((n, dim))
    axes = faces // 2
    for k in range(dim):
        rows = axes == k
        others = [j for j in range(dim) if j != k]
        pts[np.ix_(rows, others)] = lo[others] + (hi[others] - lo[others]) * free[rows]
        pts[rows, k] = np.where(faces[rows] % 2 == 1, hi[k], lo[k])
    return PointSet(pts, frame="domain", measure=box.boundary_area, face_ids=faces), new


# ---------------------------------------------------------------------------
# Discrepancy


def l2_star_discrepancy(ps: PointSet, chunk: int = 256) -> float:
    """L2-star discrepancy of a unit-frame point set (Warnock's formula)."""
    if ps.frame != "unit":
        raise UsageError("discrepancy is defined for unit-frame point sets")
    x = np.asarray(ps.points, dtype=np.float64)
    n, dim = x.shape
    if n == 0:
        raise UsageError("discrepancy of an empty point set")
    term1 = 3.0**-dim
    term2 = 2.0 ** (1 - dim) / n * np.prod(1.0 - x**2, axis=1).sum()
    pair_sum = 0.0
    for start in range(0, n, chunk):
        block = x[start : start + chunk]
        pair_sum += np.prod(1.0 - np.maximum(block[:, None, :], x[None, :, :]), axis=2).sum()
    t2 = term1 - term2 + pair_sum / n**2
    return math.sqrt(max(t2, 0.0))
