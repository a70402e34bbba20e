"""Piecewise-stationary cascade environments.

Time slots are 1-based and segments are inclusive on both ends, so segment
``i`` covers ``start..end`` and a change takes effect at ``end + 1``. Items
are zero-based indices into the attraction vectors.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .core_math import (
    _top_k_nb,
    expected_reward,
    optimal_expected_reward,
    threshold_beta,
    validate_list,
)
from .errors import ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SegmentSpec:
    start: int
    end: int
    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if self.start > self.end:
            raise ValidationError(f"segment start {self.start} exceeds end {self.end}")
        if w.ndim != 1 or w.size == 0:
            raise ValidationError("attraction vector must be a non-empty 1-d array")
        if not np.all((w >= 0.0) & (w <= 1.0)):
            raise ValidationError("attractions must lie in [0, 1]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """An immutable piecewise-stationary cascading bandit instance."""

    L: int
    K: int
    T: int
    segments: tuple[SegmentSpec, ...]
    _starts: list[int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not (1 <= self.K <= self.L):
            raise ValidationError(f"need 1 <= K <= L, got K={self.K}, L={self.L}")
        if not segs:
            raise ValidationError("an environment needs at least one segment")
        expected_start = 1
        for i, seg in enumerate(segs):
            if seg.w.size != self.L:
                raise ValidationError(f"segment {i} has {seg.w.size} attractions, expected L={self.L}")
            if seg.start != expected_start:
                raise ValidationError(
                    f"segment {i} starts at {seg.start}, expected {expected_start} (gap or overlap)"
                )
            if i and np.array_equal(seg.w, segs[i - 1].w):
                raise ValidationError(f"segments {i - 1} and {i} have identical attractions")
            expected_start = seg.end + 1
        if segs[-1].end != self.T:
            raise ValidationError(f"segments end at {segs[-1].end}, horizon is T={self.T}")
        object.__setattr__(self, "_starts", [s.start for s in segs])

    @property
    def N(self) -> int:
        return len(self.segments)

    @property
    def change_points(self) -> list[int]:
        """Last slot of every segment but the final one."""
        return [s.end for s in self.segments[:-1]]

    @property
    def attractions(self) -> np.ndarray:
        """``N x L`` matrix of segment attraction vectors."""
        return np.stack([s.w for s in self.segments])

    @property
    def segment_ends(self) -> np.ndarray:
        return np.array([s.end for s in self.segments], dtype=np.int64)

    def segment_index(self, t: int) -> int:
        if not (1 <= t <= self.T):
            raise ValidationError(f"slot {t} outside [1, {self.T}]")
        return bisect.bisect_right(self._starts, t) - 1

    def attraction_at(self, t: int) -> np.ndarray:
        return self.segments[self.segment_index(t)].w

    def optimal_list(self, t: int) -> np.ndarray:
        return _top_k_nb(self.attraction_at(t), self.K)

    def step_regret(self, t: int, items: Sequence[int]) -> float:
        """Expected-reward gap between the best list and ``items`` at slot ``t``."""
        w = self.attraction_at(t)
        arr = validate_list(items, self.L, self.K)
        return optimal_expected_reward(w, self.K) - expected_reward(arr, w)

    @classmethod
    def from_blocks(cls, K: int, lengths: Sequence[int], vectors: Sequence[np.ndarray]) -> "EnvironmentSpec":
        segments = []
        start = 1
        for length, w in zip(lengths, vectors):
            segments.append(SegmentSpec(start, start + int(length) - 1, w))
            start += int(length)
        L = len(vectors[0])
        return cls(L=L, K=K, T=start - 1, segments=tuple(segments))


def attraction_at(spec: EnvironmentSpec, t: int) -> np.ndarray:
    return spec.attraction_at(t)


def step_regret(spec: EnvironmentSpec, t: int, items: Sequence[int]) -> float:
    return spec.step_regret(t, items)


@dataclass(frozen=True)
class Feedback:
    """Position (1-based) of the clicked item, or None when nothing was clicked."""

    clicked_position: int | None = None


def simulate_click(
    w: np.ndarray, items: Sequence[int], rng: np.random.Generator
) -> tuple[Feedback, int, int]:
    """One user visit under the cascade model.

    Returns the feedback, the binary reward and the number of positions the
    user examined (the click position, or ``K`` without a click).
    """
    w = np.asarray(w, dtype=float)
    arr = validate_list(items, w.size)
    pos = _cascade_click_nb(arr, w, rng)
    if pos == 0:
        return Feedback(None), 0, arr.size
    return Feedback(pos), 1, pos


@njit(cache=True)
def _cascade_click_nb(items, w, rng):
    # attraction draws are lazy: positions after the click are never sampled
    for k in range(items.size):
        if rng.random() < w[items[k]]:
            return k + 1
    return 0


# Synthetic benchmark ---------------------------------------------------------

SYNTHETIC_TOP = (0.60, 0.55, 0.50)
SYNTHETIC_LOW, SYNTHETIC_HIGH = 0.10, 0.50
SYNTHETIC_BOOST = 0.9


def make_synthetic(
    seed: int,
    L: int = 10,
    K: int = 3,
    n_segments: int = 10,
    segment_length: int = 2500,
    n_boosted: int = 3,
    top: Sequence[float] = SYNTHETIC_TOP,
    low: float = SYNTHETIC_LOW,
    high: float = SYNTHETIC_HIGH,
    boost: float = SYNTHETIC_BOOST,
) -> EnvironmentSpec:
    """Alternating environment with a constant top-K and periodic boosts.

    Odd segments share one base vector: the first ``K`` items have attractions
    ``top`` (0.60, 0.55, 0.50 by default) and the rest are drawn from
    U[low, high]. In every even segment ``n_boosted`` of the suboptimal items,
    chosen afresh per segment, are raised to ``boost``.
    """
    if K != len(top):
        raise ValidationError(f"need {K} top attractions, got {len(top)}")
    if n_boosted > L - K:
        raise ValidationError("cannot boost more items than there are suboptimal ones")
    rng = np.random.default_rng(seed)
    base = np.empty(L)
    base[:K] = top
    base[K:] = rng.uniform(low, high, size=L - K)
    vectors = []
    for i in range(n_segments):
        w = base.copy()
        if i % 2 == 1:
            boosted = K + rng.choice(L - K, size=n_boosted, replace=False)
            w[boosted] = boost
        vectors.append(w)
    return EnvironmentSpec.from_blocks(K, [segment_length] * n_segments, vectors)


# Randomised hard instance ----------------------------------------------------


def hard_instance_gap(L: int, T: int) -> float:
    """Gap ``(L - 1) / (4 sqrt(T L ln(4/3)))`` of the best item above 1/2."""
    return (L - 1) / (4.0 * math.sqrt(T * L * math.log(4.0 / 3.0)))


def make_hard_instance(L: int, K: int, N: int, T: int, seed: int) -> EnvironmentSpec:
    """Blocks of near-indistinguishable items, one slightly better per block.

    All items sit at 1/2 except a single best item at ``1/2 + eps``. The best
    item of the first block is uniform over all items; afterwards it is uniform
    over the items other than the previous block's best.
    """
    if L < 3:
        raise ValidationError("the hard instance needs L >= 3")
    if N < 1 or T < N:
        raise ValidationError("need N >= 1 and T >= N")
    block = math.ceil(T / N)
    last = T - (N - 1) * block
    if last <= 0:
        raise ValidationError(f"N={N} blocks of length {block} overrun T={T}")
    eps = hard_instance_gap(L, T)
    rng = np.random.default_rng(seed)
    best = int(rng.integers(L))
    vectors = []
    for i in range(N):
        if i:
            shift = int(rng.integers(1, L))
            best = (best + shift) % L
        w = np.full(L, 0.5)
        w[best] = 0.5 + eps
        vectors.append(w)
    return EnvironmentSpec.from_blocks(K, [block] * (N - 1) + [last], vectors)


# CSV ingestion ---------------------------------------------------------------


def load_segments_csv(path: str | Path, K: int, scale: float = 1.0) -> EnvironmentSpec:
    """Read a ``start,end,w1,...,wL`` segment table.

    Every probability is multiplied by ``scale``; values pushed above 1 are
    clipped with a warning. Errors name the offending row (header is row 1).
    """
    path = Path(path)
    if scale <= 0:
        raise ValidationError("scale must be positive")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise ValidationError(f"{path}: empty segment file")
    header = [c.strip() for c in rows[0]]
    if len(header) < 3 or header[:2] != ["start", "end"]:
        raise ValidationError(f"{path}: row 1: header must be start,end,w1,...,wL")
    L = len(header) - 2
    if header[2:] != [f"w{i}" for i in range(1, L + 1)]:
        raise ValidationError(f"{path}: row 1: attraction columns must be named w1..w{L}")
    if len(rows) < 2:
        raise ValidationError(f"{path}: no segment rows")
    segments = []
    clipped = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != L + 2:
            raise ValidationError(f"{path}: row {lineno}: expected {L + 2} fields, got {len(row)}")
        try:
            start, end = int(row[0]), int(row[1])
            w = np.array([float(c) for c in row[2:]]) * scale
        except ValueError as exc:
            raise ValidationError(f"{path}: row {lineno}: {exc}") from None
        if np.any(~np.isfinite(w)) or np.any(w < 0.0):
            raise ValidationError(f"{path}: row {lineno}: probabilities must be finite and >= 0")
        over = w > 1.0
        if over.any():
            clipped += int(over.sum())
            w = np.minimum(w, 1.0)
        try:
            segments.append(SegmentSpec(start, end, w))
        except ValidationError as exc:
            raise ValidationError(f"{path}: row {lineno}: {exc}") from None
    if clipped:
        log.warning("%s: %d probabilities exceeded 1 after scaling by %g and were clipped", path, clipped, scale)
    try:
        return EnvironmentSpec(L=L, K=K, T=segments[-1].end, segments=tuple(segments))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_segments_csv(spec: EnvironmentSpec, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start", "end"] + [f"w{i}" for i in range(1, spec.L + 1)])
        for seg in spec.segments:
            writer.writerow([seg.start, seg.end] + [repr(float(x)) for x in seg.w])
    return path


# Segment-length condition ----------------------------------------------------


@dataclass
class AssumptionReport:
    p: float
    delta: float
    beta: float
    change_magnitudes: list[float]  # index 0 is max_l w^1(l), then one per change-point
    windows: list[int]
    segment_lengths: list[int]
    required: list[int]
    satisfied: list[bool]

    @property
    def ok(self) -> bool:
        return all(self.satisfied)

    def lines(self) -> list[str]:
        out = [f"p={self.p:.6g} delta={self.delta:.6g} beta(T,delta)={self.beta:.6g}"]
        for i, (dc, d) in enumerate(zip(self.change_magnitudes, self.windows)):
            out.append(f"d_{i}: change={dc:.6g} window={d}")
        for i, (length, req, ok) in enumerate(zip(self.segment_lengths, self.required, self.satisfied), 1):
            out.append(f"segment {i}: length={length} required>={req} {'ok' if ok else 'VIOLATED'}")
        out.append(f"overall: {'satisfied' if self.ok else 'violated'}")
        return out


def check_assumption2(spec: EnvironmentSpec, p: float, delta: float) -> AssumptionReport:
    """Check that every segment is long enough for the detector to catch its change.

    A change of magnitude ``D`` needs ``d = ceil(4 L beta(T, delta) / (p D^2) + L / p)``
    slots; each segment must span twice the larger window on either side.
    """
    if not (0.0 < p <= 1.0):
        raise ValidationError("p must lie in (0, 1]")
    beta = threshold_beta(spec.T, delta)
    W = spec.attractions
    mags = [float(np.max(np.abs(W[0])))]
    mags += [float(np.max(np.abs(W[i + 1] - W[i]))) for i in range(spec.N - 1)]

    def window(d: float) -> int:
        if d == 0.0:
            return math.inf  # type: ignore[return-value]
        return math.ceil(4.0 * spec.L * beta / (p * d * d) + spec.L / p)

    windows = [window(d) for d in mags]
    lengths = [s.length for s in spec.segments]
    required: list[int] = []
    satisfied: list[bool] = []
    if spec.N > 1:
        for i in range(1, spec.N):
            req = 2 * max(windows[i], windows[i - 1])
            required.append(req)
            satisfied.append(lengths[i - 1] >= req)
        req = 2 * windows[spec.N - 1]
        required.append(req)
        satisfied.append(lengths[-1] >= req)
    return AssumptionReport(p, delta, beta, mags, windows, lengths, required, satisfied)


__all__ = [
    "AssumptionReport",
    "EnvironmentSpec",
    "Feedback",
    "SegmentSpec",
    "attraction_at",
    "check_assumption2",
    "hard_instance_gap",
    "load_segments_csv",
    "make_hard_instance",
    "make_synthetic",
    "simulate_click",
    "step_regret",
    "write_segments_csv",
]
