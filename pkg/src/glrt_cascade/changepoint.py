"""Bernoulli GLRT change-point detection over a single observation stream."""

from __future__ import annotations

from typing import Iterable

import numpy as np
from numba import njit

from .core_math import detector_threshold, threshold_table
from .errors import ValidationError


class ObservationBuffer:
    """Binary observations since the last restart, stored as prefix counts of ones.

    ``ones_prefix[s]`` is the number of ones among the first ``s`` observations,
    so the mean over observations ``a+1..b`` is one subtraction away.
    """

    def __init__(self, capacity: int = 64) -> None:
        self._prefix = np.zeros(max(int(capacity), 1) + 1, dtype=np.int64)
        self.n = 0

    def push(self, x: int) -> "ObservationBuffer":
        if x not in (0, 1):
            raise ValidationError(f"observations must be 0 or 1, got {x!r}")
        if self.n + 1 >= self._prefix.size:
            grown = np.zeros(2 * self._prefix.size, dtype=np.int64)
            grown[: self._prefix.size] = self._prefix
            self._prefix = grown
        self._prefix[self.n + 1] = self._prefix[self.n] + x
        self.n += 1
        return self

    def extend(self, xs: Iterable[int]) -> "ObservationBuffer":
        for x in xs:
            self.push(int(x))
        return self

    def clear(self) -> None:
        self.n = 0

    @property
    def ones_prefix(self) -> np.ndarray:
        return self._prefix[: self.n + 1].copy()

    @property
    def ones(self) -> int:
        return int(self._prefix[self.n])

    def mean(self, a: int = 0, b: int | None = None) -> float:
        """Empirical mean of observations ``a+1..b`` (1-based, inclusive)."""
        b = self.n if b is None else b
        if not (0 <= a < b <= self.n):
            raise ValidationError(f"invalid range ({a}, {b}] for buffer of size {self.n}")
        return float(self._prefix[b] - self._prefix[a]) / (b - a)

    def __len__(self) -> int:
        return self.n

    @classmethod
    def from_observations(cls, xs: Iterable[int]) -> "ObservationBuffer":
        xs = list(xs)
        return cls(capacity=len(xs)).extend(xs)


def _kl_vec(x: np.ndarray, y: float) -> np.ndarray:
    # y is strictly inside (0, 1) at every call site
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where(x > 0.0, x * np.log(x / y), 0.0)
        right = np.where(x < 1.0, (1.0 - x) * np.log((1.0 - x) / (1.0 - y)), 0.0)
    return np.maximum(left + right, 0.0)


def glr_statistic(buffer: ObservationBuffer, stride: int = 1) -> float:
    """Two-segment Bernoulli GLR statistic of the buffer.

    The supremum runs over split points ``s = 1, 1 + stride, ...`` below ``n``;
    ``stride=1`` gives the exact statistic. Returns 0 for fewer than two
    observations or a constant stream.
    """
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    n = buffer.n
    if n < 2:
        return 0.0
    prefix = buffer._prefix[: n + 1]
    total = int(prefix[n])
    if total == 0 or total == n:
        return 0.0
    mu = total / n
    s = np.arange(1, n, stride)
    left = prefix[s] / s
    right = (total - prefix[s]) / (n - s)
    stat = s * _kl_vec(left, mu) + (n - s) * _kl_vec(right, mu)
    return float(stat.max())


def glrt_detect(
    buffer: ObservationBuffer, delta: float, stride: int = 1, threshold: str = "practical"
) -> bool:
    """True iff the GLR statistic reaches the threshold for ``buffer.n`` samples.

    ``threshold`` selects ``"practical"`` (``ln(3 n sqrt(n) / delta)``) or
    ``"full"`` (``threshold_beta``).
    """
    if buffer.n < 2:
        return False
    return glr_statistic(buffer, stride) >= detector_threshold(buffer.n, delta, threshold)


def xlogx_table(n_max: int) -> np.ndarray:
    """``c * ln(c)`` for integer ``c = 0..n_max`` (0 at c = 0)."""
    c = np.arange(n_max + 1, dtype=float)
    out = np.zeros(n_max + 1)
    out[1:] = c[1:] * np.log(c[1:])
    return out


@njit(cache=True)
def _neg_entropy(ones, n, xlogx):
    # n * (m ln m + (1-m) ln(1-m)) for m = ones / n, from integer counts
    return xlogx[ones] + xlogx[n - ones] - xlogx[n]


@njit(cache=True)
def _glr_max_nb(prefix, n, stride, xlogx):
    if n < 2:
        return 0.0
    total = prefix[n]
    if total == 0 or total == n:
        return 0.0
    base = _neg_entropy(total, n, xlogx)
    best = 0.0
    for s in range(1, n, stride):
        o1 = prefix[s]
        v = _neg_entropy(o1, s, xlogx) + _neg_entropy(total - o1, n - s, xlogx) - base
        if v > best:
            best = v
    return best


@njit(cache=True)
def _glr_exceeds_nb(prefix, n, stride, threshold, xlogx):
    """Early-exit form of the detector: stop at the first split over threshold."""
    if n < 2:
        return False
    total = prefix[n]
    if total == 0 or total == n:
        return False
    base = _neg_entropy(total, n, xlogx)
    for s in range(1, n, stride):
        o1 = prefix[s]
        v = _neg_entropy(o1, s, xlogx) + _neg_entropy(total - o1, n - s, xlogx) - base
        if v >= threshold:
            return True
    return False


@njit(cache=True)
def _first_detection_nb(stream, stride, check_period, beta, xlogx):
    n_max = stream.size
    prefix = np.zeros(n_max + 1, dtype=np.int64)
    for n in range(1, n_max + 1):
        prefix[n] = prefix[n - 1] + stream[n - 1]
        if n % check_period == 0 and _glr_exceeds_nb(prefix, n, stride, beta[n], xlogx):
            return n
    return -1


def first_detection(
    stream: Iterable[int],
    delta: float,
    stride: int = 1,
    check_period: int = 1,
    threshold: str = "practical",
) -> int | None:
    """Number of observations consumed when the detector first fires, or None.

    The detector is run after every ``check_period``-th observation.
    """
    arr = np.asarray(list(stream) if not isinstance(stream, np.ndarray) else stream)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValidationError("stream must contain only 0/1 observations")
    if stride < 1 or check_period < 1:
        raise ValidationError("stride and check_period must be >= 1")
    arr = arr.astype(np.int64)
    if arr.size == 0:
        return None
    beta = threshold_table(arr.size, delta, threshold)
    hit = _first_detection_nb(arr, int(stride), int(check_period), beta, xlogx_table(arr.size))
    return None if hit < 0 else int(hit)


def first_detections(
    streams: np.ndarray,
    delta: float,
    stride: int = 1,
    check_period: int = 1,
    threshold: str = "practical",
) -> np.ndarray:
    """Vectorised ``first_detection`` over the rows of a 2-d 0/1 array; -1 for no detection."""
    streams = np.asarray(streams, dtype=np.int64)
    if stride < 1 or check_period < 1:
        raise ValidationError("stride and check_period must be >= 1")
    n_max = streams.shape[1]
    beta = threshold_table(n_max, delta, threshold)
    xlogx = xlogx_table(n_max)
    return np.array(
        [_first_detection_nb(row, stride, check_period, beta, xlogx) for row in streams],
        dtype=np.int64,
    )
