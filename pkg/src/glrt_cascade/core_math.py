"""Numeric kernels shared by the detector and the policies.

Everything here is a pure function. The ``_nb`` variants are numba-compiled
copies without argument validation; they are what the simulation loop calls.
All logarithms are natural.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numba import njit

from .errors import ValidationError

# Largest attraction probed when deciding whether the KL-UCB index saturates at 1.
KLUCB_CEILING = 1.0 - 1e-9
KLUCB_BRACKET = 1e-9
KLUCB_RESIDUAL = 1e-8
KLUCB_MAX_ITER = 64


def _check_probability(name: str, x: float) -> None:
    if not (0.0 <= x <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {x!r}")


def kl_bernoulli(x: float, y: float) -> float:
    """KL divergence between Bernoulli(x) and Bernoulli(y), in nats.

    Uses ``0 * log(0 / .) = 0``; returns ``inf`` when ``y`` is 0 or 1 and
    ``x != y``.
    """
    _check_probability("x", x)
    _check_probability("y", y)
    return _kl_nb(float(x), float(y))


@njit(cache=True)
def _kl_nb(x, y):
    if x == y:
        return 0.0
    if y <= 0.0 or y >= 1.0:
        return np.inf
    out = 0.0
    if x > 0.0:
        out += x * math.log(x / y)
    if x < 1.0:
        out += (1.0 - x) * math.log((1.0 - x) / (1.0 - y))
    # rounding can push the result a hair below zero for x ~ y
    return max(out, 0.0)


def validate_list(items: Sequence[int], L: int, K: int | None = None) -> np.ndarray:
    """Return ``items`` as an int array after checking it is a ranked list.

    Item ids are zero-based indices into the attraction vector.
    """
    arr = np.asarray(items, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("a recommendation list must be a non-empty 1-d sequence")
    if K is not None and arr.size != K:
        raise ValidationError(f"list has {arr.size} items, expected K={K}")
    if arr.min() < 0 or arr.max() >= L:
        raise ValidationError(f"item ids must lie in [0, {L - 1}], got {arr.tolist()}")
    if np.unique(arr).size != arr.size:
        raise ValidationError(f"duplicate items in list {arr.tolist()}")
    return arr


def expected_reward(items: Sequence[int], w: np.ndarray) -> float:
    """Click probability ``1 - prod(1 - w[a_k])`` of a ranked list."""
    w = np.asarray(w, dtype=float)
    arr = validate_list(items, w.size)
    return _expected_reward_nb(arr, w)


@njit(cache=True)
def _expected_reward_nb(items, w):
    miss = 1.0
    for k in range(items.size):
        miss *= 1.0 - w[items[k]]
    return 1.0 - miss


def top_k(values: np.ndarray, K: int) -> np.ndarray:
    """Indices of the ``K`` largest values, descending, ties to the lowest index."""
    return _top_k_nb(np.asarray(values, dtype=float), K)


@njit(cache=True)
def _top_k_nb(values, K):
    order = np.argsort(-values, kind="mergesort")
    return order[:K].copy()


def optimal_expected_reward(w: np.ndarray, K: int) -> float:
    """Expected reward of the best K-list, i.e. of the K most attractive items."""
    w = np.asarray(w, dtype=float)
    if not (1 <= K <= w.size):
        raise ValidationError(f"need 1 <= K <= L, got K={K}, L={w.size}")
    return _expected_reward_nb(_top_k_nb(w, K), w)


def ucb_index(mean: float, n: int, elapsed: int) -> float:
    """Hoeffding-style index ``mean + sqrt(3 ln(elapsed) / (2 n))``; not clipped."""
    if n < 1:
        raise ValidationError("ucb_index needs at least one observation")
    if elapsed < 1:
        raise ValidationError("elapsed must be >= 1")
    return _ucb_nb(float(mean), float(n), float(elapsed))


@njit(cache=True)
def _ucb_nb(mean, n, elapsed):
    return mean + math.sqrt(3.0 * math.log(elapsed) / (2.0 * n))


def exploration_level(elapsed: float) -> float:
    """KL-UCB exploration level ``ln t + 3 ln(max(ln t, 1))``, clamped at 0."""
    return _explore_nb(float(elapsed))


@njit(cache=True)
def _explore_nb(elapsed):
    if elapsed <= 1.0:
        return 0.0
    lt = math.log(elapsed)
    return max(0.0, lt + 3.0 * math.log(max(lt, 1.0)))


def klucb_index(mean: float, n: int, elapsed: int) -> float:
    """Largest ``q`` in ``[mean, 1]`` with ``n * KL(mean, q) <= g(elapsed)``.

    The index saturates at exactly 1 when ``n * KL(mean, 1 - 1e-9)`` is already
    within the budget; otherwise bisection stops once the bracket is below
    ``1e-9`` and the returned point is within ``1e-8`` of the level curve.
    """
    if n < 1:
        raise ValidationError("klucb_index needs at least one observation")
    if elapsed < 1:
        raise ValidationError("elapsed must be >= 1")
    _check_probability("mean", mean)
    return _klucb_nb(float(mean), float(n), _explore_nb(float(elapsed)))


@njit(cache=True)
def _klucb_nb(mean, n, level):
    if mean >= 1.0:
        return 1.0
    if level <= 0.0:
        return mean
    if n * _kl_nb(mean, KLUCB_CEILING) <= level:
        return 1.0
    lo = mean
    hi = KLUCB_CEILING
    for _ in range(KLUCB_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if n * _kl_nb(mean, mid) <= level:
            lo = mid
        else:
            hi = mid
        if hi - lo <= KLUCB_BRACKET and level - n * _kl_nb(mean, lo) <= KLUCB_RESIDUAL:
            break
    return lo


def _g_tilde(x: float) -> float:
    return x + 4.0 * math.log(1.0 + x + math.sqrt(2.0 * x))


def threshold_beta(t: int, delta: float) -> float:
    """GLRT threshold for a stream of ``t`` observations at confidence ``delta``."""
    if not (0.0 < delta < 1.0):
        raise ValidationError(f"delta must lie in (0, 1), got {delta!r}")
    if t < 1:
        raise ValidationError("t must be >= 1")
    x = math.log(3.0 * t * math.sqrt(t) / delta) / 2.0
    return 2.0 * _g_tilde(x) + 6.0 * math.log(1.0 + math.log(t))


def practical_threshold(t: int, delta: float) -> float:
    """Leading term ``ln(3 t sqrt(t) / delta)`` of ``threshold_beta``.

    The detector uses this by default. It is far less conservative than the
    full expression, so detection delays are correspondingly shorter.
    """
    if not (0.0 < delta < 1.0):
        raise ValidationError(f"delta must lie in (0, 1), got {delta!r}")
    if t < 1:
        raise ValidationError("t must be >= 1")
    return math.log(3.0 * t * math.sqrt(t) / delta)


THRESHOLDS = ("practical", "full")


def threshold_table(n_max: int, delta: float, kind: str = "practical") -> np.ndarray:
    """Detector threshold for ``n = 0..n_max`` samples (entry 0 is +inf).

    ``kind="full"`` tabulates ``threshold_beta``; ``kind="practical"``
    tabulates ``practical_threshold``.
    """
    if not (0.0 < delta < 1.0):
        raise ValidationError(f"delta must lie in (0, 1), got {delta!r}")
    if kind not in THRESHOLDS:
        raise ValidationError(f"unknown threshold kind {kind!r}; choose from {THRESHOLDS}")
    n = np.arange(1, n_max + 1, dtype=float)
    x = np.log(3.0 * n * np.sqrt(n) / delta)
    out = np.empty(n_max + 1)
    out[0] = np.inf
    if kind == "practical":
        out[1:] = x
    else:
        x = x / 2.0
        g = x + 4.0 * np.log1p(x + np.sqrt(2.0 * x))
        out[1:] = 2.0 * g + 6.0 * np.log1p(np.log(n))
    return out


def detector_threshold(t: int, delta: float, kind: str = "practical") -> float:
    if kind == "practical":
        return practical_threshold(t, delta)
    if kind == "full":
        return threshold_beta(t, delta)
    raise ValidationError(f"unknown threshold kind {kind!r}; choose from {THRESHOLDS}")
