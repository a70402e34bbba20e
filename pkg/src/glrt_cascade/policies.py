"""Cascading bandit policies.

Every policy is a pair of compiled step functions (``_select_nb`` and
``_update_nb``) acting on a ``PolicyState`` of plain arrays, so the same code
drives both the interactive :class:`CascadePolicy` API and the compiled trial
loop in :mod:`glrt_cascade.harness`.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .changepoint import _glr_exceeds_nb, xlogx_table
from .core_math import (
    THRESHOLDS,
    _explore_nb,
    _klucb_nb,
    _top_k_nb,
    _ucb_nb,
    threshold_table,
    validate_list,
)
from .environment import EnvironmentSpec, Feedback
from .errors import ValidationError

# policy families
STATIONARY, GLRT, ORACLE, DISCOUNTED, SLIDING = 0, 1, 2, 3, 4
# index variants
UCB, KLUCB = 0, 1

# ivars slots
_TAU, _CURSOR, _FILLED, _NEXT_RESTART = 0, 1, 2, 3


class PolicyParams(NamedTuple):
    family: int
    variant: int
    L: int
    K: int
    period: int  # floor(L / p) for GLRT policies, 0 otherwise
    stride: int
    check_period: int
    xi: float
    gamma: float
    window: int


class PolicyState(NamedTuple):
    ivars: np.ndarray  # tau, window cursor, window fill, next oracle restart
    counts: np.ndarray  # observations since restart (discounted / windowed for DUCB / SWUCB)
    sums: np.ndarray  # clicks matching ``counts``
    index: np.ndarray  # scratch for index values
    prefix: np.ndarray  # per-item ones-prefix buffers for the detector
    win_items: np.ndarray  # sliding window: listed items per slot
    win_obs: np.ndarray  # sliding window: 0/1 per examined position, -1 if unexamined
    restarts: np.ndarray  # slots at which the oracle restarts
    beta: np.ndarray  # detector threshold by sample count
    xlogx: np.ndarray
    pool: np.ndarray  # scratch for uniform exploration


@njit(cache=True)
def _reset_nb(S):
    S.counts[:] = 0.0
    S.sums[:] = 0.0


@njit(cache=True)
def _begin_slot_nb(P, S, t):
    """Oracle restarts happen at the start of the first slot of each segment."""
    if P.family != ORACLE:
        return False
    ptr = S.ivars[_NEXT_RESTART]
    if ptr < S.restarts.size and S.restarts[ptr] == t:
        _reset_nb(S)
        S.ivars[_TAU] = t - 1
        S.ivars[_NEXT_RESTART] = ptr + 1
        return True
    return False


@njit(cache=True)
def _explore_list_nb(P, S, first, rng, out):
    out[0] = first
    m = 0
    for item in range(P.L):
        if item != first:
            S.pool[m] = item
            m += 1
    # partial Fisher-Yates over the remaining L - 1 items
    for i in range(P.K - 1):
        j = i + int(rng.random() * (m - i))
        if j >= m:
            j = m - 1
        tmp = S.pool[i]
        S.pool[i] = S.pool[j]
        S.pool[j] = tmp
        out[i + 1] = S.pool[i]


@njit(cache=True)
def _compute_index_nb(P, S, t):
    idx = S.index
    if P.family == DISCOUNTED:
        total = 0.0
        for item in range(P.L):
            total += S.counts[item]
        log_total = math.log(total) if total > 1.0 else 0.0
        for item in range(P.L):
            c = S.counts[item]
            if c <= 0.0:
                idx[item] = np.inf
            else:
                idx[item] = S.sums[item] / c + 2.0 * math.sqrt(P.xi * log_total / c)
        return
    if P.family == SLIDING:
        log_w = math.log(min(t, P.window))
        for item in range(P.L):
            c = S.counts[item]
            if c <= 0.0:
                idx[item] = np.inf
            else:
                idx[item] = S.sums[item] / c + math.sqrt(P.xi * log_w / c)
        return
    elapsed = float(t - S.ivars[_TAU])
    level = _explore_nb(elapsed)
    for item in range(P.L):
        c = S.counts[item]
        if c <= 0.0:
            idx[item] = np.inf
        elif P.variant == UCB:
            idx[item] = _ucb_nb(S.sums[item] / c, c, elapsed)
        else:
            idx[item] = _klucb_nb(S.sums[item] / c, c, level)


@njit(cache=True)
def _select_nb(P, S, t, rng, out):
    if P.family == GLRT:
        a = (t - S.ivars[_TAU]) % P.period
        if 1 <= a <= P.L:
            _explore_list_nb(P, S, a - 1, rng, out)
            return
    _compute_index_nb(P, S, t)
    out[:] = _top_k_nb(S.index, P.K)


@njit(cache=True)
def _update_nb(P, S, t, items, examined, clicked):
    """Apply one slot of cascade feedback; True if the detector triggered a restart.

    ``examined`` positions were seen by the user and ``clicked`` is the 1-based
    click position (0 for none).
    """
    if P.family == DISCOUNTED:
        for item in range(P.L):
            S.counts[item] *= P.gamma
            S.sums[item] *= P.gamma
    elif P.family == SLIDING:
        cur = S.ivars[_CURSOR]
        if S.ivars[_FILLED] == P.window:
            for k in range(P.K):
                x = S.win_obs[cur, k]
                if x >= 0:
                    old = S.win_items[cur, k]
                    S.counts[old] -= 1.0
                    S.sums[old] -= x
        for k in range(P.K):
            S.win_items[cur, k] = items[k]
            if k < examined:
                S.win_obs[cur, k] = 1 if k + 1 == clicked else 0
            else:
                S.win_obs[cur, k] = -1
        S.ivars[_CURSOR] = (cur + 1) % P.window
        if S.ivars[_FILLED] < P.window:
            S.ivars[_FILLED] += 1

    for k in range(examined):
        item = items[k]
        x = 1 if k + 1 == clicked else 0
        S.counts[item] += 1.0
        S.sums[item] += x
        if P.family == GLRT:
            n = int(S.counts[item])
            row = S.prefix[item]
            row[n] = row[n - 1] + x
            if n % P.check_period == 0 and _glr_exceeds_nb(row, n, P.stride, S.beta[n], S.xlogx):
                # global restart; the remaining positions of this slot are dropped
                _reset_nb(S)
                S.ivars[_TAU] = t
                return True
    return False


def exploration_period(L: int, p: float) -> int:
    if not (0.0 < p <= 1.0):
        raise ValidationError(f"p must lie in (0, 1], got {p!r}")
    period = math.floor(L / p)
    if period < L:
        raise ValidationError(f"floor(L/p) = {period} < L = {L}")
    return period


def default_p(T: int, N: int, L: int | None = None, rule: str = "experimental") -> float:
    """Uniform-exploration rate.

    ``"experimental"`` is ``0.1 sqrt(N ln T / T)``; ``"theoretical"`` is
    ``sqrt(N L ln T / T)`` and needs ``L``.
    """
    if rule == "experimental":
        p = 0.1 * math.sqrt(N * math.log(T) / T)
    elif rule == "theoretical":
        if L is None:
            raise ValidationError("the theoretical rule needs L")
        p = math.sqrt(N * L * math.log(T) / T)
    else:
        raise ValidationError(f"unknown p rule {rule!r}")
    return min(p, 1.0)


def default_gamma(T: int) -> float:
    return 1.0 - 0.25 / math.sqrt(T)


def default_window(T: int) -> int:
    return math.ceil(2.0 * math.sqrt(T * math.log(T)))


class CascadePolicy:
    """Base class: a ranked-list policy driven by ``select`` / ``update`` calls.

    Slots must be fed in order, one ``select`` followed by one ``update``.
    Subclasses only choose the family and parameters.
    """

    name = "cascade"
    family = STATIONARY
    variant = UCB

    def __init__(
        self,
        L: int,
        K: int,
        T: int,
        *,
        p: float | None = None,
        delta: float | None = None,
        stride: int = 1,
        check_period: int = 1,
        threshold: str = "practical",
        xi: float = 0.5,
        gamma: float | None = None,
        window: int | None = None,
        restart_slots: Sequence[int] = (),
    ) -> None:
        if not (1 <= K <= L):
            raise ValidationError(f"need 1 <= K <= L, got K={K}, L={L}")
        if T < 1:
            raise ValidationError("T must be >= 1")
        if stride < 1 or check_period < 1:
            raise ValidationError("stride and check_period must be >= 1")
        if threshold not in THRESHOLDS:
            raise ValidationError(f"unknown threshold kind {threshold!r}")
        self.L, self.K, self.T = L, K, T
        family = self.family
        period = 0
        cap = 1
        beta = np.full(1, np.inf)
        if family == GLRT:
            p = default_p(T, 1) if p is None else p
            delta = 1.0 / T if delta is None else delta
            period = exploration_period(L, p)
            cap = T
            beta = threshold_table(cap, delta, threshold)
        gamma = default_gamma(T) if gamma is None else float(gamma)
        window = default_window(T) if window is None else int(window)
        if family == DISCOUNTED and not (0.0 < gamma <= 1.0):
            raise ValidationError("gamma must lie in (0, 1]")
        if family == SLIDING and window < 1:
            raise ValidationError("window must be >= 1")
        self.p, self.delta, self.threshold = p, delta, threshold
        self.params = PolicyParams(
            family=family,
            variant=self.variant,
            L=L,
            K=K,
            period=period,
            stride=int(stride),
            check_period=int(check_period),
            xi=float(xi),
            gamma=gamma,
            window=window,
        )
        w_rows = window if family == SLIDING else 1
        self.state = PolicyState(
            ivars=np.zeros(4, dtype=np.int64),
            counts=np.zeros(L),
            sums=np.zeros(L),
            index=np.zeros(L),
            prefix=np.zeros((L, cap + 1), dtype=np.int64),
            win_items=np.zeros((w_rows, K), dtype=np.int64),
            win_obs=np.full((w_rows, K), -1, dtype=np.int8),
            restarts=np.asarray(sorted(restart_slots), dtype=np.int64),
            beta=beta,
            xlogx=xlogx_table(cap),
            pool=np.zeros(L, dtype=np.int64),
        )
        self.restarts: list[tuple[int, int]] = []
        self._t = 0

    def reset(self) -> None:
        S = self.state
        S.ivars[:] = 0
        _reset_nb(S)
        S.win_obs[:] = -1
        self.restarts.clear()
        self._t = 0

    @property
    def tau(self) -> int:
        return int(self.state.ivars[_TAU])

    @property
    def counts(self) -> np.ndarray:
        return self.state.counts.copy()

    @property
    def means(self) -> np.ndarray:
        c = self.state.counts
        return np.divide(self.state.sums, c, out=np.zeros(self.L), where=c > 0)

    def indices(self, t: int) -> np.ndarray:
        """Index values the policy would rank by at slot ``t``."""
        _compute_index_nb(self.params, self.state, t)
        return self.state.index.copy()

    def is_exploration_slot(self, t: int) -> bool:
        if self.family != GLRT:
            return False
        a = (t - self.tau) % self.params.period
        return 1 <= a <= self.L

    def select(self, t: int, rng: np.random.Generator) -> np.ndarray:
        if t != self._t + 1:
            raise ValidationError(f"expected slot {self._t + 1}, got {t}")
        if _begin_slot_nb(self.params, self.state, t):
            self.restarts.append((t, self.tau))
        out = np.empty(self.K, dtype=np.int64)
        _select_nb(self.params, self.state, t, rng, out)
        self._t = t
        return out

    def update(self, t: int, items: Sequence[int], feedback: Feedback) -> bool:
        """Feed back one slot; returns True when the policy restarted."""
        if t != self._t:
            raise ValidationError(f"update for slot {t} but last selection was slot {self._t}")
        arr = validate_list(items, self.L, self.K)
        clicked = feedback.clicked_position or 0
        if not (0 <= clicked <= self.K):
            raise ValidationError(f"click position {clicked} outside 1..{self.K}")
        examined = clicked if clicked else self.K
        detected = bool(_update_nb(self.params, self.state, t, arr, examined, clicked))
        if detected:
            self.restarts.append((t, self.tau))
        return detected

    def __repr__(self) -> str:
        return f"{type(self).__name__}(L={self.L}, K={self.K}, T={self.T})"


class CascadeUCB1(CascadePolicy):
    name = "ucb1"


class CascadeKLUCB(CascadePolicy):
    name = "klucb"
    variant = KLUCB


class GLRTCascadeUCB(CascadePolicy):
    """UCB ranking with forced uniform exploration and GLRT-triggered global restarts."""

    name = "glrt-ucb"
    family = GLRT


class GLRTCascadeKLUCB(GLRTCascadeUCB):
    name = "glrt-klucb"
    variant = KLUCB


class CascadeDUCB(CascadePolicy):
    """Discounted UCB: statistics decay by ``gamma`` every slot."""

    name = "ducb"
    family = DISCOUNTED


class CascadeSWUCB(CascadePolicy):
    """Sliding-window UCB over the last ``window`` slots."""

    name = "swucb"
    family = SLIDING


class OracleCascadeUCB1(CascadePolicy):
    name = "oracle-ucb1"
    family = ORACLE


class OracleCascadeKLUCB(OracleCascadeUCB1):
    name = "oracle-klucb"
    variant = KLUCB


def oracle(base: CascadePolicy, change_points: Sequence[int]) -> CascadePolicy:
    """Stationary ``base`` policy that restarts right after every true change-point."""
    if base.family != STATIONARY:
        raise ValidationError("only stationary policies can be wrapped by the oracle")
    cls = OracleCascadeKLUCB if base.variant == KLUCB else OracleCascadeUCB1
    return cls(base.L, base.K, base.T, restart_slots=[c + 1 for c in change_points])


POLICIES: dict[str, type[CascadePolicy]] = {
    cls.name: cls
    for cls in (
        GLRTCascadeUCB,
        GLRTCascadeKLUCB,
        CascadeUCB1,
        CascadeKLUCB,
        CascadeDUCB,
        CascadeSWUCB,
        OracleCascadeUCB1,
        OracleCascadeKLUCB,
    )
}


def make_policy(
    name: str,
    spec: EnvironmentSpec,
    *,
    p: float | None = None,
    p_rule: str = "experimental",
    n_segments: int | None = None,
    delta: float | None = None,
    **kwargs,
) -> CascadePolicy:
    """Build a policy for ``spec`` with the benchmark's default tuning.

    GLRT policies default to ``delta = 1/T`` and the ``p_rule`` exploration
    rate computed with ``n_segments`` (the environment's own N if omitted).
    Oracle policies receive the environment's change-points.
    """
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValidationError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    if cls.family == GLRT:
        N = spec.N if n_segments is None else n_segments
        kwargs["p"] = default_p(spec.T, N, spec.L, p_rule) if p is None else p
        kwargs["delta"] = 1.0 / spec.T if delta is None else delta
    if cls.family == ORACLE:
        kwargs["restart_slots"] = [c + 1 for c in spec.change_points]
    return cls(spec.L, spec.K, spec.T, **kwargs)
