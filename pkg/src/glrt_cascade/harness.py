"""Monte Carlo experiment runner, aggregation and output files.

Trial ``i`` of an experiment draws all of its randomness from
``numpy.random.default_rng(SeedSequence(base_seed, spawn_key=(i,)))``, so a
trial's trajectory depends only on the configuration, the environment and
``i``. Results are reduced in trial order, which makes every aggregate
independent of how trials were scheduled across worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numba import njit

from .core_math import _expected_reward_nb, optimal_expected_reward
from .environment import (
    EnvironmentSpec,
    _cascade_click_nb,
    load_segments_csv,
    make_hard_instance,
    make_synthetic,
)
from .errors import ValidationError
from .policies import (
    GLRT,
    POLICIES,
    CascadePolicy,
    _begin_slot_nb,
    _select_nb,
    _update_nb,
    default_p,
    make_policy,
)

log = logging.getLogger(__name__)

TABLE_POLICIES = (
    "ucb1",
    "klucb",
    "ducb",
    "swucb",
    "glrt-ucb",
    "glrt-klucb",
    "oracle-ucb1",
    "oracle-klucb",
)


@dataclass
class ExperimentConfig:
    env: str = "synthetic"  # synthetic | hard | csv
    env_seed: int = 0
    csv_path: str | None = None
    scale: float = 1.0
    L: int = 10
    K: int = 3
    N: int = 10
    T: int = 25000
    policies: tuple[str, ...] = TABLE_POLICIES
    p: float | None = None
    p_rule: str = "experimental"
    n_segments: int | None = None
    delta: float | None = None
    stride: int = 1
    check_period: int = 1
    threshold: str = "practical"
    xi: float = 0.5
    gamma: float | None = None
    window: int | None = None
    trials: int = 100
    base_seed: int = 12345
    checkpoint_every: int = 100
    full_trajectory: bool = False
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.policies, str):
            self.policies = tuple(p.strip() for p in self.policies.split(",") if p.strip())
        else:
            self.policies = tuple(self.policies)
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if self.delta is not None and not (0.0 < self.delta < 1.0):
            raise ValidationError("delta must lie in (0, 1)")
        if self.p is not None and not (0.0 < self.p <= 1.0):
            raise ValidationError("p must lie in (0, 1]")
        if self.env not in ("synthetic", "hard", "csv"):
            raise ValidationError(f"unknown environment source {self.env!r}")
        if self.env == "csv" and not self.csv_path:
            raise ValidationError("env=csv needs csv_path")
        if self.checkpoint_every < 1:
            raise ValidationError("checkpoint_every must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        unknown = [p for p in self.policies if p not in POLICIES]
        if unknown or not self.policies:
            raise ValidationError(f"unknown policies {unknown}; choose from {sorted(POLICIES)}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        extra = sorted(set(data) - set(known))
        if extra:
            raise ValidationError(f"unknown config keys: {', '.join(extra)}")
        return cls(**{k: _coerce(known[k].type, v) for k, v in data.items()})

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        """Load a JSON document or flat ``key=value`` lines (``#`` starts a comment)."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        if text.lstrip().startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: invalid JSON: {exc}") from None
        else:
            data = {}
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValidationError(f"{path}:{lineno}: expected key=value")
                key, value = (s.strip() for s in line.split("=", 1))
                data[key] = value
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["policies"] = list(self.policies)
        return out


def _coerce(annotation: str, value: Any) -> Any:
    """Convert ``key=value`` strings to the annotated field type."""
    if not isinstance(value, str):
        if "tuple" in annotation and isinstance(value, list):
            return tuple(value)
        return value
    if value.lower() in ("none", "null", ""):
        return None
    if annotation.startswith("int"):
        return int(value)
    if annotation.startswith("float"):
        return float(value)
    if annotation.startswith("bool"):
        return value.lower() in ("1", "true", "yes", "on")
    return value


def build_environment(config: ExperimentConfig) -> EnvironmentSpec:
    if config.env == "synthetic":
        return make_synthetic(config.env_seed)
    if config.env == "hard":
        return make_hard_instance(config.L, config.K, config.N, config.T, config.env_seed)
    return load_segments_csv(config.csv_path, K=config.K, scale=config.scale)


def policy_for(config: ExperimentConfig, spec: EnvironmentSpec, name: str) -> CascadePolicy:
    return make_policy(
        name,
        spec,
        p=config.p,
        p_rule=config.p_rule,
        n_segments=config.n_segments,
        delta=config.delta,
        stride=config.stride,
        check_period=config.check_period,
        threshold=config.threshold,
        xi=config.xi,
        gamma=config.gamma,
        window=config.window,
    )


def trial_rng(base_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(trial_index,)))


def checkpoint_slots(T: int, every: int) -> np.ndarray:
    slots = np.arange(every, T + 1, every, dtype=np.int64)
    if slots.size == 0 or slots[-1] != T:
        slots = np.append(slots, T)
    return slots


@dataclass
class TrialResult:
    policy: str
    trial_index: int
    seed: list[int]
    checkpoints: np.ndarray
    cumulative_regret: np.ndarray  # at each checkpoint; last entry is at T
    detections: list[tuple[int, int]]  # (slot, tau after the restart)

    @property
    def final_regret(self) -> float:
        return float(self.cumulative_regret[-1])


@njit(cache=True)
def _run_trial_nb(P, S, seg_ends, W, opt, T, rng, checkpoints, events):
    K = P.K
    items = np.empty(K, dtype=np.int64)
    regret_at = np.empty(checkpoints.size)
    seg = 0
    cp = 0
    n_events = 0
    cum = 0.0
    for t in range(1, T + 1):
        while t > seg_ends[seg]:
            seg += 1
        w = W[seg]
        if _begin_slot_nb(P, S, t):
            events[n_events, 0] = t
            events[n_events, 1] = S.ivars[0]
            n_events += 1
        _select_nb(P, S, t, rng, items)
        clicked = _cascade_click_nb(items, w, rng)
        examined = clicked if clicked > 0 else K
        cum += opt[seg] - _expected_reward_nb(items, w)
        if _update_nb(P, S, t, items, examined, clicked):
            events[n_events, 0] = t
            events[n_events, 1] = S.ivars[0]
            n_events += 1
        if cp < checkpoints.size and checkpoints[cp] == t:
            regret_at[cp] = cum
            cp += 1
    return regret_at, n_events


def run_trial(
    config: ExperimentConfig,
    spec: EnvironmentSpec,
    trial_index: int,
    policy: str | None = None,
) -> TrialResult:
    """Simulate one policy for ``T`` slots; deterministic in its arguments."""
    name = policy or config.policies[0]
    pol = policy_for(config, spec, name)
    rng = trial_rng(config.base_seed, trial_index)
    every = 1 if config.full_trajectory else config.checkpoint_every
    checkpoints = checkpoint_slots(spec.T, every)
    W = spec.attractions
    opt = np.array([optimal_expected_reward(w, spec.K) for w in W])
    events = np.zeros((spec.T, 2), dtype=np.int64)
    regret, n_events = _run_trial_nb(
        pol.params, pol.state, spec.segment_ends, W, opt, spec.T, rng, checkpoints, events
    )
    # round-off from subtracting equal rewards can leave -1e-17 steps
    regret = np.maximum.accumulate(np.maximum(regret, 0.0))
    return TrialResult(
        policy=name,
        trial_index=trial_index,
        seed=[config.base_seed, trial_index],
        checkpoints=checkpoints,
        cumulative_regret=regret,
        detections=[(int(a), int(b)) for a, b in events[:n_events]],
    )


# Aggregation -----------------------------------------------------------------


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1))


@dataclass
class ChangeDetection:
    change_point: int
    mean: float
    std: float
    detected: int
    missed: int


@dataclass
class PolicySummary:
    policy: str
    trials: int
    final_mean: float
    final_std: float
    checkpoints: list[int]
    curve_mean: list[float]
    curve_std: list[float]
    detections: list[ChangeDetection] = field(default_factory=list)
    false_alarms: int = 0
    final_regrets: list[float] = field(default_factory=list)


@dataclass
class ExperimentSummary:
    config: dict[str, Any]
    environment: dict[str, Any]
    version: str
    policies: dict[str, PolicySummary]

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "config": self.config,
            "environment": self.environment,
            "policies": {k: asdict(v) for k, v in self.policies.items()},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentSummary":
        policies = {}
        for name, raw in data["policies"].items():
            raw = dict(raw)
            raw["detections"] = [ChangeDetection(**d) for d in raw["detections"]]
            policies[name] = PolicySummary(**raw)
        return cls(data["config"], data["environment"], data["version"], policies)


def attribute_detections(
    detections: Sequence[int], change_points: Sequence[int], T: int
) -> tuple[list[int | None], int]:
    """Match restart slots to change-points.

    The first restart in ``(nu_i, nu_{i+1}]`` is the detection of ``nu_i``.
    Restarts before the first change-point, and any later restart within the
    same interval, count as false alarms.
    """
    bounds = list(change_points) + [T]
    first: list[int | None] = [None] * len(change_points)
    false_alarms = 0
    for slot in sorted(detections):
        i = int(np.searchsorted(change_points, slot, side="left")) - 1
        if i < 0:
            false_alarms += 1
        elif first[i] is None and slot <= bounds[i + 1]:
            first[i] = slot
        else:
            false_alarms += 1
    return first, false_alarms


def summarize(
    name: str, results: Sequence[TrialResult], change_points: Sequence[int], T: int
) -> PolicySummary:
    results = sorted(results, key=lambda r: r.trial_index)
    if len(results) == 1:
        log.warning("%s: a single trial; standard deviations are reported as 0", name)
    curves = np.stack([r.cumulative_regret for r in results])
    finals = curves[:, -1]
    mean, std = _mean_std(finals)
    curve_std = curves.std(axis=0, ddof=1) if len(results) > 1 else np.zeros(curves.shape[1])
    per_change: list[list[int]] = [[] for _ in change_points]
    false_alarms = 0
    for r in results:
        first, fa = attribute_detections([d[0] for d in r.detections], change_points, T)
        false_alarms += fa
        for i, slot in enumerate(first):
            if slot is not None:
                per_change[i].append(slot)
    detections = []
    for cp, slots in zip(change_points, per_change):
        m, s = _mean_std(slots)
        detections.append(ChangeDetection(int(cp), m, s, len(slots), len(results) - len(slots)))
    return PolicySummary(
        policy=name,
        trials=len(results),
        final_mean=mean,
        final_std=std,
        checkpoints=results[0].checkpoints.tolist(),
        curve_mean=curves.mean(axis=0).tolist(),
        curve_std=curve_std.tolist(),
        detections=detections,
        false_alarms=false_alarms,
        final_regrets=finals.tolist(),
    )


def _run_chunk(args: tuple[dict[str, Any], str, list[int]]) -> list[TrialResult]:
    cfg_dict, name, indices = args
    config = ExperimentConfig.from_dict(cfg_dict)
    spec = build_environment(config)
    return [run_trial(config, spec, i, name) for i in indices]


def resolve_workers(config: ExperimentConfig) -> int:
    env = os.environ.get("BENCH_WORKERS")
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise ValidationError(f"BENCH_WORKERS must be an integer, got {env!r}") from None
        if workers < 1:
            raise ValidationError("BENCH_WORKERS must be >= 1")
        return workers
    return config.workers


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentSummary:
    """Run every configured policy for ``config.trials`` trials and aggregate."""
    spec = build_environment(config)
    workers = resolve_workers(config) if workers is None else workers
    cfg_dict = config.to_dict()
    results: dict[str, list[TrialResult]] = {}
    indices = list(range(config.trials))
    for name in config.policies:
        if workers == 1:
            results[name] = [run_trial(config, spec, i, name) for i in indices]
            continue
        chunks = [indices[k::workers] for k in range(workers) if indices[k::workers]]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [(cfg_dict, name, c) for c in chunks])
            results[name] = [r for part in parts for r in part]
    summaries = {
        name: summarize(name, res, spec.change_points, spec.T) for name, res in results.items()
    }
    env_info = {
        "L": spec.L,
        "K": spec.K,
        "T": spec.T,
        "N": spec.N,
        "change_points": spec.change_points,
        "attractions": spec.attractions.tolist(),
    }
    if any(POLICIES[n].family == GLRT for n in config.policies):
        N = spec.N if config.n_segments is None else config.n_segments
        env_info["p"] = default_p(spec.T, N, spec.L, config.p_rule) if config.p is None else config.p
        env_info["delta"] = 1.0 / spec.T if config.delta is None else config.delta
    return ExperimentSummary(cfg_dict, env_info, package_version(), summaries)


# Output ----------------------------------------------------------------------


def _check_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=directory, prefix=".probe-"):
            pass
    except OSError as exc:
        raise OSError(f"output directory {directory} is not writable: {exc}") from exc


def emit_outputs(summary: ExperimentSummary, directory: str | Path, svg: bool = False) -> list[Path]:
    """Write ``regret_curve.csv``, ``detections.csv`` and ``summary.json``.

    ``summary.json`` is written last and atomically. With ``svg=True`` a
    regret plot is added when matplotlib is available.
    """
    directory = Path(directory)
    _check_writable(directory)
    written = []

    curve_path = directory / "regret_curve.csv"
    with curve_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "slot", "mean_cumulative_regret", "std"])
        for name, ps in summary.policies.items():
            for slot, m, s in zip(ps.checkpoints, ps.curve_mean, ps.curve_std):
                writer.writerow([name, slot, repr(m), repr(s)])
    written.append(curve_path)

    det_path = directory / "detections.csv"
    with det_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "change_point", "mean_detection", "std", "detected", "missed"])
        for name, ps in summary.policies.items():
            for d in ps.detections:
                writer.writerow([name, d.change_point, repr(d.mean), repr(d.std), d.detected, d.missed])
    written.append(det_path)

    if svg:
        plot = _plot_curves(summary, directory / "regret_curve.svg")
        if plot is not None:
            written.append(plot)

    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".summary-", suffix=".json")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary_path = directory / "summary.json"
    os.replace(tmp, summary_path)
    written.append(summary_path)
    return written


def _plot_curves(summary: ExperimentSummary, path: Path) -> Path | None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping %s", path.name)
        return None
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, ps in summary.policies.items():
        ax.plot(ps.checkpoints, ps.curve_mean, label=name)
    for cp in summary.environment.get("change_points", []):
        ax.axvline(cp, color="0.85", lw=0.8, zorder=0)
    ax.set_xlabel("time slot")
    ax.set_ylabel("expected cumulative regret")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
