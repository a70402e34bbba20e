import json
import os
import stat

import numpy as np
import pytest

from glrt_cascade.environment import make_hard_instance, simulate_click, write_segments_csv
from glrt_cascade.errors import ValidationError
from glrt_cascade.harness import (
    ExperimentConfig,
    ExperimentSummary,
    attribute_detections,
    build_environment,
    checkpoint_slots,
    emit_outputs,
    policy_for,
    resolve_workers,
    run_experiment,
    run_trial,
    summarize,
    trial_rng,
)


def small_config(**kw):
    base = dict(env="hard", L=5, K=2, N=3, T=900, trials=4, checkpoint_every=50, p=0.05)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.trials == 100 and cfg.T == 25000 and len(cfg.policies) == 8

    def test_policy_string(self):
        assert ExperimentConfig(policies="ucb1, glrt-ucb").policies == ("ucb1", "glrt-ucb")

    @pytest.mark.parametrize(
        "kw",
        [
            dict(trials=0),
            dict(delta=1.0),
            dict(p=0.0),
            dict(env="yahoo"),
            dict(env="csv"),
            dict(policies=("ucb1", "bogus")),
            dict(checkpoint_every=0),
            dict(workers=0),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValidationError):
            ExperimentConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(ValidationError, match="unknown config keys"):
            ExperimentConfig.from_dict({"trails": 3})

    def test_key_value_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("# small run\nenv = hard\nT=900\np = 0.05  # forced\ndelta=none\npolicies=ucb1,swucb\nfull_trajectory=yes\n")
        cfg = ExperimentConfig.from_file(path)
        assert cfg.env == "hard" and cfg.T == 900 and cfg.p == 0.05
        assert cfg.delta is None and cfg.policies == ("ucb1", "swucb") and cfg.full_trajectory

    def test_json_file_round_trip(self, tmp_path):
        cfg = small_config(policies=("klucb",))
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_file(path) == cfg

    def test_bad_files(self, tmp_path):
        with pytest.raises(ValidationError):
            ExperimentConfig.from_file(tmp_path / "missing.cfg")
        bad = tmp_path / "bad.cfg"
        bad.write_text("T 900\n")
        with pytest.raises(ValidationError, match=":1:"):
            ExperimentConfig.from_file(bad)
        bad.write_text("{not json")
        with pytest.raises(ValidationError, match="invalid JSON"):
            ExperimentConfig.from_file(bad)

    def test_worker_env(self, monkeypatch):
        cfg = small_config(workers=3)
        monkeypatch.delenv("BENCH_WORKERS", raising=False)
        assert resolve_workers(cfg) == 3
        monkeypatch.setenv("BENCH_WORKERS", "2")
        assert resolve_workers(cfg) == 2
        monkeypatch.setenv("BENCH_WORKERS", "many")
        with pytest.raises(ValidationError):
            resolve_workers(cfg)

    def test_csv_environment(self, tmp_path):
        spec = make_hard_instance(4, 2, 2, 200, seed=1)
        path = write_segments_csv(spec, tmp_path / "env.csv")
        cfg = ExperimentConfig(env="csv", csv_path=str(path), K=2)
        assert np.array_equal(build_environment(cfg).attractions, spec.attractions)


class TestTrials:
    def test_checkpoints(self):
        assert checkpoint_slots(250, 100).tolist() == [100, 200, 250]
        assert checkpoint_slots(200, 100).tolist() == [100, 200]
        assert checkpoint_slots(5, 100).tolist() == [5]

    def test_seeds_are_independent_of_order(self):
        a = trial_rng(7, 3).random(5)
        trial_rng(7, 0).random(100)
        assert np.array_equal(a, trial_rng(7, 3).random(5))
        assert not np.array_equal(a, trial_rng(7, 4).random(5))

    @pytest.mark.parametrize("name", ["glrt-klucb", "swucb", "oracle-ucb1", "ducb"])
    def test_compiled_loop_matches_step_api(self, name):
        cfg = small_config(full_trajectory=True)
        spec = build_environment(cfg)
        result = run_trial(cfg, spec, 2, name)
        pol = policy_for(cfg, spec, name)
        rng = trial_rng(cfg.base_seed, 2)
        cum, curve = 0.0, []
        for t in range(1, spec.T + 1):
            items = pol.select(t, rng)
            fb, _, _ = simulate_click(spec.attraction_at(t), items, rng)
            cum += spec.step_regret(t, items)
            curve.append(cum)
            pol.update(t, items, fb)
        assert np.allclose(result.cumulative_regret, np.maximum.accumulate(np.maximum(curve, 0)), atol=1e-9)
        assert result.detections == pol.restarts
        assert result.checkpoints.size == spec.T

    def test_regret_nondecreasing(self):
        cfg = small_config()
        spec = build_environment(cfg)
        r = run_trial(cfg, spec, 0, "ucb1").cumulative_regret
        assert np.all(np.diff(r) >= 0) and r[0] >= 0


class TestAggregation:
    def test_attribution(self):
        first, fa = attribute_detections([50, 120, 130, 260, 10], [100, 200], 300)
        assert first == [120, 260] and fa == 3  # 10 and 50 precede any change, 130 repeats
        first, fa = attribute_detections([], [100], 300)
        assert first == [None] and fa == 0

    def test_summary_statistics(self):
        cfg = small_config(policies=("glrt-ucb",))
        spec = build_environment(cfg)
        results = [run_trial(cfg, spec, i, "glrt-ucb") for i in range(4)]
        ps = summarize("glrt-ucb", results[::-1], spec.change_points, spec.T)
        finals = np.array([r.final_regret for r in results])
        assert ps.final_mean == pytest.approx(finals.mean())
        assert ps.final_std == pytest.approx(finals.std(ddof=1))
        assert ps.final_regrets == finals.tolist()
        assert len(ps.detections) == spec.N - 1
        for d in ps.detections:
            assert d.detected + d.missed == 4

    def test_single_trial_warns(self, caplog):
        cfg = small_config(trials=1, policies=("ucb1",))
        summary = run_experiment(cfg)
        assert summary.policies["ucb1"].final_std == 0.0
        assert "single trial" in caplog.text


class TestOutputs:
    def test_files_and_round_trip(self, tmp_path):
        cfg = small_config(policies=("ucb1", "glrt-ucb"))
        summary = run_experiment(cfg)
        paths = emit_outputs(summary, tmp_path / "out")
        assert [p.name for p in paths] == ["regret_curve.csv", "detections.csv", "summary.json"]
        data = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert data["environment"]["p"] == 0.05
        back = ExperimentSummary.from_dict(data)
        assert back.to_dict() == json.loads(json.dumps(summary.to_dict()))
        rows = (tmp_path / "out" / "regret_curve.csv").read_text().splitlines()
        assert rows[0] == "policy,slot,mean_cumulative_regret,std"
        assert len(rows) == 1 + 2 * len(checkpoint_slots(cfg.T, cfg.checkpoint_every))
        assert not [p for p in os.listdir(tmp_path / "out") if p.startswith(".")]

    @pytest.mark.skipif(hasattr(os, "geteuid") and os.geteuid() == 0, reason="root ignores permissions")
    def test_unwritable_directory(self, tmp_path):
        target = tmp_path / "locked"
        target.mkdir()
        target.chmod(stat.S_IRUSR | stat.S_IXUSR)
        with pytest.raises(OSError, match="not writable"):
            emit_outputs(run_experiment(small_config(trials=2, policies=("ucb1",))), target)

    def test_output_path_is_a_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="not writable"):
            emit_outputs(run_experiment(small_config(trials=2, policies=("ucb1",))), blocker)
