import csv
import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from balloon_mpc import harness
from balloon_mpc.dynamics import controllable_band, vertical_velocity
from balloon_mpc.fompc import FompcConfig
from balloon_mpc.harness import (AgentSpec, BenchmarkSummary, EpisodeConfig, EpisodeMetrics,
                                 ablation_specs, load_episode, mean_ci, read_trajectory_csv,
                                 reward_episode, run_benchmark, run_episode, run_episode_safe,
                                 sample_initial_state, save_episode, step_reward, substream,
                                 time_within_radius, write_trajectory_csv)

SHORT = EpisodeConfig(steps=30)
TINY_FOMPC = FompcConfig(horizon=12, replan_interval=6, num_inits=4, max_iters=3)


def test_twr_counting():
    assert time_within_radius(np.zeros(960), np.zeros(960), 50e3) == 1.0
    xs = np.where(np.arange(960) < 480, 10e3, 80e3)
    assert time_within_radius(xs, np.zeros(960), 50e3) == 0.5
    assert time_within_radius([50e3], [0.0], 50e3) == 1.0  # boundary counts as inside


def test_reward_examples():
    rows = [{"dist_km": 3.0, "gate": 0}] * 960
    assert reward_episode(rows) == 960.0
    assert step_reward(150.0, False) == pytest.approx(0.2)
    assert step_reward(10.0, True) == pytest.approx(0.95)


def test_substreams_independent():
    a = substream(5, "wind").random(4)
    assert np.array_equal(a, substream(5, "wind").random(4))
    assert not np.array_equal(a, substream(5, "noise").random(4))
    assert not np.array_equal(a, substream(6, "wind").random(4))


def test_initial_state_sampler():
    cfg = EpisodeConfig()
    lo, hi = controllable_band(cfg.params)
    margin = 0.2 * (hi - lo)
    for seed in range(30):
        s = sample_initial_state(seed, cfg.params, cfg)
        assert s == sample_initial_state(seed, cfg.params, cfg)
        assert math.hypot(s.x, s.y) <= 40e3
        assert lo + margin - 1e-9 <= s.l <= hi - margin + 1e-9
        assert abs(vertical_velocity(s, cfg.params)) < 0.05
        assert 0.0 <= s.t < 86400.0


def test_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(radius_km=0)
    with pytest.raises(ValueError):
        EpisodeConfig(band_fraction=1.5)
    with pytest.raises(ValueError):
        AgentSpec("nope")
    with pytest.raises(ValueError):
        AgentSpec("discretized-fompc", discretize="dither")


@pytest.mark.parametrize("agent", ["coast", "greedy-column", "pump"])
def test_episode_deterministic(agent):
    cfg = SHORT.with_seed(3)
    a, b = run_episode(agent, cfg), run_episode(agent, cfg)
    assert (a.twr, a.reward, a.violations) == (b.twr, b.reward, b.violations)
    assert a.trajectory == b.trajectory
    assert len(a.trajectory) == 30
    assert a.wind_hash == b.wind_hash


def test_fompc_episode_runs():
    spec = AgentSpec("fompc", TINY_FOMPC)
    m = run_episode(spec, EpisodeConfig(steps=12, seed=1))
    assert len(m.diagnostics) == 2
    assert 0.0 <= m.twr <= 1.0
    assert m.mean_step_time > 0
    assert all(abs(r["u_cmd"]) < 1 for r in m.trajectory)


def test_discretized_fompc_emits_levels():
    spec = AgentSpec("discretized-fompc", TINY_FOMPC)
    m = run_episode(spec, EpisodeConfig(steps=6, seed=1))
    assert {r["u_cmd"] for r in m.trajectory} <= {-1.0, 0.0, 1.0}


def test_same_world_for_every_agent():
    cfg = SHORT.with_seed(7)
    assert run_episode("coast", cfg).wind_hash == run_episode("pump", cfg).wind_hash
    assert run_episode("coast", cfg).wind_hash != run_episode("coast", cfg.with_seed(8)).wind_hash


def test_metrics_consistent_with_trajectory():
    m = run_episode("coast", SHORT.with_seed(2))
    rows = m.trajectory
    assert m.twr == np.mean([r["inside"] for r in rows])
    assert m.reward == reward_episode(rows)
    assert m.violations == sum(r["gate"] for r in rows)


def test_pump_drains_and_gates():
    cfg = EpisodeConfig(steps=480, seed=4)
    m = run_episode("pump", cfg)
    gated = [r for r in m.trajectory if r["gate"]]
    assert m.violations > 0
    assert all(r["u_applied"] == 0.0 for r in gated)
    assert min(r["E"] for r in m.trajectory) >= 0.0


def test_failed_episode_is_reported(monkeypatch):
    class Boom:
        def reset(self):
            pass

        def act(self, state, ctx):
            raise RuntimeError("planner exploded")

    monkeypatch.setattr(AgentSpec, "build", lambda self: Boom())
    m = run_episode_safe(AgentSpec("coast"), SHORT)
    assert m.failed and "planner exploded" in m.error
    summary = run_benchmark(["coast"], [0, 1], config=SHORT)
    assert len(summary.failures) == 2
    assert summary.agents["coast"]["twr"]["n"] == 0


def test_mean_ci():
    mean, ci = mean_ci([0.4])
    assert mean == 0.4 and math.isnan(ci)
    v = np.random.default_rng(0).random(50)
    mean, ci = mean_ci(v)
    assert ci == pytest.approx(1.96 * v.std(ddof=1) / math.sqrt(50))
    _, ci4 = mean_ci(np.tile(v, 4))
    assert ci4 < ci


def test_single_seed_summary():
    s = run_benchmark(["coast"], [5], config=SHORT)
    ep = s.episodes["coast"][0]
    assert s.stat("coast", "twr")[0] == ep.twr
    assert math.isnan(s.stat("coast", "twr")[1])


def test_trajectory_csv_round_trip(tmp_path):
    m = run_episode("greedy-column", SHORT.with_seed(1))
    path = tmp_path / "t.csv"
    write_trajectory_csv(path, m.trajectory)
    assert read_trajectory_csv(path) == m.trajectory


def test_episode_json_round_trip(tmp_path):
    spec = AgentSpec("coast")
    m = run_episode(spec, SHORT.with_seed(2))
    save_episode(tmp_path, spec, m, key="k1")
    back = load_episode(tmp_path, spec, 2, "k1")
    assert (back.twr, back.reward, back.violations, back.wind_hash) == (m.twr, m.reward, m.violations, m.wind_hash)
    assert load_episode(tmp_path, spec, 2, "other") is None
    assert load_episode(tmp_path, spec, 3, "k1") is None


def test_resume_reuses_saved_episodes(tmp_path, monkeypatch):
    first = run_benchmark(["coast"], range(3), config=SHORT, out_dir=tmp_path)
    monkeypatch.setattr(harness, "run_episode_safe", lambda *a: pytest.fail("should not rerun"))
    again = run_benchmark(["coast"], range(3), config=SHORT, out_dir=tmp_path, resume=True)
    assert again.agents == first.agents
    assert (tmp_path / "episodes" / "coast" / "seed_00002.csv").exists()


def test_summary_files(tmp_path):
    s = run_benchmark(["coast", "pump"], range(2), config=SHORT, out_dir=tmp_path)
    assert BenchmarkSummary.load(tmp_path / "summary.json").agents == s.agents
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert {r["metric"] for r in rows} == {"twr", "reward", "violations"}
    assert len(rows) == 6
    assert (tmp_path / "timing.csv").exists()
    first = (tmp_path / "summary.csv").read_bytes()
    run_benchmark(["coast", "pump"], range(2), config=SHORT, out_dir=tmp_path)
    assert (tmp_path / "summary.csv").read_bytes() == first


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        run_benchmark(["coast", "coast"], [0], config=SHORT)
    with pytest.raises(ValueError):
        run_benchmark(["coast"], [], config=SHORT)


def test_ablation_specs():
    specs = ablation_specs("inits")
    assert [s.fompc.num_inits for s in specs] == [1, 5, 25, 100, 250]
    assert specs[2].tag == "fompc[inits=25]"
    short = ablation_specs("horizon", [12])[0]
    assert short.fompc.horizon == 12 and short.fompc.replan_interval == 12
    assert ablation_specs("fidelity", ["PHI0"])[0].tag == "fompc[fidelity=phi0]"
    assert ablation_specs("wind-model", ["GP_COLUMN"])[0].tag == "fompc[wind-model=gp_column]"
    with pytest.raises(ValueError):
        ablation_specs("colour")


def test_metrics_dict_round_trip():
    m = EpisodeMetrics(3, "coast", 0.5, 100.0, 2, 0.01, wind_hash="abc")
    assert EpisodeMetrics.from_dict(m.to_dict()) == dataclasses.replace(m)
