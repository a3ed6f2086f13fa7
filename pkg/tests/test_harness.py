"""Tests for the experiment driver, CSV output and summaries."""

from unittest.mock import patch

import numpy as np
import pytest
from scipy.stats import norm

from rx_speedguard.config import ALGORITHMS, UnknownKeyError
from rx_speedguard.env import EnvState, SpeedLimitEnv, StepResult
from rx_speedguard.harness import (
    CSV_HEADER,
    Experiment,
    ExperimentError,
    InvariantViolationError,
    MetricsRecord,
    SeedStreams,
    actor_policy,
    benchmark,
    cost_rate,
    evaluate,
    final_window,
    mean_confidence,
    read_csv,
    run_experiment,
    run_name,
    summarize,
    sweep,
    train,
    write_csv,
)
from rx_speedguard.nn import NonFiniteError


class ThreeStepEnv:
    """Episodes of three steps with reward 1 and cost 1 on every step."""

    def horizon(self):
        return 3

    def reset(self, seed):
        state = EnvState(x=0.0, y=0.0, v=0.0, psi=0.0)
        return state, np.zeros(4)

    def step(self, state, action):
        nxt = EnvState(x=0.0, y=0.0, v=0.0, psi=0.0, step_index=state.step_index + 1)
        return nxt, StepResult(next_obs=np.zeros(4), reward=1.0, cost=1, done=nxt.step_index == 3)


class TestCostRateAndEvaluate:
    """Test metric helpers."""

    def test_cost_rate(self):
        """Test the fraction of unsafe training steps."""
        assert cost_rate(3, 4) == 0.75
        assert cost_rate(10, 10) == 1.0
        assert cost_rate(0, 5) == 0.0

    def test_cost_rate_needs_steps(self):
        """Test that a zero step count is rejected."""
        with pytest.raises(ValueError):
            cost_rate(0, 0)

    def test_evaluate_sums_per_episode(self):
        """Test undiscounted episode totals averaged over episodes."""
        reward, cost = evaluate(lambda obs, c: np.zeros(2), ThreeStepEnv(), 4, seed=0)
        assert reward == 3.0
        assert cost == 3.0

    def test_evaluate_is_seeded(self, make_config):
        """Test that the same evaluation seed reproduces the same result."""
        cfg = make_config()
        experiment = Experiment(cfg)
        policy = actor_policy(experiment.agent.core.actor)
        env = SpeedLimitEnv(cfg.env_config())
        assert evaluate(policy, env, 2, seed=9) == evaluate(policy, env, 2, seed=9)

    def test_evaluate_needs_episodes(self):
        """Test that zero episodes are rejected."""
        with pytest.raises(ValueError):
            evaluate(lambda obs, c: np.zeros(2), ThreeStepEnv(), 0, seed=0)


class TestSeedStreams:
    """Test seed derivation."""

    def test_streams_are_reproducible(self):
        """Test that the same root seed gives the same streams."""
        a, b = SeedStreams.from_seed(3), SeedStreams.from_seed(3)
        assert a.explore.random() == b.explore.random()
        assert a.eval_seed(100) == b.eval_seed(100)

    def test_eval_seed_depends_on_step(self):
        """Test distinct evaluation seeds per evaluation point."""
        streams = SeedStreams.from_seed(0)
        assert streams.eval_seed(0) != streams.eval_seed(5000)


class TestExperiment:
    """Test short training runs."""

    def test_record_count_and_steps(self, make_config):
        """Test one record at step 0 and one per evaluation interval."""
        records = run_experiment(make_config(total_steps=120, eval_interval=40))
        assert len(records) == 1 + 120 // 40
        assert [r.step for r in records] == [0, 40, 80, 120]
        assert records[0].train_cost_rate == 0.0
        assert all(0.0 <= r.train_cost_rate <= 1.0 for r in records)
        assert all(r.wall_seconds == 0.0 for r in records)

    def test_identical_configs_write_identical_csvs(self, make_config, tmp_path):
        """Test byte-identical output for identical configurations."""
        cfg = make_config("epo")
        first, _ = train(cfg, tmp_path / "a")
        second, _ = train(cfg, tmp_path / "b")
        assert first.read_bytes() == second.read_bytes()

    def test_seeds_differ(self, make_config):
        """Test that a different root seed changes the run."""
        a = run_experiment(make_config(seed=0))
        b = run_experiment(make_config(seed=1))
        assert a != b

    def test_zero_penalty_matches_td3(self, make_config):
        """Test that EPO with kappa = 0 reproduces TD3 exactly."""
        td3 = run_experiment(make_config("td3"))
        epo = run_experiment(make_config("epo", penalty_factor=0.0))
        assert td3 == epo

    def test_evaluation_does_not_disturb_training(self, make_config):
        """Test that the number of evaluation episodes leaves training untouched."""
        one = run_experiment(make_config(eval_episodes=1))
        two = run_experiment(make_config(eval_episodes=2))
        assert [r.train_cost_rate for r in one] == [r.train_cost_rate for r in two]

    @pytest.mark.integration
    @pytest.mark.parametrize("algorithm", ALGORITHMS)
    def test_every_algorithm_runs(self, make_config, algorithm):
        """Test a short run of every algorithm."""
        experiment = Experiment(make_config(algorithm))
        records = experiment.run()
        assert len(records) == 3
        assert all(np.isfinite(r.eval_ep_reward) for r in records)
        info = experiment.diagnostics()
        assert info["updates"] > 0
        assert info["episodes"] == 2.0

    def test_component_failure_names_step(self, make_config):
        """Test that failures inside an update are reported with their step."""
        experiment = Experiment(make_config(batch_size=8))
        with patch.object(experiment.agent, "update", side_effect=NonFiniteError("bad gradient")):
            with pytest.raises(ExperimentError) as excinfo:
                experiment.run()
        assert excinfo.value.step == 7
        assert "step 7" in str(excinfo.value)
        assert "bad gradient" in str(excinfo.value)

    def test_invariant_breach_stops_run(self, make_config):
        """Test that a breached invariant raises at the evaluation point."""
        experiment = Experiment(make_config("lagrangian"))
        with patch.object(experiment.agent, "invariant_breaches", return_value=["negative multiplier"]):
            with pytest.raises(InvariantViolationError, match="step 0: negative multiplier"):
                experiment.run()

    def test_buffer_capped_by_run_length(self, make_config):
        """Test that short runs do not allocate the full buffer capacity."""
        experiment = Experiment(make_config(total_steps=120, buffer_capacity=1_000_000))
        assert experiment.buffer.capacity == 120


class TestCsv:
    """Test the CSV format."""

    def test_header_and_round_trip(self, tmp_path):
        """Test the header line and reading written records back."""
        records = [MetricsRecord(0, 1.5, 0.0, 0.0, 0.0), MetricsRecord(10, 2.25, 3.0, 0.1, 0.0)]
        path = write_csv(records, tmp_path / "run.csv")
        assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(CSV_HEADER)
        assert read_csv(path) == records

    def test_bad_header(self, tmp_path):
        """Test that foreign CSV files are rejected."""
        path = tmp_path / "other.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(ValueError, match="unexpected header"):
            read_csv(path)

    def test_run_names(self, make_config):
        """Test file stems for plain runs and sweeps."""
        cfg = make_config("epo", seed=2, penalty_factor=10.0)
        assert run_name(cfg) == "epo_seed2"
        assert run_name(cfg, "penalty_factor") == "epo_penalty_factor-10.0_seed2"


class TestSweepAndBenchmark:
    """Test multi-run drivers."""

    def test_sweep_writes_one_csv_per_value(self, make_config, tmp_path):
        """Test suffixed output files for a penalty-factor sweep."""
        paths = sweep(make_config("epo"), "penalty_factor", ["0", "5"], tmp_path)
        assert [p.name for p in paths] == [
            "epo_penalty_factor-0.0_seed0.csv",
            "epo_penalty_factor-5.0_seed0.csv",
        ]
        assert all(p.exists() for p in paths)

    def test_sweep_unknown_key(self, make_config, tmp_path):
        """Test that sweeping a non-existent key fails before any run."""
        with pytest.raises(UnknownKeyError):
            sweep(make_config(), "learning_speed", ["1"], tmp_path)
        assert list(tmp_path.iterdir()) == []

    def test_benchmark_cost_limits(self, make_config, tmp_path):
        """Test that default cost limits follow each algorithm."""
        with patch("rx_speedguard.harness.run_many", return_value=[]) as run_many:
            benchmark(make_config("epo"), ["td3", "safety_layer"], [0, 1], tmp_path)
        configs = run_many.call_args[0][0]
        assert [(c.algorithm, c.seed, c.cost_limit) for c in configs] == [
            ("td3", 0, 0.1),
            ("td3", 1, 0.1),
            ("safety_layer", 0, 0.02),
            ("safety_layer", 1, 0.02),
        ]

    def test_benchmark_keeps_custom_cost_limit(self, make_config, tmp_path):
        """Test that an explicit cost limit is applied to every algorithm."""
        with patch("rx_speedguard.harness.run_many", return_value=[]) as run_many:
            benchmark(make_config("epo", cost_limit=0.3), ["lagrangian", "safety_layer"], [0], tmp_path)
        assert {c.cost_limit for c in run_many.call_args[0][0]} == {0.3}

    @pytest.mark.slow
    def test_parallel_matches_serial(self, make_config, tmp_path):
        """Test that worker processes produce the same files as a serial run."""
        base = make_config("epo")
        serial = sweep(base, "seed", ["0", "1"], tmp_path / "serial", jobs=1)
        parallel = sweep(base, "seed", ["0", "1"], tmp_path / "parallel", jobs=2)
        for a, b in zip(serial, parallel):
            assert a.read_bytes() == b.read_bytes()


class TestSummary:
    """Test final-window summaries."""

    def test_final_window(self):
        """Test averaging over the last records only."""
        records = [MetricsRecord(i, float(i), 0.0, 0.5, 0.0) for i in range(10)]
        reward, cost, rate = final_window(records, window=2)
        assert reward == 8.5 and cost == 0.0 and rate == 0.5

    def test_final_window_must_be_positive(self):
        """Test that an empty window is refused."""
        records = [MetricsRecord(0, 1.0, 0.0, 0.0, 0.0)]
        with pytest.raises(ValueError, match="window"):
            final_window(records, window=0)

    def test_mean_confidence(self):
        """Test the normal 95% half-width and the single-run case."""
        mean, half = mean_confidence([1.0, 3.0])
        assert mean == 2.0
        assert half == pytest.approx(norm.ppf(0.975) * 1.0)
        assert mean_confidence([4.0]) == (4.0, 0.0)

    def test_summarize_groups_seeds(self, tmp_path):
        """Test that seeds of one configuration form one row."""
        for seed, reward in ((0, 1.0), (1, 3.0)):
            write_csv([MetricsRecord(0, reward, 0.0, 0.0, 0.0)], tmp_path / f"epo_seed{seed}.csv")
        write_csv([MetricsRecord(0, 5.0, 1.0, 0.2, 0.0)], tmp_path / "td3_seed0.csv")
        rows = {row.name: row for row in summarize(sorted(tmp_path.glob("*.csv")))}
        assert set(rows) == {"epo", "td3"}
        assert rows["epo"].runs == 2
        assert rows["epo"].reward[0] == 2.0
        assert rows["td3"].cost == (1.0, 0.0)
