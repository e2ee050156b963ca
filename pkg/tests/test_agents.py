"""Agent simulation tests: choice generation, trajectories, growth ranking."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ergodic_choice.agents import (
    TRIAL_SECONDS,
    WEEK_TRIALS,
    AgentConfig,
    ConditionPolicy,
    compare_growth,
    figure_cohort,
    simulate_choices,
    simulate_cohort_trajectories,
    simulate_trajectory,
)
from ergodic_choice.design import (
    PairKind,
    Side,
    build_gamble_space,
    build_stimulus_set,
    dominant_choice,
    make_schedule,
)
from ergodic_choice.dynamics import Dynamic, gamble_growth_rate
from ergodic_choice.records import Choice, validate_dataset
from ergodic_choice.utility import (
    Isoelastic,
    ProspectTheory,
    TimeOptimal,
    choice_probability,
    utility_difference,
)

MULT_SET = build_stimulus_set(Dynamic.MULTIPLICATIVE)
ADD_SET = build_stimulus_set(Dynamic.ADDITIVE)
MULT_SPACE = build_gamble_space(MULT_SET, seed=5)
ADD_SPACE = build_gamble_space(ADD_SET, seed=5)
MULT_SCHEDULE = make_schedule(MULT_SPACE, seed=9)
ADD_SCHEDULE = make_schedule(ADD_SPACE, seed=9)


class TestSimulateChoices:
    def test_deterministic_per_seed(self):
        agent = AgentConfig.uniform("a", Isoelastic(0.8), beta=1.5)
        x = simulate_choices(agent, MULT_SCHEDULE, seed=4)
        y = simulate_choices(agent, MULT_SCHEDULE, seed=4)
        z = simulate_choices(agent, MULT_SCHEDULE, seed=5)
        assert x == y
        assert x != z

    def test_zero_sensitivity_is_chance(self):
        agent = AgentConfig.uniform("a", TimeOptimal(), beta=0.0)
        ds = simulate_choices(agent, ADD_SCHEDULE, seed=2)
        left_rate = sum(t.choice is Choice.LEFT for t in ds.trials) / len(ds.trials)
        assert abs(left_rate - 0.5) < 0.09  # 3 binomial sd over 312 trials
        assert all(t.theta == 0.5 for t in ds.trials)

    def test_high_sensitivity_tracks_growth_argmax(self):
        agent = AgentConfig.uniform("a", TimeOptimal(), beta=1e3)
        ds = simulate_choices(agent, MULT_SCHEDULE, seed=3)
        for trial in ds.trials:
            pair = trial.pair()
            gap = gamble_growth_rate(pair.left) - gamble_growth_rate(pair.right)
            if abs(gap) < 1e-9:
                continue
            expected = Side.LEFT if gap > 0 else Side.RIGHT
            assert trial.choice.side is expected

    @pytest.mark.parametrize(
        "model",
        [
            TimeOptimal(),
            Isoelastic(0.5),
            ProspectTheory(alpha_gain=0.3, alpha_loss=0.9, loss_aversion=3.0),
        ],
        ids=["timeopt", "iso", "pt"],
    )
    def test_any_sharp_agent_nails_dominated_pairs(self, model):
        agent = AgentConfig.uniform("a", model, beta=1e3)
        ds = simulate_choices(agent, MULT_SCHEDULE, seed=3)
        for trial in ds.trials:
            if trial.kind is PairKind.NO_BRAINER:
                assert trial.choice.side is dominant_choice(trial.pair())

    def test_audit_fields_recompute(self):
        agent = AgentConfig.uniform("a", Isoelastic(1.2), beta=2.5)
        ds = simulate_choices(agent, MULT_SCHEDULE, seed=8)
        for trial in ds.trials[:40]:
            du = utility_difference(Isoelastic(1.2), 1000.0, trial.pair())
            assert trial.delta_u == pytest.approx(du, abs=1e-12)
            assert trial.theta == pytest.approx(choice_probability(du, 2.5), abs=1e-12)

    def test_passes_validation(self):
        agent = AgentConfig.uniform("a", TimeOptimal(), beta=1e6)
        ds = simulate_choices(agent, ADD_SCHEDULE, seed=1)
        report = validate_dataset(ds.trials)
        assert report.ok
        assert report.summaries[0].no_brainer_accuracy == 1.0

    def test_per_condition_policies(self):
        agent = AgentConfig(
            name="split",
            additive=ConditionPolicy(model=Isoelastic(0.0), beta=1e3),
            multiplicative=ConditionPolicy(model=Isoelastic(1.0), beta=0.0),
        )
        mult = simulate_choices(agent, MULT_SCHEDULE, seed=2)
        assert all(t.theta == 0.5 for t in mult.trials)
        add = simulate_choices(agent, ADD_SCHEDULE, seed=2)
        assert any(t.theta != 0.5 for t in add.trials)


class TestFigureCohort:
    def test_composition(self):
        cohort = figure_cohort()
        assert len(cohort) == 12
        names = [a.name for a in cohort]
        assert len(set(names)) == 12
        assert "time_optimal" in names
        assert "iso_eta0" in names and "iso_eta1" in names
        assert sum(n.startswith("pt_") for n in names) == 9


class TestSimulateTrajectory:
    def test_shape_and_times(self):
        agent = AgentConfig.uniform("a", TimeOptimal(), beta=1e3)
        path = simulate_trajectory(agent, Dynamic.MULTIPLICATIVE, 500, seed=0)
        assert len(path.wealth) == 501
        assert path.horizon == 500
        assert path.wealth[0] == 1000.0
        assert path.times_s[0] == 0.0
        assert path.times_s[-1] == pytest.approx(500 * TRIAL_SECONDS)

    def test_week_constant(self):
        assert WEEK_TRIALS == 63663
        assert WEEK_TRIALS == int(7 * 24 * 3600 / 9.5)

    def test_deterministic(self):
        agent = AgentConfig.uniform("a", Isoelastic(1.0), beta=1e3)
        a = simulate_trajectory(agent, Dynamic.MULTIPLICATIVE, 300, seed=7)
        b = simulate_trajectory(agent, Dynamic.MULTIPLICATIVE, 300, seed=7)
        assert np.array_equal(a.wealth, b.wealth)

    def test_growth_matches_policy_mixture_oracle(self):
        # law of large numbers: realized growth of the log-utility agent under
        # multiplicative dynamics approaches the exact drift of its policy
        agent = AgentConfig.uniform("a", Isoelastic(1.0), beta=1e3)
        pairs = build_gamble_space(MULT_SET, seed=0).core
        mean = 0.0
        second = 0.0
        for pair in pairs:
            theta = choice_probability(
                utility_difference(Isoelastic(1.0), 1000.0, pair), 1e3
            )
            for weight, gamble in ((theta, pair.left), (1.0 - theta, pair.right)):
                for outcome in gamble.outcomes:
                    p = weight * 0.5 / len(pairs)
                    mean += p * math.log(outcome.value)
                    second += p * math.log(outcome.value) ** 2
        sd = math.sqrt(second - mean**2)
        path = simulate_trajectory(agent, Dynamic.MULTIPLICATIVE, WEEK_TRIALS, seed=11)
        se = sd / math.sqrt(WEEK_TRIALS)
        assert abs(path.growth_per_trial() - mean) < 5 * se

    def test_additive_random_walk_goes_negative_and_flags(self):
        agent = AgentConfig.uniform("a", Isoelastic(0.0), beta=0.0)
        path = simulate_trajectory(agent, Dynamic.ADDITIVE, 5000, seed=1)
        assert path.went_nonpositive
        assert path.log_wealth is None

    def test_forced_decay_underflows_gracefully(self):
        # a space of loss-only gambles forces decay; once raw wealth
        # underflows the agent can no longer evaluate utility and the
        # documented random-choice fallback keeps the path total
        from ergodic_choice.design import GamblePair, GambleSpace
        from ergodic_choice.dynamics import Gamble

        losses = MULT_SET.losses
        pair = GamblePair(
            left=Gamble((losses[0], losses[1])),
            right=Gamble((losses[2], losses[3])),
            kind=PairKind.CORE,
        )
        space = GambleSpace(
            stimulus_set=MULT_SET, core=(pair,), no_brainers=(), seed=0
        )
        agent = AgentConfig.uniform(
            "a",
            ProspectTheory(alpha_gain=0.3, alpha_loss=0.3, loss_aversion=1.0),
            beta=1e3,
        )
        path = simulate_trajectory(
            agent, Dynamic.MULTIPLICATIVE, 3000, seed=2, space=space
        )
        assert np.all(np.isfinite(path.log_wealth))
        assert path.growth_per_trial() < -0.2
        assert path.wealth[-1] == 0.0  # underflowed representation, flagged by logs

    def test_fast_growth_overflows_gracefully(self):
        agent = AgentConfig.uniform("a", TimeOptimal(), beta=1e3)
        path = simulate_trajectory(agent, Dynamic.MULTIPLICATIVE, 10000, seed=3)
        assert np.all(np.isfinite(path.log_wealth))
        assert path.wealth[-1] == math.inf
        assert 0.0 < path.growth_per_trial() < 0.25

    def test_sequential_engine_agrees_with_vectorized_engine(self, monkeypatch):
        from ergodic_choice import agents as agents_module

        exact = AgentConfig.uniform("a", Isoelastic(1.0), beta=1e3)
        fast = simulate_trajectory(exact, Dynamic.MULTIPLICATIVE, 4000, seed=3)
        monkeypatch.setattr(
            agents_module, "_theta_wealth_invariant", lambda model, dynamic: False
        )
        slow = simulate_trajectory(exact, Dynamic.MULTIPLICATIVE, 4000, seed=3)
        # same choices, same outcomes; only summation order differs
        assert np.max(np.abs(fast.log_wealth - slow.log_wealth)) < 1e-9

    def test_rejects_bad_horizon_and_space_mismatch(self):
        agent = AgentConfig.uniform("a", TimeOptimal(), beta=1e3)
        with pytest.raises(ValueError):
            simulate_trajectory(agent, Dynamic.ADDITIVE, 0, seed=0)
        with pytest.raises(ValueError, match="space"):
            simulate_trajectory(
                agent, Dynamic.ADDITIVE, 10, seed=0, space=MULT_SPACE
            )


class TestCohortComparison:
    def test_common_random_numbers_share_pairs_and_coins(self):
        cohort = [
            AgentConfig.uniform("time_optimal", TimeOptimal(), beta=1e3),
            AgentConfig.uniform("clone", TimeOptimal(), beta=1e3),
        ]
        paths = simulate_cohort_trajectories(
            cohort, Dynamic.ADDITIVE, 5000, seed=4
        )
        comparison = compare_growth(paths, reference="time_optimal")
        assert comparison.reference_is_best
        # same policy, same shared draws: growth differs only by choice noise
        gap = abs(
            paths["clone"].growth_per_trial()
            - paths["time_optimal"].growth_per_trial()
        )
        assert gap < 5.0

    def test_time_optimal_not_beaten_in_either_dynamic(self):
        cohort = figure_cohort()
        for dynamic in (Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE):
            paths = simulate_cohort_trajectories(cohort, dynamic, 20000, seed=0)
            comparison = compare_growth(paths, reference="time_optimal")
            assert comparison.reference_is_best, (dynamic, comparison.beaten_by)

    def test_expectation_maximizer_lags_under_multiplicative(self):
        cohort = figure_cohort()
        paths = simulate_cohort_trajectories(
            cohort, Dynamic.MULTIPLICATIVE, 20000, seed=0
        )
        gap = (
            paths["time_optimal"].growth_per_trial()
            - paths["iso_eta0"].growth_per_trial()
        )
        assert gap > 0.005  # exact policy drifts differ by ~0.014 log per trial

    def test_loss_averse_agent_lags_under_additive(self):
        cohort = figure_cohort()
        paths = simulate_cohort_trajectories(cohort, Dynamic.ADDITIVE, 20000, seed=0)
        gap = (
            paths["time_optimal"].growth_per_trial()
            - paths["pt_lambda3_alpha0.3"].growth_per_trial()
        )
        assert gap > 5.0  # DKK per trial

    def test_unique_names_required(self):
        cohort = [
            AgentConfig.uniform("dup", TimeOptimal(), beta=1e3),
            AgentConfig.uniform("dup", Isoelastic(0.0), beta=1e3),
        ]
        with pytest.raises(ValueError, match="unique"):
            simulate_cohort_trajectories(cohort, Dynamic.ADDITIVE, 10, seed=0)

    def test_missing_reference_rejected(self):
        cohort = [AgentConfig.uniform("a", TimeOptimal(), beta=1e3)]
        paths = simulate_cohort_trajectories(cohort, Dynamic.ADDITIVE, 10, seed=0)
        with pytest.raises(ValueError, match="reference"):
            compare_growth(paths, reference="time_optimal")
