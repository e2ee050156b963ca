"""Tests for latent-mixture model selection and group-level comparison.

Oracles: the Dirichlet random-effects fit is checked against an
importance-sampling estimate of the exact posterior mean; sampler
recovery is checked on cohorts synthesized from known generating models.
"""

import math

import numpy as np
import pytest

from ergodic_choice.agents import AgentConfig, simulate_choices
from ergodic_choice.design import build_gamble_space, build_stimulus_set, make_schedule
from ergodic_choice.dynamics import Dynamic
from ergodic_choice.mcmc import SamplerConfig
from ergodic_choice.mixture import (
    MODEL_NAMES,
    MixtureSpec,
    bayesian_omnibus_risk,
    compare_models,
    estimated_frequencies,
    heatmap_rows,
    protected_exceedance,
    run_latent_mixture,
)
from ergodic_choice.records import SubjectDataset
from ergodic_choice.utility import Isoelastic, ProspectTheory, TimeOptimal


def schedule_for(dynamic: Dynamic, seed: int = 0):
    stimuli = build_stimulus_set(dynamic)
    space = build_gamble_space(stimuli, seed=0)
    return make_schedule(space, seed=seed)


def both_conditions(name, model, beta, seed, n_trials=150):
    out = []
    for k, dynamic in enumerate((Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE)):
        agent = AgentConfig.uniform(name, model, beta)
        ds = simulate_choices(agent, schedule_for(dynamic, seed=(seed + k) % 5), seed=seed * 2 + k)
        if n_trials is not None:
            ds = SubjectDataset(
                subject=ds.subject,
                condition=ds.condition,
                wealth=ds.wealth,
                trials=ds.trials[:n_trials],
            )
        out.append(ds)
    return out


def ghost_subject(name):
    return [
        SubjectDataset(subject=name, condition=c, wealth=1000.0, trials=())
        for c in (Dynamic.ADDITIVE, Dynamic.MULTIPLICATIVE)
    ]


def mc_frequency_oracle(probs, n=400_000, seed=0):
    """Importance sampling of the exact Dirichlet random-effects posterior."""
    rng = np.random.default_rng(seed)
    r = rng.dirichlet(np.ones(3), size=n)
    w = np.prod(r @ probs.T, axis=1)
    w = w / w.sum()
    return w @ r


class TestEstimatedFrequencies:
    def test_uniform_rows_give_exact_thirds(self):
        mean, sd = estimated_frequencies(np.full((9, 3), 1.0 / 3.0))
        assert np.allclose(mean, 1.0 / 3.0, atol=1e-12)
        assert np.allclose(sd, sd[0])

    def test_unanimous_cohort_concentrates(self):
        hard = np.tile([1.0, 0.0, 0.0], (60, 1))
        mean, _ = estimated_frequencies(hard)
        assert mean[0] == pytest.approx(1.0, abs=0.05)
        assert mean[1] < 0.05 and mean[2] < 0.05

    def test_unanimous_small_cohort_majority(self):
        hard = np.tile([1.0, 0.0, 0.0], (9, 1))
        mean, sd = estimated_frequencies(hard)
        # posterior mean with a uniform Dirichlet prior: (1 + 9) / (3 + 9)
        assert mean[0] == pytest.approx(10.0 / 12.0, abs=1e-9)
        assert np.all(sd > 0)

    @pytest.mark.parametrize("trial", range(6))
    def test_matches_monte_carlo_oracle(self, trial):
        rng = np.random.default_rng(123 + trial)
        probs = rng.dirichlet(np.ones(3) * 0.8, size=9)
        mean, _ = estimated_frequencies(probs)
        oracle = mc_frequency_oracle(probs, seed=trial)
        assert float(np.max(np.abs(mean - oracle))) < 0.01

    def test_concentrated_matches_oracle(self):
        probs = np.tile([0.96, 0.03, 0.01], (12, 1))
        mean, _ = estimated_frequencies(probs)
        oracle = mc_frequency_oracle(probs, seed=9)
        assert float(np.max(np.abs(mean - oracle))) < 0.01

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        probs = rng.dirichlet(np.ones(3), size=8)
        perm = [2, 0, 1]
        mean_a, sd_a = estimated_frequencies(probs)
        mean_b, sd_b = estimated_frequencies(probs[:, perm])
        assert np.allclose(mean_b, mean_a[perm], atol=1e-10)
        assert np.allclose(sd_b, sd_a[perm], atol=1e-10)

    def test_invalid_simplex_rejected(self):
        with pytest.raises(ValueError, match="simplex"):
            estimated_frequencies(np.array([[0.5, 0.4, 0.3]]))
        with pytest.raises(ValueError, match="three columns"):
            estimated_frequencies(np.array([[0.5, 0.5]]))


class TestProtectedExceedance:
    def test_symmetric_inputs_uniform(self):
        pxp = protected_exceedance(np.full((9, 3), 1.0 / 3.0), seed=1)
        assert np.allclose(pxp, 1.0 / 3.0, atol=0.01)

    def test_dominant_model_exceeds_95(self):
        hard = np.tile([0.98, 0.01, 0.01], (9, 1))
        pxp = protected_exceedance(hard, seed=2)
        assert pxp[0] > 0.95

    def test_sums_to_one(self):
        rng = np.random.default_rng(11)
        probs = rng.dirichlet(np.ones(3), size=7)
        pxp = protected_exceedance(probs, seed=3)
        assert float(np.sum(pxp)) == pytest.approx(1.0, abs=1e-6)

    def test_relabeling_equivariance(self):
        rng = np.random.default_rng(13)
        probs = rng.dirichlet(np.ones(3) * 0.6, size=10)
        perm = [1, 2, 0]
        a = protected_exceedance(probs, seed=4)
        b = protected_exceedance(probs[:, perm], seed=4)
        assert np.allclose(b, a[perm], atol=0.01)

    def test_forced_bor_one_is_uniform(self):
        hard = np.tile([0.98, 0.01, 0.01], (9, 1))
        pxp = protected_exceedance(hard, seed=5, force_bor=1.0)
        assert np.allclose(pxp, 1.0 / 3.0, atol=1e-12)

    def test_forced_bor_zero_is_raw_exceedance(self):
        rng = np.random.default_rng(17)
        probs = rng.dirichlet(np.ones(3), size=9)
        raw = compare_models(probs, seed=6).exceedance
        pxp = protected_exceedance(probs, seed=6, force_bor=0.0)
        assert np.allclose(pxp, raw, atol=1e-12)

    def test_bad_forced_bor_rejected(self):
        with pytest.raises(ValueError, match="probability"):
            protected_exceedance(np.full((3, 3), 1.0 / 3.0), force_bor=1.5)


class TestBayesianOmnibusRisk:
    def test_uninformative_rows_give_even_odds(self):
        assert bayesian_omnibus_risk(np.full((9, 3), 1.0 / 3.0)) == pytest.approx(0.5, abs=1e-9)

    def test_unanimous_cohort_rejects_null(self):
        hard = np.tile([0.999, 0.0005, 0.0005], (9, 1))
        assert bayesian_omnibus_risk(hard) < 0.01

    def test_bounded(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            probs = rng.dirichlet(np.ones(3), size=6)
            bor = bayesian_omnibus_risk(probs)
            assert 0.0 <= bor <= 1.0


class TestCompareModels:
    def test_consistency(self):
        rng = np.random.default_rng(29)
        probs = rng.dirichlet(np.ones(3) * 0.7, size=9)
        result = compare_models(probs, seed=7)
        assert np.allclose(
            result.pxp,
            result.exceedance * (1.0 - result.bor) + result.bor / 3.0,
            atol=1e-12,
        )
        assert float(np.sum(result.frequencies)) == pytest.approx(1.0, abs=1e-9)
        assert float(np.sum(result.pxp)) == pytest.approx(1.0, abs=1e-6)

    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError, match="simplex"):
            compare_models(np.array([[0.7, 0.7, -0.4]]))


@pytest.fixture(scope="module")
def timeopt_fit():
    datasets = []
    for i in range(9):
        datasets += both_conditions(f"t{i}", TimeOptimal(), beta=2.0, seed=300 + i)
    config = SamplerConfig(chains=2, samples_per_chain=800, burn_in=500, seed=17)
    return run_latent_mixture(datasets, config), datasets


@pytest.fixture(scope="module")
def mixed_fit():
    datasets = []
    for i, eta in enumerate((0.3, 0.7, 1.3)):
        datasets += both_conditions(f"iso{i}", Isoelastic(eta), beta=2.0, seed=400 + i)
    for i, (a, lam) in enumerate([(0.4, 1.5), (0.6, 2.0), (0.8, 3.0)]):
        model = ProspectTheory(alpha_gain=a, alpha_loss=a, loss_aversion=lam)
        datasets += both_conditions(f"pt{i}", model, beta=2.0, seed=500 + i)
    for i in range(3):
        datasets += both_conditions(f"t{i}", TimeOptimal(), beta=2.0, seed=600 + i)
    config = SamplerConfig(chains=2, samples_per_chain=800, burn_in=500, seed=19)
    return run_latent_mixture(datasets, config), datasets


class TestMixtureSampler:
    def test_single_model_cohort_recovered(self, timeopt_fit):
        result, _ = timeopt_fit
        correct = sum(
            1 for s in result.subjects if result.modal_model(s) == "time_optimal"
        )
        assert correct >= 8

    def test_probabilities_on_simplex(self, timeopt_fit):
        result, _ = timeopt_fit
        assert result.subject_probs.shape == (9, 3)
        assert np.all(result.subject_probs >= 0)
        assert np.allclose(result.subject_probs.sum(axis=1), 1.0, atol=1e-12)

    def test_pxp_flags_dominant_model(self, timeopt_fit):
        result, _ = timeopt_fit
        pxp = protected_exceedance(result.subject_probs, seed=8)
        assert pxp[MODEL_NAMES.index("time_optimal")] > 0.95

    def test_seed_agreement_within_tolerance(self, timeopt_fit):
        result, datasets = timeopt_fit
        config = SamplerConfig(chains=2, samples_per_chain=800, burn_in=500, seed=23)
        other = run_latent_mixture(datasets, config)
        assert float(np.max(np.abs(other.subject_probs - result.subject_probs))) <= 0.05

    def test_mixed_cohort_modal_models(self, mixed_fit):
        result, _ = mixed_fit
        truth = {}
        for s in result.subjects:
            if s.startswith("iso"):
                truth[s] = "isoelastic"
            elif s.startswith("pt"):
                truth[s] = "prospect_theory"
            else:
                truth[s] = "time_optimal"
        correct = sum(1 for s in result.subjects if result.modal_model(s) == truth[s])
        assert correct >= 7

    def test_mixed_cohort_frequencies_near_thirds(self, mixed_fit):
        result, _ = mixed_fit
        mean, _ = estimated_frequencies(result.subject_probs)
        assert np.all(np.abs(mean - 1.0 / 3.0) < 0.15)

    def test_mixed_cohort_no_dominant_model(self, mixed_fit):
        result, _ = mixed_fit
        pxp = protected_exceedance(result.subject_probs, seed=9)
        assert float(np.max(pxp)) < 0.9

    def test_acceptance_recorded_per_block(self, timeopt_fit):
        result, _ = timeopt_fit
        for key in ("eta_t_additive", "eta_iso", "ln_a_gain", "ln_lambda",
                    "ln_beta_multiplicative", "mu_eta", "sigma_lambda"):
            assert key in result.acceptance
            rates = result.acceptance[key]
            assert rates.shape == (2,)
            for rate in rates:
                assert math.isnan(rate) or 0.0 <= rate <= 1.0

    def test_heatmap_rows(self, timeopt_fit):
        result, _ = timeopt_fit
        rows = heatmap_rows(result)
        assert len(rows) == 9
        assert set(rows[0]) == {"subject", *MODEL_NAMES}
        assert rows[0]["subject"] == result.subjects[0]


class TestZeroTrialSubjects:
    def test_prior_model_probabilities(self):
        datasets = ghost_subject("g1") + ghost_subject("g2")
        config = SamplerConfig(chains=2, samples_per_chain=1_000, burn_in=500, seed=31)
        result = run_latent_mixture(datasets, config)
        assert np.all(np.abs(result.subject_probs - 1.0 / 3.0) < 0.05)


class TestMixtureDeterminism:
    def test_same_seed_same_draws(self):
        datasets = both_conditions("a", Isoelastic(0.5), beta=2.0, seed=700, n_trials=40)
        datasets += both_conditions("b", TimeOptimal(), beta=2.0, seed=701, n_trials=40)
        config = SamplerConfig(chains=1, samples_per_chain=150, burn_in=500, seed=37)
        first = run_latent_mixture(datasets, config)
        second = run_latent_mixture(datasets, config)
        assert np.array_equal(first.z_draws, second.z_draws)

    def test_lambda_truncation_switch_runs(self):
        datasets = both_conditions("a", ProspectTheory(0.6, 0.6, 2.0), beta=2.0, seed=702, n_trials=40)
        config = SamplerConfig(chains=1, samples_per_chain=100, burn_in=500, seed=41)
        result = run_latent_mixture(datasets, config, spec=MixtureSpec(truncate_lambda=False))
        assert result.subject_probs.shape == (1, 3)


class TestInputValidation:
    def test_missing_condition_rejected(self):
        only_add = both_conditions("a", Isoelastic(0.5), beta=2.0, seed=703, n_trials=20)[:1]
        with pytest.raises(ValueError, match="lacks condition"):
            run_latent_mixture(only_add, SamplerConfig(chains=1, samples_per_chain=10, burn_in=500, seed=1))

    def test_duplicate_condition_rejected(self):
        pair = both_conditions("a", Isoelastic(0.5), beta=2.0, seed=704, n_trials=20)
        with pytest.raises(ValueError, match="twice"):
            run_latent_mixture(
                pair + pair[:1],
                SamplerConfig(chains=1, samples_per_chain=10, burn_in=500, seed=1),
            )
