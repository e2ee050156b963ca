"""Hierarchical Bayesian estimation of risk attitudes from choice data.

The model, fit separately per condition: each subject i has a risk-aversion
index eta_i and a log sensitivity ln beta_i. Choices are Bernoulli with
probability expit(beta_i * delta_u), where delta_u is the isoelastic
expected-utility difference between the pair's gambles at the subject's
frozen session wealth. Population structure is normal on eta_i and on
ln beta_i, with uniform hyperpriors:

    mu_eta ~ U(-2.5, 2.5)      sigma_eta ~ U(0, 1.6]
    mu_beta ~ U(-2.3, 3.4)     sigma_beta ~ U[0.01, 1.6]

Sampling is Metropolis-within-Gibbs, written from scratch on numpy:
per-subject (eta, ln beta) Gaussian random-walk updates vectorized across
subjects, scalar random-walk updates for the four hyperparameters rejected
outside their supports, proposal scales tuned to a 20-50% acceptance rate
during burn-in and frozen afterwards. Chains run sequentially, each on its
own counter-derived seed stream.

Because wealth is frozen within a session, the isoelastic utility
difference reduces to sum_k s_k * (w + dx_k)^(1-eta) / (1-eta) over the
four outcomes of a pair (signs s_k = +-0.5); the w^(1-eta) terms cancel.
At eta = 1 the limit is the log form. Only left/right choices contribute
likelihood; timeouts carry no choice information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.special import expit

from .dynamics import Dynamic, wealth_increment
from .records import Choice, SubjectDataset, stimulus_set_for

MU_ETA_SUPPORT = (-2.5, 2.5)
SIGMA_ETA_SUPPORT = (0.0, 1.6)
MU_BETA_SUPPORT = (-2.3, 3.4)
SIGMA_BETA_SUPPORT = (0.01, 1.6)
INIT_ETA_RANGE = (-0.5, 1.5)
INIT_LN_BETA_RANGE = (-2.3, 3.4)
THETA_FLOOR = 1e-12
MAX_REINITS = 100

_SIGNS = np.array([0.5, 0.5, -0.5, -0.5])


@dataclass(frozen=True)
class ProposalScales:
    """Initial random-walk standard deviations per parameter class."""

    eta: float = 0.3
    ln_beta: float = 0.4
    mu_eta: float = 0.15
    sigma_eta: float = 0.15
    mu_beta: float = 0.2
    sigma_beta: float = 0.2
    shift_eta: float = 0.05
    scale_eta: float = 0.3
    shift_beta: float = 0.1
    scale_beta: float = 0.3
    ridge: float = 0.05
    ridge_subj: float = 0.1
    spread: float = 0.2
    spread_beta: float = 0.2


@dataclass(frozen=True)
class SamplerConfig:
    """Chain layout and tuning knobs.

    Defaults follow the estimation setup: 10 chains, 10^4 retained draws
    per chain, burn-in of 1000 sweeps (at least 500 is recommended) during
    which proposal scales adapt toward 20-50% acceptance.
    """

    chains: int = 10
    samples_per_chain: int = 10_000
    burn_in: int = 1_000
    seed: int = 0
    scales: ProposalScales = field(default_factory=ProposalScales)
    adapt_interval: int = 100
    target_acceptance: tuple[float, float] = (0.2, 0.5)

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ValueError(f"need at least one chain, got {self.chains}")
        if self.samples_per_chain < 1:
            raise ValueError("samples_per_chain must be positive")
        if self.burn_in < 1:
            raise ValueError("burn_in must be positive")
        lo, hi = self.target_acceptance
        if not 0 < lo < hi < 1:
            raise ValueError(f"bad target acceptance window ({lo}, {hi})")


def selection_config(**overrides) -> SamplerConfig:
    """The model-selection default: 4 chains instead of 10."""
    return SamplerConfig(**{"chains": 4, **overrides})


@dataclass(frozen=True, eq=False)
class CohortData:
    """Choice data of one condition flattened for vectorized likelihoods.

    ln_after[t, k] is the log of the subject's wealth after outcome k of
    trial t (left pair first); y[t] is +1 for a left choice, -1 for right.
    Timeout trials are dropped at construction.
    """

    condition: Dynamic
    subjects: tuple[str, ...]
    ln_after: np.ndarray
    y: np.ndarray
    subject_index: np.ndarray
    trials_per_subject: np.ndarray

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @classmethod
    def from_datasets(cls, datasets: Sequence[SubjectDataset]) -> "CohortData":
        if not datasets:
            raise ValueError("need at least one subject dataset")
        conditions = {d.condition for d in datasets}
        if len(conditions) != 1:
            raise ValueError(f"datasets mix conditions {sorted(c.value for c in conditions)}")
        (condition,) = conditions
        names = [d.subject for d in datasets]
        if len(set(names)) != len(names):
            raise ValueError("duplicate subject names in cohort")

        rows: list[list[float]] = []
        ys: list[int] = []
        idx: list[int] = []
        counts = []
        for i, ds in enumerate(datasets):
            n = 0
            for t in ds.trials:
                if t.choice is Choice.TIMEOUT:
                    continue
                pair = t.pair()
                after = []
                for gamble in (pair.left, pair.right):
                    for outcome in gamble.outcomes:
                        a = ds.wealth + wealth_increment(ds.wealth, outcome)
                        if a <= 0:
                            raise ValueError(
                                f"subject {ds.subject} trial {t.index}: outcome "
                                f"drives wealth to {a}; utility undefined"
                            )
                        after.append(math.log(a))
                rows.append(after)
                ys.append(1 if t.choice is Choice.LEFT else -1)
                idx.append(i)
                n += 1
            counts.append(n)
        return cls(
            condition=condition,
            subjects=tuple(names),
            ln_after=np.array(rows, dtype=float).reshape(len(rows), 4),
            y=np.array(ys, dtype=float),
            subject_index=np.array(idx, dtype=np.intp),
            trials_per_subject=np.array(counts, dtype=np.intp),
        )


def _delta_u(data: CohortData, eta: np.ndarray) -> np.ndarray:
    """Per-trial isoelastic utility differences for per-subject eta values."""
    e = 1.0 - np.asarray(eta, dtype=float)
    e_rows = e[data.subject_index]
    near_log = np.abs(e_rows) < 1e-10
    e_safe = np.where(near_log, 1.0, e_rows)
    with np.errstate(over="ignore", invalid="ignore"):
        powered = np.exp(data.ln_after * e_safe[:, None])
        du = (powered @ _SIGNS) / e_safe
    log_du = data.ln_after @ _SIGNS
    return np.where(near_log, log_du, du)


def cohort_log_likelihood(
    data: CohortData, eta: np.ndarray, ln_beta: np.ndarray
) -> np.ndarray:
    """Per-subject Bernoulli log likelihoods; non-finite maps to -inf."""
    du = _delta_u(data, eta)
    beta = np.exp(np.asarray(ln_beta, dtype=float))
    with np.errstate(over="ignore", invalid="ignore"):
        z = data.y * beta[data.subject_index] * du
    p = np.clip(expit(z), THETA_FLOOR, 1.0 - THETA_FLOOR)
    terms = np.log(p)
    ll = np.bincount(
        data.subject_index,
        weights=np.where(np.isfinite(terms), terms, -np.inf),
        minlength=data.n_subjects,
    )
    return np.where(np.isfinite(ll), ll, -np.inf)


def _ridge_slope(data: CohortData) -> float:
    """Slope d(ln beta)/d(eta) of the constant-discriminability ridge.

    Choices depend on (eta, ln beta) almost entirely through the product
    beta * |delta u(eta)|, so each subject's posterior concentrates along
    ln beta ~ const - ln S(eta), with S(eta) the typical magnitude of the
    utility differences. The slope -d ln S / d eta is nearly constant over
    the plausible eta range because trial wealth is held fixed, so a single
    central finite difference at the middle of the initialization range
    captures it well enough to direct correlated proposals.
    """
    h = 0.25
    base = np.zeros(data.n_subjects)

    def mean_log_abs(eta0: float) -> float:
        du = np.abs(_delta_u(data, base + eta0))
        du = du[np.isfinite(du) & (du > 0.0)]
        if du.size == 0:
            return 0.0
        return float(np.mean(np.log(du)))

    lo = mean_log_abs(0.5 - h / 2)
    hi = mean_log_abs(0.5 + h / 2)
    return float(np.clip((lo - hi) / h, 0.0, 20.0))


def log_likelihood(data: SubjectDataset, eta: float, beta: float) -> float:
    """Choice log likelihood of one subject under (eta, beta).

    The probability of each recorded choice is clamped to
    [1e-12, 1 - 1e-12] before the log, so the result is finite for any
    finite parameters.
    """
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    cohort = CohortData.from_datasets([data])
    ln_beta = math.log(beta) if beta > 0 else -math.inf
    if beta == 0:
        du = _delta_u(cohort, np.array([eta]))
        p = np.clip(
            expit(np.zeros_like(du)), THETA_FLOOR, 1.0 - THETA_FLOOR
        )
        return float(np.sum(np.log(p)))
    return float(
        cohort_log_likelihood(cohort, np.array([eta]), np.array([ln_beta]))[0]
    )


def _log_normal_pdf(x: np.ndarray | float, mu: float, sigma: float):
    return -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class PosteriorChains:
    """Retained draws, indexed (chain, iteration) plus subject where needed."""

    condition: Dynamic
    subjects: tuple[str, ...]
    eta: np.ndarray
    ln_beta: np.ndarray
    mu_eta: np.ndarray
    sigma_eta: np.ndarray
    mu_beta: np.ndarray
    sigma_beta: np.ndarray
    acceptance: dict[str, np.ndarray]
    config: SamplerConfig

    @property
    def n_chains(self) -> int:
        return self.eta.shape[0]

    def population_draws(self, param: str) -> np.ndarray:
        """(chains, samples) draws of one monitored population parameter."""
        if param not in ("mu_eta", "sigma_eta", "mu_beta", "sigma_beta"):
            raise KeyError(f"unknown population parameter {param!r}")
        return getattr(self, param)

    def subject_draws(self, param: str, subject: str) -> np.ndarray:
        """(chains, samples) draws of eta or ln_beta for one subject."""
        if param not in ("eta", "ln_beta"):
            raise KeyError(f"unknown subject parameter {param!r}")
        i = self.subjects.index(subject)
        return getattr(self, param)[:, :, i]

    def pooled(self, param: str, subject: Optional[str] = None) -> np.ndarray:
        draws = (
            self.population_draws(param)
            if subject is None
            else self.subject_draws(param, subject)
        )
        return draws.reshape(-1)


class _BlockTuner:
    """Acceptance bookkeeping and burn-in scale adaptation for one block."""

    def __init__(self, scale: float, window: tuple[float, float]):
        self.scale = scale
        self.lo, self.hi = window
        self.accepted = 0.0
        self.attempted = 0
        self.total_accepted = 0.0
        self.total_attempted = 0

    def record(self, accepted: float, attempted: int) -> None:
        self.accepted += accepted
        self.attempted += attempted
        self.total_accepted += accepted
        self.total_attempted += attempted

    def adapt(self) -> None:
        if self.attempted == 0:
            return
        rate = self.accepted / self.attempted
        if rate < self.lo:
            self.scale *= 0.7
        elif rate > self.hi:
            self.scale *= 1.4
        self.accepted = 0.0
        self.attempted = 0

    def overall_rate(self) -> float:
        if self.total_attempted == 0:
            return math.nan
        return self.total_accepted / self.total_attempted


def _in_support(x: float, support: tuple[float, float], open_low: bool = False) -> bool:
    lo, hi = support
    if open_low:
        return lo < x <= hi
    return lo <= x <= hi


def _run_chain(
    data: CohortData, config: SamplerConfig, rng: np.random.Generator
) -> dict[str, np.ndarray | dict[str, float]]:
    s = data.n_subjects
    n_keep = config.samples_per_chain

    for attempt in range(MAX_REINITS + 1):
        eta = rng.uniform(*INIT_ETA_RANGE, size=s)
        ln_beta = rng.uniform(*INIT_LN_BETA_RANGE, size=s)
        mu_eta = rng.uniform(*MU_ETA_SUPPORT)
        sigma_eta = rng.uniform(SIGMA_ETA_SUPPORT[0] + 0.05, SIGMA_ETA_SUPPORT[1])
        mu_beta = rng.uniform(*MU_BETA_SUPPORT)
        sigma_beta = rng.uniform(*SIGMA_BETA_SUPPORT)
        ll = cohort_log_likelihood(data, eta, ln_beta)
        if np.all(np.isfinite(ll)):
            break
    else:
        raise RuntimeError(
            f"no finite starting point after {MAX_REINITS} re-initializations; "
            f"last per-subject log likelihoods: {ll}"
        )

    sc = config.scales
    window = config.target_acceptance
    tuners = {
        "eta": _BlockTuner(sc.eta, window),
        "ln_beta": _BlockTuner(sc.ln_beta, window),
        "mu_eta": _BlockTuner(sc.mu_eta, window),
        "sigma_eta": _BlockTuner(sc.sigma_eta, window),
        "mu_beta": _BlockTuner(sc.mu_beta, window),
        "sigma_beta": _BlockTuner(sc.sigma_beta, window),
        "shift_eta": _BlockTuner(sc.shift_eta, window),
        "scale_eta": _BlockTuner(sc.scale_eta, window),
        "shift_beta": _BlockTuner(sc.shift_beta, window),
        "scale_beta": _BlockTuner(sc.scale_beta, window),
        "ridge": _BlockTuner(sc.ridge, window),
        "ridge_subj": _BlockTuner(sc.ridge_subj, window),
        "spread": _BlockTuner(sc.spread, window),
        "spread_beta": _BlockTuner(sc.spread_beta, window),
    }
    ridge = _ridge_slope(data)

    keep_eta = np.empty((n_keep, s))
    keep_ln_beta = np.empty((n_keep, s))
    keep_hyper = {k: np.empty(n_keep) for k in ("mu_eta", "sigma_eta", "mu_beta", "sigma_beta")}

    total = config.burn_in + n_keep
    for it in range(total):
        warm = it < config.burn_in

        # subject block: eta, all subjects at once (independent conditionals)
        prop = eta + rng.normal(0.0, tuners["eta"].scale, size=s)
        ll_prop = cohort_log_likelihood(data, prop, ln_beta)
        log_ratio = (
            ll_prop
            - ll
            + _log_normal_pdf(prop, mu_eta, sigma_eta)
            - _log_normal_pdf(eta, mu_eta, sigma_eta)
        )
        accept = np.log(rng.random(s)) < log_ratio
        eta = np.where(accept, prop, eta)
        ll = np.where(accept, ll_prop, ll)
        tuners["eta"].record(float(accept.sum()), s)

        # subject block: ln beta
        prop = ln_beta + rng.normal(0.0, tuners["ln_beta"].scale, size=s)
        ll_prop = cohort_log_likelihood(data, eta, prop)
        log_ratio = (
            ll_prop
            - ll
            + _log_normal_pdf(prop, mu_beta, sigma_beta)
            - _log_normal_pdf(ln_beta, mu_beta, sigma_beta)
        )
        accept = np.log(rng.random(s)) < log_ratio
        ln_beta = np.where(accept, prop, ln_beta)
        ll = np.where(accept, ll_prop, ll)
        tuners["ln_beta"].record(float(accept.sum()), s)

        # subject block: move each (eta, ln beta) pair along the shared
        # discriminability ridge, where axis-aligned proposals barely travel
        prop_ridge = rng.normal(0.0, tuners["ridge_subj"].scale, size=s)
        prop_eta = eta + prop_ridge
        prop_lnb = ln_beta + ridge * prop_ridge
        ll_prop = cohort_log_likelihood(data, prop_eta, prop_lnb)
        log_ratio = (
            ll_prop
            - ll
            + _log_normal_pdf(prop_eta, mu_eta, sigma_eta)
            - _log_normal_pdf(eta, mu_eta, sigma_eta)
            + _log_normal_pdf(prop_lnb, mu_beta, sigma_beta)
            - _log_normal_pdf(ln_beta, mu_beta, sigma_beta)
        )
        accept = np.log(rng.random(s)) < log_ratio
        eta = np.where(accept, prop_eta, eta)
        ln_beta = np.where(accept, prop_lnb, ln_beta)
        ll = np.where(accept, ll_prop, ll)
        tuners["ridge_subj"].record(float(accept.sum()), s)

        # hyper blocks: scalar random walks confined to the uniform supports
        def hyper_step(name, current, values, mu, sigma, support, open_low, which):
            tuner = tuners[name]
            prop = current + rng.normal(0.0, tuner.scale)
            ok = _in_support(prop, support, open_low)
            if ok:
                if which == "mu":
                    delta = float(
                        np.sum(_log_normal_pdf(values, prop, sigma))
                        - np.sum(_log_normal_pdf(values, current, sigma))
                    )
                else:
                    delta = float(
                        np.sum(_log_normal_pdf(values, mu, prop))
                        - np.sum(_log_normal_pdf(values, mu, current))
                    )
                ok = math.log(rng.random()) < delta
            tuner.record(1.0 if ok else 0.0, 1)
            return prop if ok else current

        mu_eta = hyper_step(
            "mu_eta", mu_eta, eta, None, sigma_eta, MU_ETA_SUPPORT, False, "mu"
        )
        sigma_eta = hyper_step(
            "sigma_eta", sigma_eta, eta, mu_eta, None, SIGMA_ETA_SUPPORT, True, "sigma"
        )
        mu_beta = hyper_step(
            "mu_beta", mu_beta, ln_beta, None, sigma_beta, MU_BETA_SUPPORT, False, "mu"
        )
        sigma_beta = hyper_step(
            "sigma_beta", sigma_beta, ln_beta, mu_beta, None, SIGMA_BETA_SUPPORT, True, "sigma"
        )

        # group moves: translate or rescale a subject block jointly with its
        # group-level parameter.  Coordinatewise walks stall on the ridge
        # coupling the group mean/spread to the individual values (small
        # sigma pins every subject to mu); these blocks step along the ridge.
        # A joint translation leaves the group prior term unchanged, so the
        # ratio is pure likelihood.  A joint rescale about the group mean by
        # c = exp(delta) leaves the standardized residuals unchanged; the
        # prior density drops s*log(c) while the map's Jacobian contributes
        # (s+1)*log(c), leaving likelihood + delta.
        def shift_move(name, values, ll_vec, mu, support):
            tuner = tuners[name]
            delta = rng.normal(0.0, tuner.scale)
            ok = _in_support(mu + delta, support)
            if ok:
                prop = values + delta
                ll_prop = (
                    cohort_log_likelihood(data, prop, ln_beta)
                    if name == "shift_eta"
                    else cohort_log_likelihood(data, eta, prop)
                )
                ok = math.log(rng.random()) < float(np.sum(ll_prop) - np.sum(ll_vec))
                if ok:
                    tuner.record(1.0, 1)
                    return prop, ll_prop, mu + delta
            tuner.record(0.0, 1)
            return values, ll_vec, mu

        def scale_move(name, values, ll_vec, mu, sigma, support):
            tuner = tuners[name]
            delta = rng.normal(0.0, tuner.scale)
            factor = math.exp(delta)
            ok = _in_support(sigma * factor, support, open_low=True)
            if ok:
                prop = mu + factor * (values - mu)
                ll_prop = (
                    cohort_log_likelihood(data, prop, ln_beta)
                    if name == "scale_eta"
                    else cohort_log_likelihood(data, eta, prop)
                )
                log_ratio = float(np.sum(ll_prop) - np.sum(ll_vec)) + delta
                ok = math.log(rng.random()) < log_ratio
                if ok:
                    tuner.record(1.0, 1)
                    return prop, ll_prop, sigma * factor
            tuner.record(0.0, 1)
            return values, ll_vec, sigma

        eta, ll, mu_eta = shift_move("shift_eta", eta, ll, mu_eta, MU_ETA_SUPPORT)
        eta, ll, sigma_eta = scale_move(
            "scale_eta", eta, ll, mu_eta, sigma_eta, SIGMA_ETA_SUPPORT
        )
        ln_beta, ll, mu_beta = shift_move(
            "shift_beta", ln_beta, ll, mu_beta, MU_BETA_SUPPORT
        )
        ln_beta, ll, sigma_beta = scale_move(
            "scale_beta", ln_beta, ll, mu_beta, sigma_beta, SIGMA_BETA_SUPPORT
        )

        # group move: translate the whole cohort along the ridge, carrying
        # both group means; the prior terms cancel and the ratio is again
        # pure likelihood
        tuner = tuners["ridge"]
        delta = rng.normal(0.0, tuner.scale)
        ok = _in_support(mu_eta + delta, MU_ETA_SUPPORT) and _in_support(
            mu_beta + ridge * delta, MU_BETA_SUPPORT
        )
        if ok:
            prop_eta = eta + delta
            prop_lnb = ln_beta + ridge * delta
            ll_prop = cohort_log_likelihood(data, prop_eta, prop_lnb)
            ok = math.log(rng.random()) < float(np.sum(ll_prop) - np.sum(ll))
            if ok:
                eta, ln_beta, ll = prop_eta, prop_lnb, ll_prop
                mu_eta, mu_beta = mu_eta + delta, mu_beta + ridge * delta
        tuner.record(1.0 if ok else 0.0, 1)

        # group move: trade eta-spread against beta-spread.  Rescaling the
        # eta deviations while sliding each ln beta along its subject's
        # ridge keeps the well-identified discriminability of every subject
        # fixed, so the likelihood barely objects; the prior and Jacobian
        # terms are the scale-move algebra plus the explicit ln-beta prior
        # change.
        tuner = tuners["spread"]
        delta = rng.normal(0.0, tuner.scale)
        factor = math.exp(delta)
        ok = _in_support(sigma_eta * factor, SIGMA_ETA_SUPPORT, open_low=True)
        if ok:
            prop_eta = mu_eta + factor * (eta - mu_eta)
            prop_lnb = ln_beta + ridge * (prop_eta - eta)
            ll_prop = cohort_log_likelihood(data, prop_eta, prop_lnb)
            log_ratio = (
                float(np.sum(ll_prop) - np.sum(ll))
                + delta
                + float(
                    np.sum(_log_normal_pdf(prop_lnb, mu_beta, sigma_beta))
                    - np.sum(_log_normal_pdf(ln_beta, mu_beta, sigma_beta))
                )
            )
            ok = math.log(rng.random()) < log_ratio
            if ok:
                eta, ln_beta, ll = prop_eta, prop_lnb, ll_prop
                sigma_eta = sigma_eta * factor
        tuner.record(1.0 if ok else 0.0, 1)

        # mirror of the spread move: rescale the ln-beta deviations with eta
        # compensating along the ridge
        tuner = tuners["spread_beta"]
        delta = rng.normal(0.0, tuner.scale)
        factor = math.exp(delta)
        ok = ridge > 0.0 and _in_support(
            sigma_beta * factor, SIGMA_BETA_SUPPORT, open_low=True
        )
        if ok:
            prop_lnb = mu_beta + factor * (ln_beta - mu_beta)
            prop_eta = eta + (prop_lnb - ln_beta) / ridge
            ll_prop = cohort_log_likelihood(data, prop_eta, prop_lnb)
            log_ratio = (
                float(np.sum(ll_prop) - np.sum(ll))
                + delta
                + float(
                    np.sum(_log_normal_pdf(prop_eta, mu_eta, sigma_eta))
                    - np.sum(_log_normal_pdf(eta, mu_eta, sigma_eta))
                )
            )
            ok = math.log(rng.random()) < log_ratio
            if ok:
                eta, ln_beta, ll = prop_eta, prop_lnb, ll_prop
                sigma_beta = sigma_beta * factor
        tuner.record(1.0 if ok else 0.0, 1)

        assert MU_ETA_SUPPORT[0] <= mu_eta <= MU_ETA_SUPPORT[1]
        assert SIGMA_ETA_SUPPORT[0] < sigma_eta <= SIGMA_ETA_SUPPORT[1]
        assert MU_BETA_SUPPORT[0] <= mu_beta <= MU_BETA_SUPPORT[1]
        assert SIGMA_BETA_SUPPORT[0] <= sigma_beta <= SIGMA_BETA_SUPPORT[1]

        if warm:
            if (it + 1) % config.adapt_interval == 0:
                for tuner in tuners.values():
                    tuner.adapt()
        else:
            keep = it - config.burn_in
            keep_eta[keep] = eta
            keep_ln_beta[keep] = ln_beta
            keep_hyper["mu_eta"][keep] = mu_eta
            keep_hyper["sigma_eta"][keep] = sigma_eta
            keep_hyper["mu_beta"][keep] = mu_beta
            keep_hyper["sigma_beta"][keep] = sigma_beta

    return {
        "eta": keep_eta,
        "ln_beta": keep_ln_beta,
        **keep_hyper,
        "acceptance": {k: t.overall_rate() for k, t in tuners.items()},
    }


def sample_posterior(data: CohortData, config: SamplerConfig) -> PosteriorChains:
    """Run the full sampler: independent seeded chains, merged into one result."""
    chain_seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    results = [
        _run_chain(data, config, np.random.default_rng(seed))
        for seed in chain_seeds
    ]
    acceptance = {
        k: np.array([r["acceptance"][k] for r in results])
        for k in results[0]["acceptance"]
    }
    return PosteriorChains(
        condition=data.condition,
        subjects=data.subjects,
        eta=np.stack([r["eta"] for r in results]),
        ln_beta=np.stack([r["ln_beta"] for r in results]),
        mu_eta=np.stack([r["mu_eta"] for r in results]),
        sigma_eta=np.stack([r["sigma_eta"] for r in results]),
        mu_beta=np.stack([r["mu_beta"] for r in results]),
        sigma_beta=np.stack([r["sigma_beta"] for r in results]),
        acceptance=acceptance,
        config=config,
    )


def fit_cohort(
    datasets: Iterable[SubjectDataset], config: SamplerConfig
) -> dict[Dynamic, PosteriorChains]:
    """Fit each condition present in the datasets as its own hierarchy."""
    by_condition: dict[Dynamic, list[SubjectDataset]] = {}
    for ds in datasets:
        by_condition.setdefault(ds.condition, []).append(ds)
    condition_seeds = {
        Dynamic.ADDITIVE: config.seed,
        Dynamic.MULTIPLICATIVE: config.seed + 1_000_003,
    }
    out = {}
    for condition, group in sorted(by_condition.items(), key=lambda kv: kv[0].value):
        cohort = CohortData.from_datasets(group)
        out[condition] = sample_posterior(
            cohort, replace(config, seed=condition_seeds[condition])
        )
    return out


def compute_rhat(draws: np.ndarray) -> float:
    """Potential scale reduction factor over a (chains, samples) matrix.

    Between/within variance ratio clamped below at 1, so identical chains
    report exactly 1.0. Degenerate all-constant input also reports 1.0.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2:
        raise ValueError(f"need a (chains, samples) matrix, got shape {draws.shape}")
    m, n = draws.shape
    if m < 2:
        raise ValueError(f"R-hat needs at least two chains, got {m}")
    if n < 10:
        raise ValueError(f"R-hat needs at least 10 draws per chain, got {n}")
    within = float(np.mean(np.var(draws, axis=1, ddof=1)))
    between = n * float(np.var(np.mean(draws, axis=1), ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else math.inf
    v_hat = (n - 1) / n * within + (m + 1) / (m * n) * between
    return math.sqrt(max(v_hat / within, 1.0))


def monitored_rhats(posterior: PosteriorChains) -> dict[str, float]:
    """R-hat for every monitored population parameter."""
    return {
        name: compute_rhat(posterior.population_draws(name))
        for name in ("mu_eta", "sigma_eta", "mu_beta", "sigma_beta")
    }


def map_estimate(draws: np.ndarray) -> float:
    """Mode of a Gaussian KDE over pooled draws.

    Bandwidth by Silverman's rule, density evaluated by binned counts
    smoothed with a Gaussian kernel on a 2^12-point grid spanning the draw
    range plus three bandwidths each side. Intended for 1000+ pooled draws.
    Zero-variance draws return the common value.
    """
    x = np.asarray(draws, dtype=float).reshape(-1)
    if x.size < 2:
        if x.size == 1:
            return float(x[0])
        raise ValueError("map_estimate needs at least one draw")
    sd = float(np.std(x, ddof=1))
    p75, p25 = np.percentile(x, [75, 25])
    iqr = float(p75 - p25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread == 0.0:
        return float(x[0])
    h = 0.9 * spread * x.size ** (-0.2)
    lo = float(np.min(x)) - 3.0 * h
    hi = float(np.max(x)) + 3.0 * h
    n_grid = 2**12
    counts, edges = np.histogram(x, bins=n_grid, range=(lo, hi))
    bin_width = edges[1] - edges[0]
    density = gaussian_filter1d(counts.astype(float), sigma=h / bin_width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return float(centers[int(np.argmax(density))])


def credible_interval(
    draws: np.ndarray, level: float = 0.95
) -> tuple[float, float]:
    """Central credibility interval by empirical percentiles."""
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    x = np.asarray(draws, dtype=float).reshape(-1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(x, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class EstimationSummary:
    """Structured fit report for one condition."""

    condition: Dynamic
    population_map: dict[str, float]
    population_ci: dict[str, tuple[float, float]]
    subject_eta_map: dict[str, float]
    subject_eta_ci: dict[str, tuple[float, float]]
    rhats: dict[str, float]
    acceptance: dict[str, float]


def summarize(posterior: PosteriorChains) -> EstimationSummary:
    population_map = {
        name: map_estimate(posterior.pooled(name))
        for name in ("mu_eta", "sigma_eta", "mu_beta", "sigma_beta")
    }
    population_ci = {
        name: credible_interval(posterior.pooled(name))
        for name in ("mu_eta", "sigma_eta", "mu_beta", "sigma_beta")
    }
    subject_eta_map = {
        s: map_estimate(posterior.pooled("eta", s)) for s in posterior.subjects
    }
    subject_eta_ci = {
        s: credible_interval(posterior.pooled("eta", s)) for s in posterior.subjects
    }
    return EstimationSummary(
        condition=posterior.condition,
        population_map=population_map,
        population_ci=population_ci,
        subject_eta_map=subject_eta_map,
        subject_eta_ci=subject_eta_ci,
        rhats=monitored_rhats(posterior),
        acceptance={k: float(np.mean(v)) for k, v in posterior.acceptance.items()},
    )


def dump_chains(posterior: PosteriorChains, directory: str | Path) -> list[Path]:
    """Write one whitespace-columnar text file per parameter (chains as columns)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("mu_eta", "sigma_eta", "mu_beta", "sigma_beta"):
        path = directory / f"{name}.txt"
        np.savetxt(path, posterior.population_draws(name).T)
        written.append(path)
    for i, subject in enumerate(posterior.subjects):
        for name in ("eta", "ln_beta"):
            path = directory / f"{name}_{subject}.txt"
            np.savetxt(path, getattr(posterior, name)[:, :, i].T)
            written.append(path)
    return written
