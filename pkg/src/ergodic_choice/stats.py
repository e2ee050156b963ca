"""Model-free and post-inference statistics for risky-choice sessions.

Discrepant-trial choice proportions, default Bayesian t-tests with a
zero-centred Cauchy effect-size prior, distances of fitted risk attitudes
to benchmark models, tie-adjusted rank correlation, the signed-rank test,
and realized growth-rate analyses. Everything here is a pure function of
recorded data and point estimates; nothing mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import integrate
from scipy import stats as sps
from scipy.special import ndtr

from .design import Schedule, classify_discrepant, log_preferred_side
from .dynamics import Dynamic, gamble_growth_rate
from .records import SubjectDataset

__all__ = [
    "ChoiceProportion",
    "choice_proportion_log",
    "choice_proportions",
    "proportion_table",
    "BayesFactorResult",
    "jzs_bf_ttest",
    "jzs_bf_paired",
    "prior_robustness",
    "DEFAULT_PRIOR_SCALE",
    "ROBUSTNESS_SCALES",
    "ModelDistances",
    "distance_to_models",
    "kendall_tau",
    "WilcoxonResult",
    "wilcoxon_signed_rank",
    "OPTIMAL_ETA",
    "session_growth_rate",
    "GrowthDeviationVectors",
    "growth_vs_deviation",
]


# ---------------------------------------------------------------------------
# Choice proportions on discrepant trials


@dataclass(frozen=True)
class ChoiceProportion:
    """Share of discrepant-trial choices that sided with log utility.

    A trial is discrepant when linear and logarithmic rankings of its two
    gambles strictly disagree at the session wealth. cp_log is the fraction
    of responded discrepant trials whose chosen side is the log-preferred
    one; None when no discrepant trial received a response. Timeouts are
    not choices, so they count in n_discrepant but never in the proportion.
    """

    subject: str
    condition: Dynamic
    cp_log: Optional[float]
    n_discrepant: int
    n_scored: int

    def __post_init__(self) -> None:
        if self.cp_log is not None and not 0.0 <= self.cp_log <= 1.0:
            raise ValueError(f"cp_log must lie in [0, 1], got {self.cp_log}")
        if self.n_scored > self.n_discrepant:
            raise ValueError("scored more discrepant trials than were shown")


def choice_proportion_log(
    data: SubjectDataset,
    schedule: Optional[Schedule] = None,
    wealth: Optional[float] = None,
) -> ChoiceProportion:
    """Score one subject-condition dataset on its discrepant trials.

    Classification uses the trials' own gamble pairs at the dataset's frozen
    session wealth; pass a schedule to classify from the canonical trial
    order instead (records must match it), or a wealth to override the
    classification wealth.
    """
    w = data.wealth if wealth is None else float(wealth)
    n_discrepant = 0
    scored = 0
    agreed = 0
    for trial in data.trials:
        pair = trial.pair()
        if schedule is not None:
            if trial.index >= len(schedule.trials):
                raise ValueError(
                    f"trial index {trial.index} outside the {len(schedule.trials)}"
                    "-trial schedule"
                )
            expected = schedule.trials[trial.index]
            if pair.stimulus_ids() != expected.stimulus_ids():
                raise ValueError(
                    f"trial {trial.index} stimuli {pair.stimulus_ids()} do not "
                    f"match the schedule's {expected.stimulus_ids()}"
                )
            pair = expected
        if not classify_discrepant(pair, w):
            continue
        n_discrepant += 1
        side = trial.choice.side
        if side is None:
            continue
        scored += 1
        if side is log_preferred_side(pair, w):
            agreed += 1
    cp = agreed / scored if scored else None
    return ChoiceProportion(
        subject=data.subject,
        condition=data.condition,
        cp_log=cp,
        n_discrepant=n_discrepant,
        n_scored=scored,
    )


def choice_proportions(
    datasets: Iterable[SubjectDataset], wealth: Optional[float] = None
) -> list[ChoiceProportion]:
    return [choice_proportion_log(d, wealth=wealth) for d in datasets]


def proportion_table(
    proportions: Iterable[ChoiceProportion],
) -> dict[Dynamic, dict[str, float]]:
    """Pivot to condition -> subject -> cp_log, dropping missing entries."""
    table: dict[Dynamic, dict[str, float]] = {}
    for p in proportions:
        if p.cp_log is None:
            continue
        table.setdefault(p.condition, {})[p.subject] = p.cp_log
    return table


# ---------------------------------------------------------------------------
# Default Bayesian t-test (Cauchy effect-size prior)

DEFAULT_PRIOR_SCALE = 1.0 / math.sqrt(2.0)
# medium, wide, ultrawide prior widths used for robustness checks
ROBUSTNESS_SCALES = (DEFAULT_PRIOR_SCALE, 1.0, math.sqrt(2.0))

_SIDES = ("two-sided", "greater", "less")
# fixed effect-size grid for posterior summaries, chosen for reproducibility
_GRID_LO, _GRID_HI, _GRID_N = -10.0, 10.0, 2**14


@dataclass(frozen=True)
class BayesFactorResult:
    """Directed-alternative vs point-null Bayes factor with posterior summary.

    bf multiplies the prior odds of the alternative over the null; its
    reciprocal bf_null quantifies support for the null. effect_median and
    effect_interval summarize the posterior over the standardized effect
    size under the (possibly truncated) Cauchy prior.
    """

    bf: float
    direction: str
    prior_scale: float
    effect_median: float
    effect_interval: tuple[float, float]
    t_statistic: float
    n: int

    @property
    def bf_null(self) -> float:
        return 1.0 / self.bf


def _cauchy_pdf(delta: np.ndarray, scale: float) -> np.ndarray:
    return scale / (math.pi * (delta * delta + scale * scale))


def _prior_factor(delta: np.ndarray, scale: float, side: str) -> np.ndarray:
    """Cauchy density truncated to the tested direction and renormalized."""
    base = _cauchy_pdf(delta, scale)
    if side == "greater":
        return np.where(delta >= 0.0, 2.0 * base, 0.0)
    if side == "less":
        return np.where(delta <= 0.0, 2.0 * base, 0.0)
    return base


def _integration_window(t: float, nu: int, root_n: float) -> tuple[float, float]:
    # likelihood of t is near-Gaussian in the noncentrality with this scale;
    # 15 sigma of margin keeps the truncation error far below quad tolerance
    center = t / root_n
    spread = math.sqrt(1.0 + t * t / (2.0 * nu)) / root_n
    return center - 15.0 * spread - 1.0, center + 15.0 * spread + 1.0


def _marginal_likelihood(
    t: float, nu: int, root_n: float, scale: float, side: str
) -> float:
    lo, hi = _integration_window(t, nu, root_n)
    if side == "greater":
        lo = max(lo, 0.0)
        hi = max(hi, 1.0)
    elif side == "less":
        hi = min(hi, 0.0)
        lo = min(lo, -1.0)

    def integrand(delta: float) -> float:
        like = sps.nct.pdf(t, nu, delta * root_n)
        return float(like * _prior_factor(np.asarray(delta), scale, side))

    interior = [p for p in (0.0, t / root_n) if lo < p < hi]
    value, _ = integrate.quad(integrand, lo, hi, points=interior or None, limit=300)
    return value


def _posterior_summary(
    t: float, nu: int, root_n: float, scale: float, side: str
) -> tuple[float, tuple[float, float]]:
    grid = np.linspace(_GRID_LO, _GRID_HI, _GRID_N)
    density = sps.nct.pdf(t, nu, grid * root_n) * _prior_factor(grid, scale, side)
    cdf = integrate.cumulative_trapezoid(density, grid, initial=0.0)
    if cdf[-1] <= 0.0:
        raise RuntimeError("posterior mass vanished on the effect-size grid")
    cdf /= cdf[-1]
    med, lo, hi = np.interp([0.5, 0.025, 0.975], cdf, grid)
    return float(med), (float(lo), float(hi))


def jzs_bf_ttest(
    samples: Sequence[float],
    null_value: float = 0.0,
    side: str = "two-sided",
    scale: float = DEFAULT_PRIOR_SCALE,
) -> BayesFactorResult:
    """One-sample Bayes-factor t-test with a Cauchy effect-size prior.

    The alternative places a zero-centred Cauchy prior of the given scale on
    the standardized effect size, truncated and renormalized for one-sided
    directions; the null pins the effect at zero. The Bayes factor is the
    ratio of the t-statistic's marginal likelihood under the alternative
    (adaptive quadrature over the prior) to its central-t density under the
    null. Posterior summaries come from a fixed dense effect-size grid.
    """
    if side not in _SIDES:
        raise ValueError(f"side must be one of {_SIDES}, got {side!r}")
    if not scale > 0:
        raise ValueError(f"prior scale must be positive, got {scale}")
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 2:
        raise ValueError(f"need at least two observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise ValueError("zero-variance samples leave the effect size undefined")
    n = x.size
    nu = n - 1
    root_n = math.sqrt(n)
    t = (float(np.mean(x)) - null_value) / (sd / root_n)
    m_alt = _marginal_likelihood(t, nu, root_n, scale, side)
    f_null = float(sps.t.pdf(t, nu))
    median, interval = _posterior_summary(t, nu, root_n, scale, side)
    return BayesFactorResult(
        bf=m_alt / f_null,
        direction=side,
        prior_scale=scale,
        effect_median=median,
        effect_interval=interval,
        t_statistic=t,
        n=n,
    )


def jzs_bf_paired(
    first: Sequence[float],
    second: Sequence[float],
    null_value: float = 0.0,
    side: str = "two-sided",
    scale: float = DEFAULT_PRIOR_SCALE,
) -> BayesFactorResult:
    """Paired-sample variant: the one-sample test on elementwise differences."""
    a = np.asarray(first, dtype=float).reshape(-1)
    b = np.asarray(second, dtype=float).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"paired samples differ in length: {a.size} vs {b.size}")
    return jzs_bf_ttest(a - b, null_value=null_value, side=side, scale=scale)


def prior_robustness(
    samples: Sequence[float],
    null_value: float = 0.0,
    side: str = "two-sided",
    scales: Sequence[float] = ROBUSTNESS_SCALES,
) -> dict[float, BayesFactorResult]:
    """The same test over several prior widths, keyed by scale."""
    return {
        s: jzs_bf_ttest(samples, null_value=null_value, side=side, scale=s)
        for s in scales
    }


# ---------------------------------------------------------------------------
# Distances of fitted risk attitudes to benchmark models


class ModelDistances(tuple):
    """(d_time, d_invariant) distance pair in risk-attitude space."""

    __slots__ = ()

    def __new__(cls, d_time: float, d_invariant: float) -> "ModelDistances":
        return super().__new__(cls, (float(d_time), float(d_invariant)))

    @property
    def d_time(self) -> float:
        return self[0]

    @property
    def d_invariant(self) -> float:
        return self[1]


def distance_to_models(eta_add: float, eta_mult: float) -> ModelDistances:
    """Distances from a fitted (additive, multiplicative) risk-attitude pair.

    d_time is the Euclidean distance to (0, 1), the attitudes that maximize
    time-average growth in each condition. d_invariant is the distance to
    the nearest dynamics-invariant attitude, i.e. to the diagonal where both
    conditions share one value.
    """
    d_time = math.hypot(eta_add, eta_mult - 1.0)
    d_invariant = abs(eta_add - eta_mult) / math.sqrt(2.0)
    return ModelDistances(d_time, d_invariant)


# ---------------------------------------------------------------------------
# Tie-adjusted rank correlation


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Tie-adjusted pairwise concordance statistic in [-1, 1].

    Concordant minus discordant pairs over the geometric mean of the
    untied-pair counts in each margin. NaN when either vector is entirely
    tied, which leaves the statistic undefined.
    """
    xv = np.asarray(x, dtype=float).reshape(-1)
    yv = np.asarray(y, dtype=float).reshape(-1)
    if xv.size != yv.size:
        raise ValueError(f"paired vectors differ in length: {xv.size} vs {yv.size}")
    n = xv.size
    if n < 2:
        raise ValueError(f"need at least two pairs, got {n}")
    iu = np.triu_indices(n, k=1)
    sx = np.sign(xv[:, None] - xv[None, :])[iu]
    sy = np.sign(yv[:, None] - yv[None, :])[iu]
    n_pairs = n * (n - 1) // 2
    untied_x = n_pairs - int(np.count_nonzero(sx == 0))
    untied_y = n_pairs - int(np.count_nonzero(sy == 0))
    if untied_x == 0 or untied_y == 0:
        return math.nan
    con_minus_dis = int(np.sum(sx * sy))
    return con_minus_dis / math.sqrt(untied_x * untied_y)


# ---------------------------------------------------------------------------
# Signed-rank test

EXACT_SIGNED_RANK_LIMIT = 25


@dataclass(frozen=True)
class WilcoxonResult:
    """Signed-rank statistic with its exact or normal-approximation p-value."""

    v: float
    p_value: float
    method: str
    n: int


def _signed_rank_counts(doubled_ranks: Sequence[int]) -> list[int]:
    """Configurations per doubled positive-rank sum under random signs.

    Index s holds the number of sign assignments whose positive ranks sum
    to s/2; counts are exact integers totalling 2^n.
    """
    total = int(sum(doubled_ranks))
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        nxt = counts.copy()
        for s in range(r, total + 1):
            nxt[s] += counts[s - r]
        counts = nxt
    return counts


def wilcoxon_signed_rank(
    samples: Sequence[float],
    null_value: float = 0.0,
    alternative: str = "two-sided",
) -> WilcoxonResult:
    """Signed-rank test of symmetry around a point, zeros dropped.

    V sums the ranks (midranks under ties) of the positive differences. The
    p-value enumerates the sign-flip distribution exactly up to 25 nonzero
    differences and uses the tie-corrected, continuity-corrected normal
    approximation beyond; the two-sided p doubles the smaller tail, capped
    at 1.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    x = np.asarray(samples, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    d = x - null_value
    d = d[d != 0.0]
    n = d.size
    if n < 2:
        raise ValueError(
            f"need at least two nonzero differences, got {n}"
        )
    ranks = sps.rankdata(np.abs(d))
    v = float(np.sum(ranks[d > 0.0]))

    if n <= EXACT_SIGNED_RANK_LIMIT:
        doubled = np.rint(2.0 * ranks).astype(int)
        counts = _signed_rank_counts(doubled.tolist())
        v2 = int(round(2.0 * v))
        denom = 2**n
        lower = sum(counts[: v2 + 1]) / denom
        upper = sum(counts[v2:]) / denom
        if alternative == "greater":
            p = upper
        elif alternative == "less":
            p = lower
        else:
            p = min(1.0, 2.0 * min(lower, upper))
        return WilcoxonResult(v=v, p_value=p, method="exact", n=n)

    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_sizes**3 - tie_sizes)) / 48.0
    sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    z = v - mean
    # continuity correction: shift the statistic half a step toward the mean
    if alternative == "greater":
        z -= 0.5
        p = float(1.0 - ndtr(z / sigma))
    elif alternative == "less":
        z += 0.5
        p = float(ndtr(z / sigma))
    else:
        z -= 0.5 * math.copysign(1.0, z) if z != 0.0 else 0.0
        zn = z / sigma
        p = float(2.0 * min(ndtr(zn), 1.0 - ndtr(zn)))
        p = min(1.0, p)
    return WilcoxonResult(v=v, p_value=p, method="normal", n=n)


# ---------------------------------------------------------------------------
# Realized growth versus deviation from the growth-optimal attitude

# risk attitudes that maximize time-average growth under each dynamic
OPTIMAL_ETA: dict[Dynamic, float] = {
    Dynamic.ADDITIVE: 0.0,
    Dynamic.MULTIPLICATIVE: 1.0,
}


def session_growth_rate(data: SubjectDataset) -> float:
    """Mean per-trial growth rate of the gambles the subject chose.

    Additive sessions average the chosen gambles' expected increments,
    multiplicative sessions their expected log factors. Timeouts assigned a
    stimulus rather than a chosen gamble are skipped; NaN when nothing was
    chosen.
    """
    rates = [
        gamble_growth_rate(t.pair().gamble(t.choice.side))
        for t in data.trials
        if t.choice.side is not None
    ]
    if not rates:
        return math.nan
    return float(np.mean(rates))


@dataclass(frozen=True, eq=False)
class GrowthDeviationVectors:
    """Aligned per-subject vectors for one condition's growth analysis."""

    condition: Dynamic
    subjects: tuple[str, ...]
    deviations: np.ndarray
    growth_rates: np.ndarray


EtaBySubject = Mapping[str, float]


def _subject_etas(source: Union[EtaBySubject, object]) -> Mapping[str, float]:
    # accept either a plain subject->eta mapping or a fit summary carrying one
    table = getattr(source, "subject_eta_map", source)
    if not isinstance(table, Mapping):
        raise TypeError(f"cannot read subject attitudes from {type(source).__name__}")
    return table


def growth_vs_deviation(
    datasets: Iterable[SubjectDataset],
    etas: Mapping[Dynamic, Union[EtaBySubject, object]],
) -> dict[Dynamic, GrowthDeviationVectors]:
    """Pair attitude deviations with realized growth, per condition.

    Deviation is |eta - optimal| with optimal 0 (additive) or 1
    (multiplicative); growth is the session mean of the chosen gambles'
    growth rates. The vectors feed a rank-correlation test of whether
    straying from the optimum costs growth.
    """
    grouped: dict[Dynamic, list[tuple[str, float, float]]] = {}
    for ds in datasets:
        table = _subject_etas(etas[ds.condition])
        if ds.subject not in table:
            raise KeyError(
                f"no fitted attitude for subject {ds.subject!r} in "
                f"{ds.condition.value}"
            )
        eta = float(table[ds.subject])
        deviation = abs(eta - OPTIMAL_ETA[ds.condition])
        grouped.setdefault(ds.condition, []).append(
            (ds.subject, deviation, session_growth_rate(ds))
        )
    out: dict[Dynamic, GrowthDeviationVectors] = {}
    for condition, rows in grouped.items():
        out[condition] = GrowthDeviationVectors(
            condition=condition,
            subjects=tuple(r[0] for r in rows),
            deviations=np.array([r[1] for r in rows], dtype=float),
            growth_rates=np.array([r[2] for r in rows], dtype=float),
        )
    return out
