"""Synthetic agents: seeded choice generation and long-run wealth trajectories.

An agent pairs a utility model and a sensitivity beta per condition. Choice
simulation replays an active-session schedule at frozen wealth and records
the generating utility difference and choice probability alongside each
choice. Trajectory simulation instead lets wealth evolve: the agent plays
uniformly drawn core pairs, the chosen gamble resolves by fair coin, and the
realized outcome is applied to wealth, which is what separates growth-
optimal from expectation-optimal behavior over long horizons.

Multiplicative trajectories are tracked in log wealth, so decaying agents
underflow and fast-growing agents overflow the raw wealth representation
gracefully (raw wealth reads 0 or inf there; growth rates stay exact).
Additive wealth may go negative; the path flags it. An agent whose utility
model cannot be evaluated at current wealth (log or power of a nonpositive
number) chooses at random for that trial, and policy evaluation sees wealth
capped near the float ceiling, where every model's preferences are already
asymptotic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .design import (
    INITIAL_WEALTH,
    GamblePair,
    GambleSpace,
    Schedule,
    build_gamble_space,
    build_stimulus_set,
)
from .dynamics import Dynamic
from .records import Choice, SubjectDataset, TrialRecord
from .utility import (
    Isoelastic,
    ProspectTheory,
    TimeOptimal,
    UtilityModel,
    choice_probability,
    utility_difference,
)

TRIAL_SECONDS = 9.5
WEEK_TRIALS = int(7 * 24 * 3600 / TRIAL_SECONDS)


@dataclass(frozen=True)
class ConditionPolicy:
    """Utility model plus choice sensitivity for one condition."""

    model: UtilityModel
    beta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be finite and nonnegative, got {self.beta}")


@dataclass(frozen=True)
class AgentConfig:
    """A synthetic subject: one policy per condition and a session wealth."""

    name: str
    additive: ConditionPolicy
    multiplicative: ConditionPolicy
    wealth: float = INITIAL_WEALTH

    @classmethod
    def uniform(
        cls,
        name: str,
        model: UtilityModel,
        beta: float,
        wealth: float = INITIAL_WEALTH,
    ) -> "AgentConfig":
        """Same model and sensitivity in both conditions."""
        policy = ConditionPolicy(model=model, beta=beta)
        return cls(name=name, additive=policy, multiplicative=policy, wealth=wealth)

    def policy(self, dynamic: Dynamic) -> ConditionPolicy:
        if dynamic is Dynamic.MULTIPLICATIVE:
            return self.multiplicative
        return self.additive


def figure_cohort(
    beta: float = 1000.0, wealth: float = INITIAL_WEALTH
) -> tuple[AgentConfig, ...]:
    """The 12-agent comparison cohort for long-run trajectory figures.

    Nine prospect-theory agents (loss aversion 1, 2, 3 crossed with shared
    gain/loss curvature 0.3, 0.6, 0.9), two isoelastic agents (eta 0 and 1),
    and the time-optimal agent. The default beta is large so choices are
    near-deterministic; the comparison is about utility models, not noise.
    """
    agents = [
        AgentConfig.uniform(
            name=f"pt_lambda{lam}_alpha{alpha}",
            model=ProspectTheory(
                alpha_gain=alpha, alpha_loss=alpha, loss_aversion=float(lam)
            ),
            beta=beta,
            wealth=wealth,
        )
        for lam in (1, 2, 3)
        for alpha in (0.3, 0.6, 0.9)
    ]
    agents.append(
        AgentConfig.uniform("iso_eta0", Isoelastic(0.0), beta=beta, wealth=wealth)
    )
    agents.append(
        AgentConfig.uniform("iso_eta1", Isoelastic(1.0), beta=beta, wealth=wealth)
    )
    agents.append(
        AgentConfig.uniform("time_optimal", TimeOptimal(), beta=beta, wealth=wealth)
    )
    return tuple(agents)


def simulate_choices(
    agent: AgentConfig,
    schedule: Schedule,
    seed: int,
    subject: Optional[str] = None,
) -> SubjectDataset:
    """Play a full active-session schedule at frozen wealth.

    Each trial draws left with the logistic choice probability; the utility
    difference and probability are stored on the record for audit. Response
    times and inter-trial gaps are synthetic but plausible (uniform 400 ms
    to 2.5 s responses, 1.5 to 3 s gaps). Deterministic per seed.
    """
    subject = subject if subject is not None else agent.name
    policy = agent.policy(schedule.dynamic)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    records = []
    t_cursor = 0.0
    for index, pair in enumerate(schedule.trials):
        delta_u = utility_difference(policy.model, agent.wealth, pair)
        theta = choice_probability(delta_u, policy.beta)
        choice = Choice.LEFT if rng.random() < theta else Choice.RIGHT
        rt = float(rng.uniform(400.0, 2500.0))
        records.append(
            TrialRecord(
                subject=subject,
                condition=schedule.dynamic,
                index=index,
                left_ids=tuple(o.id for o in pair.left.outcomes),
                right_ids=tuple(o.id for o in pair.right.outcomes),
                kind=pair.kind,
                choice=choice,
                rt_ms=rt,
                t_start_ms=t_cursor,
                t_response_ms=t_cursor + rt,
                wealth=agent.wealth,
                delta_u=delta_u,
                theta=theta,
            )
        )
        t_cursor += rt + float(rng.uniform(1500.0, 3000.0))
    return SubjectDataset(
        subject=subject,
        condition=schedule.dynamic,
        wealth=agent.wealth,
        trials=tuple(records),
    )


@dataclass(frozen=True, eq=False)
class WealthPath:
    """A simulated wealth trajectory sampled every 9.5 seconds."""

    dynamic: Dynamic
    times_s: np.ndarray
    wealth: np.ndarray
    log_wealth: Optional[np.ndarray]
    went_nonpositive: bool

    @property
    def horizon(self) -> int:
        return len(self.wealth) - 1

    def growth_per_trial(self) -> float:
        """Realized time-average growth over the whole path.

        Additive: DKK per trial. Multiplicative: log-factor per trial,
        computed from the log path so it stays exact under float underflow
        of the raw wealth.
        """
        if self.dynamic is Dynamic.MULTIPLICATIVE:
            assert self.log_wealth is not None
            return float(self.log_wealth[-1] - self.log_wealth[0]) / self.horizon
        return float(self.wealth[-1] - self.wealth[0]) / self.horizon

    def increments(self) -> np.ndarray:
        """Per-trial growth contributions (wealth or log-wealth differences)."""
        if self.dynamic is Dynamic.MULTIPLICATIVE:
            assert self.log_wealth is not None
            return np.diff(self.log_wealth)
        return np.diff(self.wealth)


def _theta_wealth_invariant(model: UtilityModel, dynamic: Dynamic) -> bool:
    """Whether the pair-choice probabilities never depend on current wealth."""
    if isinstance(model, TimeOptimal):
        return True
    if isinstance(model, Isoelastic):
        if dynamic is Dynamic.ADDITIVE:
            return model.eta == 0.0
        return model.eta == 1.0 and not model.first_order
    if isinstance(model, ProspectTheory):
        return dynamic is Dynamic.ADDITIVE
    return False


def _run_trajectory(
    policy: ConditionPolicy,
    wealth0: float,
    dynamic: Dynamic,
    pairs: Sequence[GamblePair],
    pair_idx: np.ndarray,
    coins: np.ndarray,
    unif: np.ndarray,
) -> WealthPath:
    horizon = len(pair_idx)
    # values[p, side, coin] = raw stimulus value of that outcome
    values = np.array(
        [
            [[o.value for o in g.outcomes] for g in (p.left, p.right)]
            for p in pairs
        ]
    )
    multiplicative = dynamic is Dynamic.MULTIPLICATIVE

    if _theta_wealth_invariant(policy.model, dynamic):
        theta = np.array(
            [
                choice_probability(
                    utility_difference(policy.model, wealth0, p), policy.beta
                )
                for p in pairs
            ]
        )
        side = np.where(unif < theta[pair_idx], 0, 1)
        picked = values[pair_idx, side, coins]
        if multiplicative:
            log_path = np.concatenate(
                ([math.log(wealth0)], math.log(wealth0) + np.cumsum(np.log(picked)))
            )
        else:
            path = np.concatenate(([wealth0], wealth0 + np.cumsum(picked)))
    else:
        unif_list = unif.tolist()
        coin_list = coins.tolist()
        idx_list = pair_idx.tolist()
        model, beta = policy.model, policy.beta
        if multiplicative:
            log_values = np.log(values).tolist()
            log_path = np.empty(horizon + 1)
            log_path[0] = logw = math.log(wealth0)
            w = wealth0
            for t in range(horizon):
                p = idx_list[t]
                try:
                    theta_t = choice_probability(
                        utility_difference(model, w, pairs[p]), beta
                    )
                except ValueError:
                    theta_t = 0.5
                s = 0 if unif_list[t] < theta_t else 1
                logw += log_values[p][s][coin_list[t]]
                w = math.exp(min(logw, 700.0))
                log_path[t + 1] = logw
        else:
            value_list = values.tolist()
            path = np.empty(horizon + 1)
            path[0] = w = wealth0
            for t in range(horizon):
                p = idx_list[t]
                try:
                    theta_t = choice_probability(
                        utility_difference(model, w, pairs[p]), beta
                    )
                except ValueError:
                    theta_t = 0.5
                s = 0 if unif_list[t] < theta_t else 1
                w += value_list[p][s][coin_list[t]]
                path[t + 1] = w

    times = np.arange(horizon + 1) * TRIAL_SECONDS
    if multiplicative:
        with np.errstate(over="ignore"):
            wealth = np.exp(log_path)
        wealth[0] = wealth0
        return WealthPath(
            dynamic=dynamic,
            times_s=times,
            wealth=wealth,
            log_wealth=log_path,
            went_nonpositive=False,
        )
    return WealthPath(
        dynamic=dynamic,
        times_s=times,
        wealth=path,
        log_wealth=None,
        went_nonpositive=bool(np.any(path <= 0)),
    )


def _core_pairs(dynamic: Dynamic, space: Optional[GambleSpace]) -> tuple[GamblePair, ...]:
    if space is None:
        space = build_gamble_space(build_stimulus_set(dynamic), seed=0)
    if space.stimulus_set.dynamic is not dynamic:
        raise ValueError(
            f"gamble space is {space.stimulus_set.dynamic.value}, need {dynamic.value}"
        )
    return tuple(space.core)


def simulate_trajectory(
    agent: AgentConfig,
    dynamic: Dynamic,
    horizon_trials: int,
    seed: int,
    space: Optional[GambleSpace] = None,
) -> WealthPath:
    """Simulate one agent playing uniform random core pairs with realized outcomes."""
    if horizon_trials < 1:
        raise ValueError(f"horizon must be at least 1 trial, got {horizon_trials}")
    pairs = _core_pairs(dynamic, space)
    pair_ss, coin_ss, choice_ss = np.random.SeedSequence(seed).spawn(3)
    pair_idx = np.random.default_rng(pair_ss).integers(len(pairs), size=horizon_trials)
    coins = np.random.default_rng(coin_ss).integers(2, size=horizon_trials)
    unif = np.random.default_rng(choice_ss).random(horizon_trials)
    return _run_trajectory(
        agent.policy(dynamic), agent.wealth, dynamic, pairs, pair_idx, coins, unif
    )


def simulate_cohort_trajectories(
    agents: Sequence[AgentConfig],
    dynamic: Dynamic,
    horizon_trials: int,
    seed: int,
    space: Optional[GambleSpace] = None,
) -> dict[str, WealthPath]:
    """Simulate a cohort under common random numbers.

    All agents face the same pair sequence and the same coin flips; only the
    choice-noise stream is per-agent. Growth differences between agents are
    then pure policy differences plus per-agent choice noise, which makes
    paired comparisons sharp.
    """
    if horizon_trials < 1:
        raise ValueError(f"horizon must be at least 1 trial, got {horizon_trials}")
    if len({a.name for a in agents}) != len(agents):
        raise ValueError("agent names must be unique")
    pairs = _core_pairs(dynamic, space)
    seeds = np.random.SeedSequence(seed).spawn(2 + len(agents))
    pair_idx = np.random.default_rng(seeds[0]).integers(
        len(pairs), size=horizon_trials
    )
    coins = np.random.default_rng(seeds[1]).integers(2, size=horizon_trials)
    paths = {}
    for agent, child in zip(agents, seeds[2:]):
        unif = np.random.default_rng(child).random(horizon_trials)
        paths[agent.name] = _run_trajectory(
            agent.policy(dynamic), agent.wealth, dynamic, pairs, pair_idx, coins, unif
        )
    return paths


@dataclass(frozen=True)
class GrowthComparison:
    """Paired growth comparison of a cohort against one reference agent."""

    reference: str
    growth: dict[str, float]
    margin_se: float
    beaten_by: tuple[str, ...]

    @property
    def reference_is_best(self) -> bool:
        return not self.beaten_by


def compare_growth(
    paths: Mapping[str, WealthPath],
    reference: str = "time_optimal",
    margin_se: float = 5.0,
) -> GrowthComparison:
    """Which agents grow reliably faster than the reference under shared draws?

    A rival beats the reference only when its mean per-trial growth advantage
    exceeds margin_se standard errors of the paired per-trial differences.
    Agents whose policies coincide with the reference then differ by choice
    noise alone and are correctly scored as ties.
    """
    if reference not in paths:
        raise ValueError(f"reference agent {reference!r} not in cohort")
    ref_inc = paths[reference].increments()
    beaten_by = []
    growth = {name: p.growth_per_trial() for name, p in paths.items()}
    for name, path in paths.items():
        if name == reference:
            continue
        diff = path.increments() - ref_inc
        mean = float(np.mean(diff))
        se = float(np.std(diff, ddof=1) / math.sqrt(len(diff)))
        if mean > margin_se * se:
            beaten_by.append(name)
    return GrowthComparison(
        reference=reference,
        growth=growth,
        margin_se=margin_se,
        beaten_by=tuple(sorted(beaten_by)),
    )
