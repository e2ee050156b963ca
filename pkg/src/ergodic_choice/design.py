"""Experimental paradigm generation: stimulus sets, passive sequences, gamble space.

The paradigm has two sessions per dynamic. In the passive session the subject
watches 333 stimuli (each of 9 stimuli exactly 37 times, in an order
rejection-sampled so wealth stays inside hard bounds and returns to the
endowment) plus one extra stimulus that sets the wealth carried into the
active session. In the active session the subject chooses between gamble
pairs: 144 ordered core pairs of mixed gambles shown twice each, plus 24
no-brainer pairs with a statewise-dominant side, 312 trials in total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .dynamics import Dynamic, Gamble, StimulusOutcome, wealth_increment

# Canonical stimulus grids. Multiplicative factors are log-spaced: nine factors
# whose logs run -0.806..+0.806 in steps of 0.2015, so the full set multiplies
# out to exactly 1 and a balanced passive sequence ends where it started.
LOG_FACTOR_STEP = 0.2015
ADDITIVE_STEP = 107.0
N_STIMULI = 9
PASSIVE_REPEATS = 37
PASSIVE_LENGTH = N_STIMULI * PASSIVE_REPEATS  # 333 before the extra draw
INITIAL_WEALTH = 1000.0
WEALTH_LOWER = 0.0
WEALTH_UPPER = 5000.0
N_CORE_PAIRS = 144
N_NO_BRAINERS = 24
SCHEDULE_LENGTH = 2 * N_CORE_PAIRS + N_NO_BRAINERS  # 312

# Relative tolerance under which two expected-utility ranks count as tied.
# The log-spaced factors make many log ranks tie exactly in analytic terms;
# float noise must not turn those ties into strict rankings.
RANK_TIE_RTOL = 1e-9


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


class PairKind(str, Enum):
    CORE = "core"
    NO_BRAINER = "no_brainer"


@dataclass(frozen=True)
class StimulusSet:
    """The nine canonical outcomes of one dynamic, ordered worst to best."""

    dynamic: Dynamic
    outcomes: tuple[StimulusOutcome, ...]

    def __post_init__(self) -> None:
        if len(self.outcomes) != N_STIMULI:
            raise ValueError(f"expected {N_STIMULI} outcomes, got {len(self.outcomes)}")
        if any(o.dynamic is not self.dynamic for o in self.outcomes):
            raise ValueError("outcome dynamic mismatch")

    @property
    def neutral(self) -> StimulusOutcome:
        return self.outcomes[N_STIMULI // 2]

    @property
    def gains(self) -> tuple[StimulusOutcome, ...]:
        return self.outcomes[N_STIMULI // 2 + 1 :]

    @property
    def losses(self) -> tuple[StimulusOutcome, ...]:
        return self.outcomes[: N_STIMULI // 2]

    def by_id(self, stimulus_id: int) -> StimulusOutcome:
        for o in self.outcomes:
            if o.id == stimulus_id:
                return o
        raise KeyError(f"no stimulus with id {stimulus_id}")


def build_stimulus_set(dynamic: Dynamic) -> StimulusSet:
    """Canonical 9-outcome set: fixed values, ids 1..9 (multiplicative) or 10..18."""
    if dynamic is Dynamic.MULTIPLICATIVE:
        outcomes = tuple(
            StimulusOutcome(id=k + 1, value=math.exp((k - 4) * LOG_FACTOR_STEP), dynamic=dynamic)
            for k in range(N_STIMULI)
        )
    else:
        outcomes = tuple(
            StimulusOutcome(id=k + 10, value=(k - 4) * ADDITIVE_STEP, dynamic=dynamic)
            for k in range(N_STIMULI)
        )
    return StimulusSet(dynamic=dynamic, outcomes=outcomes)


@dataclass(frozen=True)
class PassiveSequence:
    """An accepted passive-session stimulus order (333 balanced + 1 extra)."""

    dynamic: Dynamic
    stimulus_ids: tuple[int, ...]
    seed: int
    attempts: int

    def outcomes(self, stimulus_set: StimulusSet) -> list[StimulusOutcome]:
        return [stimulus_set.by_id(i) for i in self.stimulus_ids]

    def wealth_path(self, stimulus_set: StimulusSet) -> np.ndarray:
        """Wealth after each of the 334 stimuli, starting from the endowment."""
        values = np.array([stimulus_set.by_id(i).value for i in self.stimulus_ids])
        if self.dynamic is Dynamic.MULTIPLICATIVE:
            return INITIAL_WEALTH * np.cumprod(values)
        return INITIAL_WEALTH + np.cumsum(values)


def _path_in_bounds(path: np.ndarray) -> bool:
    return bool(np.all((path > WEALTH_LOWER) & (path < WEALTH_UPPER)))


def generate_passive_sequence(
    stimulus_set: StimulusSet, seed: int, max_attempts: int = 10**6
) -> PassiveSequence:
    """Rejection-sample a passive sequence for one dynamic.

    Draws uniform permutations of the balanced 333-stimulus multiset until
    every partial wealth stays strictly inside (0, 5000) DKK, then appends one
    uniformly drawn extra stimulus. Deterministic for a fixed seed.

    Raises:
        RuntimeError: if no permutation is accepted within max_attempts.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    ids = np.repeat([o.id for o in stimulus_set.outcomes], PASSIVE_REPEATS)
    values = np.repeat([o.value for o in stimulus_set.outcomes], PASSIVE_REPEATS)
    for attempt in range(1, max_attempts + 1):
        perm = rng.permutation(PASSIVE_LENGTH)
        if stimulus_set.dynamic is Dynamic.MULTIPLICATIVE:
            path = INITIAL_WEALTH * np.cumprod(values[perm])
        else:
            path = INITIAL_WEALTH + np.cumsum(values[perm])
        if not _path_in_bounds(path):
            continue
        extra = stimulus_set.outcomes[rng.integers(N_STIMULI)]
        ordered = tuple(int(i) for i in ids[perm]) + (extra.id,)
        return PassiveSequence(
            dynamic=stimulus_set.dynamic,
            stimulus_ids=ordered,
            seed=seed,
            attempts=attempt,
        )
    raise RuntimeError(
        f"no acceptable passive sequence within {max_attempts} attempts (seed {seed})"
    )


@dataclass(frozen=True)
class GamblePair:
    """One choice trial: a left and a right gamble of the same dynamic."""

    left: Gamble
    right: Gamble
    kind: PairKind

    def __post_init__(self) -> None:
        if self.left.dynamic is not self.right.dynamic:
            raise ValueError("pair mixes dynamics")

    @property
    def dynamic(self) -> Dynamic:
        return self.left.dynamic

    def gamble(self, side: Side) -> Gamble:
        return self.left if side is Side.LEFT else self.right

    def stimulus_ids(self) -> tuple[int, int, int, int]:
        return (
            self.left.outcomes[0].id,
            self.left.outcomes[1].id,
            self.right.outcomes[0].id,
            self.right.outcomes[1].id,
        )


@dataclass(frozen=True)
class GambleSpace:
    """The active-session choice space for one dynamic."""

    stimulus_set: StimulusSet
    core: tuple[GamblePair, ...]
    no_brainers: tuple[GamblePair, ...]
    seed: int


def mixed_gambles(stimulus_set: StimulusSet) -> list[Gamble]:
    """All 16 gain-plus-loss gambles (neutral stimulus excluded)."""
    return [
        Gamble((g, l)) for g in stimulus_set.gains for l in stimulus_set.losses
    ]


def build_gamble_space(stimulus_set: StimulusSet, seed: int = 0) -> GambleSpace:
    """Construct the 144 ordered core pairs and 24 seeded no-brainer pairs.

    Core pairs: each of the 16 mixed gambles appears as the left gamble
    against the 9 mixed gambles sharing none of its stimuli (3 remaining
    gains x 3 remaining losses). No-brainer pairs share exactly one stimulus
    and differ in the other, so one side statewise-dominates; 24 distinct
    structures are sampled uniformly with the given seed.
    """
    if len(stimulus_set.gains) != 4 or len(stimulus_set.losses) != 4:
        raise ValueError("stimulus set must split into 4 gains and 4 losses")
    mixed = mixed_gambles(stimulus_set)
    core = []
    for left in mixed:
        left_ids = {o.id for o in left.outcomes}
        for right in mixed:
            right_ids = {o.id for o in right.outcomes}
            if left_ids.isdisjoint(right_ids):
                core.append(GamblePair(left=left, right=right, kind=PairKind.CORE))
    if len(core) != N_CORE_PAIRS:
        raise AssertionError(f"core construction produced {len(core)} pairs")

    rng = np.random.Generator(np.random.PCG64(seed))
    outcomes = stimulus_set.outcomes
    structures = [
        (s, u1, u2)
        for s in range(N_STIMULI)
        for u1 in range(N_STIMULI)
        for u2 in range(u1 + 1, N_STIMULI)
        if s not in (u1, u2)
    ]
    chosen = rng.choice(len(structures), size=N_NO_BRAINERS, replace=False)
    no_brainers = []
    for idx in chosen:
        s, u1, u2 = structures[idx]
        if rng.integers(2):
            u1, u2 = u2, u1
        left = Gamble((outcomes[s], outcomes[u1]))
        right = Gamble((outcomes[s], outcomes[u2]))
        if rng.integers(2):
            left, right = right, left
        no_brainers.append(
            GamblePair(left=left, right=right, kind=PairKind.NO_BRAINER)
        )
    return GambleSpace(
        stimulus_set=stimulus_set,
        core=tuple(core),
        no_brainers=tuple(no_brainers),
        seed=seed,
    )


@dataclass(frozen=True)
class Schedule:
    """The 312 active-session trials in presentation order."""

    dynamic: Dynamic
    trials: tuple[GamblePair, ...]
    seed: int

    def __post_init__(self) -> None:
        if len(self.trials) != SCHEDULE_LENGTH:
            raise ValueError(
                f"schedule must hold {SCHEDULE_LENGTH} trials, got {len(self.trials)}"
            )


def make_schedule(space: GambleSpace, seed: int) -> Schedule:
    """Shuffle 2x144 core presentations plus the 24 no-brainers into one order."""
    trials = list(space.core) * 2 + list(space.no_brainers)
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(trials))
    return Schedule(
        dynamic=space.stimulus_set.dynamic,
        trials=tuple(trials[i] for i in order),
        seed=seed,
    )


def _rank_statistics(pair: GamblePair, wealth: float) -> tuple[float, float]:
    """Linear-utility and exact-log expected utility differences, left minus right."""
    linear = 0.0
    logarithmic = 0.0
    for sign, gamble in ((1.0, pair.left), (-1.0, pair.right)):
        for outcome in gamble.outcomes:
            dx = wealth_increment(wealth, outcome)
            after = wealth + dx
            if after <= 0:
                raise ValueError(
                    f"log utility undefined: wealth {wealth} with change {dx}"
                )
            linear += sign * 0.5 * dx
            logarithmic += sign * 0.5 * (math.log(after) - math.log(wealth))
    return linear, logarithmic


def classify_discrepant(pair: GamblePair, wealth: float) -> bool:
    """Whether linear-utility and log-utility maximizers pick different sides.

    True iff the side with the higher expected linear-utility change differs
    from the side with the higher expected log-utility change at the given
    wealth. A tie in either ranking (within a small relative tolerance, so
    analytically tied log ranks stay tied under float noise) is not
    discrepant.
    """
    if not wealth > 0:
        raise ValueError(f"wealth must be positive, got {wealth}")
    linear, logarithmic = _rank_statistics(pair, wealth)
    lin_scale = max(1.0, abs(wealth))
    if abs(linear) <= RANK_TIE_RTOL * lin_scale:
        return False
    if abs(logarithmic) <= RANK_TIE_RTOL:
        return False
    return (linear > 0) != (logarithmic > 0)


def log_preferred_side(pair: GamblePair, wealth: float) -> Optional[Side]:
    """Side a log-utility maximizer strictly prefers, or None on a tie."""
    if not wealth > 0:
        raise ValueError(f"wealth must be positive, got {wealth}")
    _, logarithmic = _rank_statistics(pair, wealth)
    if abs(logarithmic) <= RANK_TIE_RTOL:
        return None
    return Side.LEFT if logarithmic > 0 else Side.RIGHT


def count_discrepant(trials: Sequence[GamblePair], wealth: float) -> int:
    return sum(classify_discrepant(p, wealth) for p in trials)


def dominant_choice(pair: GamblePair) -> Optional[Side]:
    """Statewise-dominant side of a pair, if any.

    When the two gambles share exactly one stimulus, the side whose unique
    stimulus has the larger value dominates state by state. Identical gambles
    and pairs sharing no stimulus have no dominant side.
    """
    left_ids = sorted(o.id for o in pair.left.outcomes)
    right_ids = sorted(o.id for o in pair.right.outcomes)
    if left_ids == right_ids:
        return None
    shared = set(left_ids) & set(right_ids)
    if len(shared) != 1:
        return None
    s = shared.pop()
    left_unique = [o for o in pair.left.outcomes if o.id != s]
    right_unique = [o for o in pair.right.outcomes if o.id != s]
    if len(left_unique) != 1 or len(right_unique) != 1:
        return None  # one gamble holds the shared stimulus twice
    if left_unique[0].value == right_unique[0].value:
        return None
    return Side.LEFT if left_unique[0].value > right_unique[0].value else Side.RIGHT


def state_space_size(n_pairs: int, depth: int) -> int:
    """Number of distinct terminal-wealth paths after `depth` choice trials.

    Each trial branches into n_pairs possible gamble pairs x 2 choices x 2
    realized outcomes. Exact integer arithmetic, no overflow.
    """
    if n_pairs < 1 or depth < 1:
        raise ValueError("n_pairs and depth must be positive integers")
    branching = n_pairs * 2 * 2
    return branching**depth
