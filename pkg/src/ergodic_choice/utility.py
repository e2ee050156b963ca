"""Utility models over wealth changes and the logistic choice rule.

Three families map a stimulus outcome to a change in utility at the
decision-maker's current wealth:

* ``ProspectTheory``: a power value function applied to the absolute wealth
  change, with separate curvature for gains and losses and a loss-aversion
  multiplier. Blind to the dynamic: only the signed change matters.
* ``Isoelastic``: constant relative risk aversion with parameter eta. The
  change in utility is the exact difference of isoelastic utilities at the
  wealth before and after the change, which reduces to the plain change at
  eta = 0 and to a log-wealth difference at eta = 1. A first-order variant
  (change times wealth^-eta) is available for sensitivity analysis; it is
  not the default because, at fixed wealth, it makes eta and the sensitivity
  parameter jointly unidentifiable from choices.
* ``TimeOptimal``: isoelastic with eta pinned by the dynamic (0 additive,
  1 multiplicative), so expected utility changes coincide with time-average
  growth rates.

Choices follow a logistic rule on the expected-utility difference between
the two gambles of a pair, scaled by a sensitivity parameter beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .design import GamblePair
from .dynamics import Dynamic, Gamble, StimulusOutcome, wealth_increment


@dataclass(frozen=True)
class ProspectTheory:
    """Power value function on wealth changes with loss aversion.

    Args:
        alpha_gain: gain-branch curvature, in (0, 1).
        alpha_loss: loss-branch curvature, in (0, 1).
        loss_aversion: multiplier on losses, at least 1.
    """

    alpha_gain: float
    alpha_loss: float
    loss_aversion: float

    def __post_init__(self) -> None:
        if not 0 < self.alpha_gain < 1:
            raise ValueError(f"alpha_gain must lie in (0, 1), got {self.alpha_gain}")
        if not 0 < self.alpha_loss < 1:
            raise ValueError(f"alpha_loss must lie in (0, 1), got {self.alpha_loss}")
        if not self.loss_aversion >= 1:
            raise ValueError(
                f"loss_aversion must be at least 1, got {self.loss_aversion}"
            )

    def delta_utility(self, wealth: float, outcome: StimulusOutcome) -> float:
        dx = wealth_increment(wealth, outcome)
        if dx > 0:
            return dx**self.alpha_gain
        if dx == 0:
            return 0.0
        return -self.loss_aversion * (-dx) ** self.alpha_loss


@dataclass(frozen=True)
class Isoelastic:
    """Constant relative risk aversion with index eta.

    ``first_order=True`` switches to the linearized form dx * wealth^-eta
    (except at eta = 1 exactly, which stays the log difference). Under that
    form wealth enters only as a common positive factor, so rankings never
    depend on eta and choices at fixed wealth cannot identify it.
    """

    eta: float
    first_order: bool = False

    def __post_init__(self) -> None:
        if not math.isfinite(self.eta):
            raise ValueError(f"eta must be finite, got {self.eta}")

    def delta_utility(self, wealth: float, outcome: StimulusOutcome) -> float:
        dx = wealth_increment(wealth, outcome)
        if self.eta == 0.0:
            return dx
        if not wealth > 0:
            raise ValueError(
                f"isoelastic utility at eta={self.eta} needs positive wealth, "
                f"got {wealth}"
            )
        if self.eta == 1.0:
            if wealth + dx <= 0:
                raise ValueError(
                    f"log utility undefined: wealth {wealth} with change {dx}"
                )
            return math.log1p(dx / wealth)
        if self.first_order:
            return dx * wealth ** (-self.eta)
        after = wealth + dx
        if after <= 0:
            raise ValueError(
                f"isoelastic utility at eta={self.eta} undefined: wealth {wealth} "
                f"with change {dx}"
            )
        exponent = 1.0 - self.eta
        return (after**exponent - wealth**exponent) / exponent


@dataclass(frozen=True)
class TimeOptimal:
    """Isoelastic utility with eta forced to match the dynamic.

    eta = 0 under additive dynamics, eta = 1 under multiplicative, so the
    expected change in utility of a gamble equals its time-average growth
    rate and maximizing it maximizes long-run growth.
    """

    @staticmethod
    def eta_for(dynamic: Dynamic) -> float:
        return 1.0 if dynamic is Dynamic.MULTIPLICATIVE else 0.0

    def delta_utility(self, wealth: float, outcome: StimulusOutcome) -> float:
        return Isoelastic(self.eta_for(outcome.dynamic)).delta_utility(
            wealth, outcome
        )


UtilityModel = Union[ProspectTheory, Isoelastic, TimeOptimal]


def delta_utility(model: UtilityModel, wealth: float, outcome: StimulusOutcome) -> float:
    """Change in utility the outcome causes at the given wealth."""
    return model.delta_utility(wealth, outcome)


def expected_delta_utility(model: UtilityModel, wealth: float, gamble: Gamble) -> float:
    """Equal-weight mean of the gamble's two utility changes."""
    a, b = gamble.outcomes
    return 0.5 * (model.delta_utility(wealth, a) + model.delta_utility(wealth, b))


def utility_difference(model: UtilityModel, wealth: float, pair: GamblePair) -> float:
    """Expected-utility difference between the pair's gambles, left minus right."""
    return expected_delta_utility(model, wealth, pair.left) - expected_delta_utility(
        model, wealth, pair.right
    )


def choice_probability(delta_u: float, beta: float) -> float:
    """Probability of choosing left under the logistic rule 1/(1+exp(-beta*du)).

    Saturates to exactly 0 or 1 for large |beta * delta_u| instead of
    overflowing.
    """
    if beta < 0:
        raise ValueError(f"sensitivity beta must be nonnegative, got {beta}")
    z = beta * delta_u
    # evaluate on the upper branch and mirror, so p(-z) == 1 - p(z) exactly
    upper = 1.0 / (1.0 + math.exp(-abs(z)))
    return upper if z >= 0 else 1.0 - upper
