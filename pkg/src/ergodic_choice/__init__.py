"""Toolkit for risky-choice experiments under additive and multiplicative wealth dynamics.

Covers the full pipeline: wealth dynamics and gamble growth rates, generation
of the passive/active experimental paradigm, utility-based synthetic agents,
hierarchical Bayesian estimation of risk attitudes, latent-mixture model
selection, and the model-free statistics used to analyse choice behaviour.
"""

__version__ = "0.1.0"

from .dynamics import (
    Dynamic,
    Gamble,
    StimulusOutcome,
    apply_outcome,
    finite_time_growth,
    gamble_expectation,
    gamble_growth_rate,
    wealth_after_sequence,
)

__all__ = [
    "Dynamic",
    "StimulusOutcome",
    "Gamble",
    "apply_outcome",
    "wealth_after_sequence",
    "finite_time_growth",
    "gamble_growth_rate",
    "gamble_expectation",
    "__version__",
]
