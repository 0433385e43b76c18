"""Candidate-set acquisition: Thompson sampling and probability of improvement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gp import GPModel, sample_posterior
from .scenario import ConcreteScenario, ScenarioSpace, lhs_unit, make_rng

THOMPSON = "thompson"
PROB_IMPROVEMENT = "prob_improvement"

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class AcquisitionSettings:
    kind: str = THOMPSON
    xi: float = 0.01
    n_candidates: int = 2048
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in (THOMPSON, PROB_IMPROVEMENT):
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        if not self.xi >= 0:
            raise ValueError("xi must be non-negative")
        if self.n_candidates < 16:
            raise ValueError("n_candidates must be >= 16")


def candidates(dim: int, s: AcquisitionSettings, iteration: int) -> np.ndarray:
    """Fresh LHS candidate set in the unit cube for one acquisition step."""
    return lhs_unit(s.n_candidates, dim, make_rng([s.rng_seed, iteration, 0]))


def probability_of_improvement(mean, sigma, y_best, xi=0.0) -> np.ndarray:
    """Phi((mean - y_best - xi) / sigma), with the degenerate-sigma rule applied."""
    mean, sigma = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sigma, float))
    margin = mean - y_best - xi
    degenerate = sigma < SIGMA_FLOOR
    z = np.where(degenerate, 0.0, margin / np.where(degenerate, 1.0, sigma))
    return np.where(degenerate, (margin > 0).astype(float), ndtr(z))


def _pi_scores(model: GPModel, X: np.ndarray, xi: float) -> np.ndarray:
    # Ranking by the standardized z-score orders candidates exactly as PI does,
    # without the ties PI produces once Phi underflows to 0 or rounds to 1.
    mean, var = model.predict(X, standardized=True)
    sigma = np.sqrt(var)
    margin = mean - float(np.max(model.y_std)) - xi
    degenerate = sigma < SIGMA_FLOOR
    z = margin / np.where(degenerate, 1.0, sigma)
    return np.where(degenerate, np.where(margin > 0, np.inf, -np.inf), z)


def propose_thompson(model: GPModel, space: ScenarioSpace, s: AcquisitionSettings,
                     iteration: int = 0) -> ConcreteScenario:
    """Maximizer over the candidate set of one joint posterior draw."""
    X = candidates(space.n, s, iteration)
    f = sample_posterior(model, X, [s.rng_seed, iteration, 1])
    return space.scenario_from_unit(X[int(np.argmax(f))])


def propose_pi(model: GPModel, space: ScenarioSpace, s: AcquisitionSettings,
               iteration: int = 0) -> ConcreteScenario:
    """Maximizer of probability of improvement over the candidate set.

    Works on the standardized target scale, so ``xi`` is in units of the
    observed target spread.
    """
    X = candidates(space.n, s, iteration)
    return space.scenario_from_unit(X[int(np.argmax(_pi_scores(model, X, s.xi)))])


def propose(model: GPModel, space: ScenarioSpace, s: AcquisitionSettings,
            iteration: int = 0) -> ConcreteScenario:
    if s.kind == THOMPSON:
        return propose_thompson(model, space, s, iteration)
    return propose_pi(model, space, s, iteration)
