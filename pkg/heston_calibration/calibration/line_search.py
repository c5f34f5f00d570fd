"""
Backtracking step-size rules over sigma in {1, 1/2, 1/4, ...}.

Cost oracles take a numpy parameter vector and return a float; an infinite or
NaN value rejects the trial point.
"""
import logging
from dataclasses import dataclass

import numpy as np

from pricing.conf import heston_setting

from .exceptions import LineSearchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrialStep:
    sigma: float
    point: np.ndarray
    value: float


def _halvings(min_step):
    sigma = 1.0
    while sigma >= min_step:
        yield sigma
        sigma *= 0.5


def armijo_search(f, u, d, grad, gamma=None, min_step=None, f_u=None):
    """Largest sigma with f(u + sigma d) - f(u) <= gamma sigma <grad, d>."""
    gamma = heston_setting('GAMMA') if gamma is None else gamma
    min_step = heston_setting('MIN_STEP') if min_step is None else min_step
    u, d = np.asarray(u, dtype=float), np.asarray(d, dtype=float)
    slope = float(np.dot(grad, d))
    if not slope < 0.0:
        raise ValueError(f"Direction is not a descent direction: <grad, d> = {slope}.")
    f_u = f(u) if f_u is None else f_u

    for sigma in _halvings(min_step):
        trial = u + sigma * d
        value = f(trial)
        if value - f_u <= gamma * sigma * slope:
            return TrialStep(sigma, trial, value)
    raise LineSearchError(f"Armijo search found no step >= {min_step} (slope {slope:.3e}).")


def projected_armijo_search(f, u, grad, gamma=None, project=None, min_step=None, f_u=None):
    """Largest sigma with f(P(u - sigma grad)) - f(u) <= -(gamma / sigma) ||P(u - sigma grad) - u||^2."""
    gamma = heston_setting('GAMMA') if gamma is None else gamma
    min_step = heston_setting('MIN_STEP') if min_step is None else min_step
    project = project or (lambda point: point)
    u, grad = np.asarray(u, dtype=float), np.asarray(grad, dtype=float)
    f_u = f(u) if f_u is None else f_u

    for sigma in _halvings(min_step):
        trial = np.asarray(project(u - sigma * grad), dtype=float)
        displacement = trial - u
        value = f(trial)
        if value - f_u <= -(gamma / sigma) * float(np.dot(displacement, displacement)):
            return TrialStep(sigma, trial, value)
        logger.debug("rejected sigma=%.3e (f=%.6e, f_u=%.6e)", sigma, value, f_u)
    raise LineSearchError(f"Projected Armijo search found no step >= {min_step}.")
