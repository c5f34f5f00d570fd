"""
Central finite-difference gradient of the reduced cost, used to check the adjoint gradient.
"""
import logging

import numpy as np

from pricing.exceptions import ParameterError
from pricing.forward import solve_forward
from pricing.params import HestonParams

from .calibrator import CalibConfig, cost
from .gradient import Gradient4

logger = logging.getLogger(__name__)


def central_difference_gradient(cost_fn, u, h=1e-4, box=None):
    """(J(u + h_i e_i) - J(u - h_i e_i)) / (2 h_i) with h_i = h |u_i| (h where u_i = 0)."""
    u = np.asarray(u, dtype=float)
    steps = np.where(u != 0.0, h * np.abs(u), h)
    grad = np.empty_like(u)
    for i, h_i in enumerate(steps):
        e = np.zeros_like(u)
        e[i] = h_i
        plus, minus = u + e, u - e
        if box is not None and not (
            np.all(minus >= box.lower) and np.all(plus <= box.upper)
        ):
            raise ParameterError(f"Perturbed u[{i}] +/- {h_i:.3e} leaves the box {box.as_mapping()}.")
        grad[i] = (cost_fn(plus) - cost_fn(minus)) / (2.0 * h_i)
    return grad


def finite_difference_gradient(u, V_d, market, grid, cfg=None, h=1e-4):
    cfg = cfg or CalibConfig()

    def reduced_cost(values):
        params = HestonParams.from_array(values)
        V = solve_forward(params, market, grid, cfg.theta, cfg.box)
        return cost(V, V_d, params, cfg)

    grad = central_difference_gradient(reduced_cost, u.as_array(), h, cfg.box)
    logger.debug("Finite-difference gradient at %s: %s", u, grad)
    return Gradient4.from_array(grad)
