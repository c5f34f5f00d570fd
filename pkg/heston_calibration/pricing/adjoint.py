"""
Adjoint of the log-transformed Heston equation, marched from tau = T down to 0.

With s = T - tau the adjoint reads phi_s = G phi + (V - V_d), phi(s=0) = 0, where

    G phi = nu sigma^2/2 phi_nunu + nu sigma rho phi_xnu + nu/2 phi_xx
            + (sigma^2 - kappa (mu - nu)) phi_nu + (q - r + nu/2 + sigma rho) phi_x
            + (kappa - r) phi

so the same mCS stepper as the forward solve applies. Boundary rows:
  * x_min, x_max: phi = 0.
  * nu = 0:  phi_s = -(r - q) phi_x; the kappa mu phi_nu term points out of the
    grid in the marching direction, so its upwind stencil is empty.
  * nu_max:  phi_s = nu/2 phi_xx - (r - q - nu/2) phi_x.
The residual forcing acts on interior rows only.

``solve_discrete_adjoint`` instead transposes the forward mCS step, giving the
multipliers whose pairing with the operator derivatives is the exact gradient
of the discrete cost.
"""
import logging

import numpy as np

from .conf import heston_setting
from .exceptions import GridError, SolverError
from .forward import CraigSneydStepper, Trajectory, _check_grid, march
from .grid import SplitOperators, StencilAssembler, assemble_operators
from .params import ParameterBox

logger = logging.getLogger(__name__)


def residual(V, V_d):
    """V - V_d; both trajectories must share the grid."""
    V.check_same_grid(V_d)
    return V - V_d


def assemble_adjoint_operators(params, market, grid, box=None):
    (box or ParameterBox.default()).check(params)
    sigma, rho, kappa, mu = params.as_array()
    r, q = market.r, market.q
    nu = grid.nu[np.newaxis, :]
    interior = grid.interior_mask()
    nu_min = grid.nu_min_mask()
    nu_max = grid.nu_max_mask()

    g0 = StencilAssembler(grid)
    g0.mixed(interior, rho * sigma * nu)

    gx = StencilAssembler(grid)
    gx.second_x(interior, 0.5 * nu)
    gx.first_x(interior, q - r + 0.5 * nu + sigma * rho)
    gx.diagonal(interior, kappa - r)
    gx.first_x(nu_min, -(r - q))
    gx.second_x(nu_max, 0.5 * nu)
    gx.first_x(nu_max, -(r - q - 0.5 * nu))

    gnu = StencilAssembler(grid)
    gnu.second_nu(interior, 0.5 * sigma ** 2 * nu)
    gnu.upwind_nu(interior, sigma ** 2 - kappa * (mu - nu))

    return SplitOperators(grid=grid, F0=g0.matrix(), Fx=gx.matrix(), Fnu=gnu.matrix())


def solve_adjoint(params, market, grid, residual, theta=None, box=None):
    """Adjoint trajectory indexed like the state: result[k] ~ phi(tau_k), result[n_tau] = 0."""
    _check_grid(market, grid)
    if residual.grid != grid:
        raise GridError("Residual trajectory lives on a different grid than the adjoint solve.")
    theta = heston_setting('THETA') if theta is None else theta
    ops = assemble_adjoint_operators(params, market, grid, box)
    stepper = CraigSneydStepper(ops, theta, grid.dtau)

    sources = residual.values[::-1] * grid.interior_mask()
    values = march(stepper, np.zeros(grid.shape), grid.n_tau, sources, label='adjoint')
    logger.debug("Adjoint solve done for %s", params)
    return Trajectory(grid, values[::-1])


def solve_discrete_adjoint(params, market, grid, residual, theta=None, box=None):
    """Multipliers of the forward march itself, for the trapezoidal cost of ``residual``.

    result[k] belongs to the step tau_k -> tau_{k+1}, divided by dtau and the
    spatial quadrature weights so it approximates phi(tau_k). result[n_tau] = 0
    and the Dirichlet rows are 0; the nu-boundary rows are coupled like any other.
    """
    _check_grid(market, grid)
    if residual.grid != grid:
        raise GridError("Residual trajectory lives on a different grid than the adjoint solve.")
    theta = heston_setting('THETA') if theta is None else theta
    stepper = CraigSneydStepper(assemble_operators(params, market, grid, box), theta, grid.dtau)
    spatial = grid.spatial_weights().ravel()
    time = grid.time_weights()
    free = grid.x_interior_mask().ravel()
    R = residual.values.reshape(grid.n_tau + 1, -1)

    values = np.zeros_like(R)
    # d cost / d V_k, accumulated backwards through the steps
    multiplier = time[-1] * spatial * R[-1]
    for k in range(grid.n_tau - 1, -1, -1):
        values[k] = multiplier * free / (grid.dtau * spatial)
        if k > 0:
            multiplier = stepper.pullback(multiplier)[0] + time[k] * spatial * R[k]
        if not np.all(np.isfinite(values[k])):
            raise SolverError(f"discrete adjoint produced non-finite values at step {k} of {grid.n_tau}.")
    logger.debug("Discrete adjoint done for %s", params)
    return Trajectory(grid, values.reshape(residual.values.shape))
