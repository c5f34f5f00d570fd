"""
Forward solve of the log-transformed Heston put with the modified Craig-Sneyd scheme.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from .conf import heston_setting
from .exceptions import DomainError, GridError, SolverError
from .grid import assemble_operators

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fields at tau_0 .. tau_{n_tau}, stacked as values[k, i, j]. Read-only."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = (self.grid.n_tau + 1,) + self.grid.shape
        if values.shape != expected:
            raise GridError(f"Trajectory shape {values.shape} does not match grid {expected}.")
        if not np.all(np.isfinite(values)):
            raise SolverError("Trajectory contains non-finite values.")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    def check_same_grid(self, other):
        if self.grid != other.grid:
            raise GridError(f"Trajectories live on different grids: {self.grid} vs {other.grid}.")

    def __sub__(self, other):
        self.check_same_grid(other)
        return Trajectory(self.grid, self.values - other.values)

    def scaled(self, alpha):
        return Trajectory(self.grid, alpha * self.values)


def initial_condition(grid, market):
    """Put payoff max(K - e^x, 0) on every variance line."""
    payoff = np.maximum(market.K - np.exp(grid.x), 0.0)
    return np.repeat(payoff[:, np.newaxis], grid.n_nu + 1, axis=1)


def smoothed_initial_condition(grid, market):
    """Payoff with the node whose cell [x - dx/2, x + dx/2] straddles log K set to the cell average."""
    values = initial_condition(grid, market)
    lo, hi = grid.x - 0.5 * grid.dx, grid.x + 0.5 * grid.dx
    log_k = market.log_strike
    kink = (lo < log_k) & (log_k < hi)
    top = np.minimum(hi, log_k)
    average = (market.K * (top - lo) - (np.exp(top) - np.exp(lo))) / grid.dx
    values[kink, :] = average[kink, np.newaxis]
    return values


class CraigSneydStepper:
    """One mCS step for fixed operators; the two implicit stage matrices are factorized once."""

    def __init__(self, ops, theta, dtau):
        if not 0.0 < theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {theta}.")
        if dtau < 0.0:
            raise ValueError(f"dtau must be non-negative, got {dtau}.")
        self.ops = ops
        self.theta = theta
        self.dtau = dtau
        self._lower_rows = ops.lower_rows
        self._upper_rows = ops.upper_rows
        self._free = np.ones(ops.grid.size)
        self._free[self._lower_rows] = 0.0
        self._free[self._upper_rows] = 0.0
        self._F = ops.F
        eye = sparse.identity(ops.grid.size, format='csc')
        scale = theta * dtau
        try:
            self._lu_x = splu((eye - scale * ops.Fx).tocsc())
            self._lu_nu = splu((eye - scale * ops.Fnu).tocsc())
        except RuntimeError as exc:
            raise SolverError(f"Singular ADI stage matrix (theta={theta}, dtau={dtau}): {exc}") from exc

    def _implicit(self, lu, rhs, boundary):
        lower, upper = boundary
        rhs[self._lower_rows] = lower
        rhs[self._upper_rows] = upper
        return lu.solve(rhs)

    def _stages(self, field, tau_next, source=None):
        """(v, y0, yx, ynu, y0_tilde, yx_tilde, ynu_tilde) of one step, flattened."""
        ops, theta, dt = self.ops, self.theta, self.dtau
        v = np.asarray(field, dtype=float).ravel()
        boundary = ops.boundary_values(tau_next)

        f0, fx, fnu = ops.F0 @ v, ops.Fx @ v, ops.Fnu @ v
        y0 = v + dt * (f0 + fx + fnu)
        if source is not None:
            y0 = y0 + dt * np.asarray(source, dtype=float).ravel()
        yx = self._implicit(self._lu_x, y0 - theta * dt * fx, boundary)
        ynu = self._implicit(self._lu_nu, yx - theta * dt * fnu, boundary)

        y0_hat = y0 + theta * dt * (ops.F0 @ ynu - f0)
        y0_tilde = y0_hat + (0.5 - theta) * dt * (self._F @ (ynu - v))
        yx_tilde = self._implicit(self._lu_x, y0_tilde - theta * dt * fx, boundary)
        ynu_tilde = self._implicit(self._lu_nu, yx_tilde - theta * dt * fnu, boundary)

        ynu_tilde[self._lower_rows], ynu_tilde[self._upper_rows] = boundary
        return v, y0, yx, ynu, y0_tilde, yx_tilde, ynu_tilde

    def step(self, field, tau_next, source=None):
        return self._stages(field, tau_next, source)[-1].reshape(self.ops.grid.shape)

    def pullback(self, cotangent, field=None, tau_next=None, derivatives=()):
        """Reverse pass through one step.

        Returns ``(w, dots)``: w = cotangent . d(step)/d(field), flattened, and for
        each operator derivative dF in ``derivatives`` (SplitOperators of dF0, dFx,
        dFnu) the scalar cotangent . d(step)/dp at ``field``. The Dirichlet rows of
        the output do not depend on the input, so their cotangent is ignored.
        """
        ops, theta, dt = self.ops, self.theta, self.dtau
        s = theta * dt
        free = self._free
        bar_out = np.asarray(cotangent, dtype=float).ravel() * free

        r_out = self._lu_nu.solve(bar_out, trans='T')
        z = r_out * free
        bar_v = -s * (ops.Fnu.T @ z)
        r_xt = self._lu_x.solve(z, trans='T')
        w = r_xt * free
        bar_v -= s * (ops.Fx.T @ w)

        bar_y0t = w
        bar_ynu = s * (ops.F0.T @ bar_y0t) + (0.5 - theta) * dt * (self._F.T @ bar_y0t)
        bar_v -= bar_ynu
        r_nu = self._lu_nu.solve(bar_ynu, trans='T')
        q = r_nu * free
        bar_v -= s * (ops.Fnu.T @ q)
        r_x = self._lu_x.solve(q, trans='T')
        p = r_x * free
        bar_v -= s * (ops.Fx.T @ p)

        bar_y0 = bar_y0t + p
        bar_v += bar_y0 + dt * (self._F.T @ bar_y0)
        if not derivatives:
            return bar_v, []

        v, _, yx, ynu, _, yx_tilde, ynu_tilde = self._stages(field, tau_next)
        dots = []
        for d in derivatives:
            dF = d.F
            change = ynu - v
            dots.append(float(
                dt * bar_y0 @ (dF @ v)
                + s * (r_x @ (d.Fx @ yx) - p @ (d.Fx @ v))
                + s * (r_nu @ (d.Fnu @ ynu) - q @ (d.Fnu @ v))
                + bar_y0t @ (s * (d.F0 @ change) + (0.5 - theta) * dt * (dF @ change))
                + s * (r_xt @ (d.Fx @ yx_tilde) - w @ (d.Fx @ v))
                + s * (r_out @ (d.Fnu @ ynu_tilde) - z @ (d.Fnu @ v))
            ))
        return bar_v, dots


def mcs_step(v_k, k, ops, theta, dtau, source=None):
    """Advance v_k from tau_k to tau_{k+1}; ``source`` is added in the explicit stage."""
    return CraigSneydStepper(ops, theta, dtau).step(v_k, (k + 1) * dtau, source)


def march(stepper, initial, n_steps, sources=None, label='forward'):
    """Run ``n_steps`` steps; sources[k] and sources[k+1] are averaged over step k."""
    fields = [np.asarray(initial, dtype=float)]
    field = fields[0]
    for k in range(n_steps):
        source = None if sources is None else 0.5 * (sources[k] + sources[k + 1])
        field = stepper.step(field, (k + 1) * stepper.dtau, source)
        if not np.all(np.isfinite(field)):
            raise SolverError(f"{label} march produced non-finite values at step {k + 1} of {n_steps}.")
        fields.append(field)
    return np.stack(fields)


def _check_grid(market, grid):
    if not math.isclose(grid.T, market.T, rel_tol=1e-12):
        raise GridError(f"Grid maturity {grid.T} differs from market maturity {market.T}.")


def solve_forward(params, market, grid, theta=None, box=None):
    _check_grid(market, grid)
    theta = heston_setting('THETA') if theta is None else theta
    ops = assemble_operators(params, market, grid, box)
    stepper = CraigSneydStepper(ops, theta, grid.dtau)

    payoff = smoothed_initial_condition if heston_setting('SMOOTH_PAYOFF') else initial_condition
    v0 = payoff(grid, market)
    v0[0, :], v0[-1, :] = ops.boundary_values(0.0)
    values = march(stepper, v0, grid.n_tau, label='forward')
    logger.debug("Forward solve done for %s (%d steps)", params, grid.n_tau)
    return Trajectory(grid, values)


def solve_tangent(params, market, grid, forcing, theta=None, box=None):
    """Forced forward march from zero data with homogeneous boundaries: dV_tau = F dV + f."""
    _check_grid(market, grid)
    if forcing.grid != grid:
        raise GridError("Forcing trajectory lives on a different grid.")
    theta = heston_setting('THETA') if theta is None else theta
    ops = assemble_operators(params, market, grid, box).without_forcing()
    stepper = CraigSneydStepper(ops, theta, grid.dtau)
    sources = forcing.values * grid.x_interior_mask()
    values = march(stepper, np.zeros(grid.shape), grid.n_tau, sources, label='tangent')
    return Trajectory(grid, values)


def interpolate_price(traj, s0, nu0, k=None):
    """Bilinear interpolation of traj[k] (default: last step) at (log s0, nu0)."""
    grid = traj.grid
    k = grid.n_tau if k is None else k
    if not s0 > 0:
        raise DomainError(f"Spot must be positive, got {s0}.")
    x0 = math.log(s0)
    if not (grid.x_min <= x0 <= grid.x_max and 0.0 <= nu0 <= grid.nu_max):
        raise DomainError(
            f"Query (log s0={x0:.6g}, nu0={nu0}) lies outside "
            f"[{grid.x_min:.6g}, {grid.x_max:.6g}] x [0, {grid.nu_max}]."
        )
    interpolator = RegularGridInterpolator(
        (grid.x, grid.nu), traj[k], method='linear', bounds_error=False, fill_value=None,
    )
    return float(interpolator([[x0, nu0]])[0])


def price(params, market, grid, s0, nu0, theta=None, box=None):
    """Solve once and read the value at (s0, nu0, T)."""
    return interpolate_price(solve_forward(params, market, grid, theta, box), s0, nu0)
