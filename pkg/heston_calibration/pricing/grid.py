"""
Uniform (x, nu, tau) mesh and the split finite-difference operators F0, Fx, Fnu.

Fields are 2-D arrays indexed [i, j] <-> (x_i, nu_j). Operators act on the
C-ordered flattening of a field, so row p = i * (n_nu + 1) + j.

Row ownership:
  * i = 0 and i = n_x are Dirichlet rows: every operator row is zero there and
    the stepper replaces the stage right-hand side with the boundary value.
  * j = 0 (nu = 0) and j = n_nu (nu_max) carry their own boundary PDEs, folded
    into Fx / Fnu so each direction keeps its line structure.

The variance drift kappa (mu - nu) d/dnu is differenced per node by one of
NU_DRIFT_SCHEMES:
  * 'hybrid': central wherever the local diffusion keeps every neighbour weight
    non-negative, first-order upwind elsewhere (always on the nu = 0 row).
  * 'upwind': first-order upwind everywhere.
  * 'upwind2': three-point one-sided upwind, first order where the stencil
    would leave the grid.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .conf import heston_setting
from .exceptions import GridError
from .params import ParameterBox

logger = logging.getLogger(__name__)

MIN_CELLS = 4

NU_DRIFT_SCHEMES = ('hybrid', 'upwind', 'upwind2')

# stencil mode -> ((offset in j, weight * dnu), ...)
NU_DRIFT_STENCILS = {
    0: ((-1, -0.5), (1, 0.5)),
    1: ((0, -1.0), (1, 1.0)),
    -1: ((-1, -1.0), (0, 1.0)),
    2: ((0, -1.5), (1, 2.0), (2, -0.5)),
    -2: ((-2, 0.5), (-1, -2.0), (0, 1.5)),
}


def trapezoid_weights(n_cells, spacing):
    weights = np.full(n_cells + 1, float(spacing))
    weights[[0, -1]] *= 0.5
    return weights


@dataclass(frozen=True)
class TruncationConfig:
    x_half_width: float = field(default_factory=lambda: heston_setting('X_HALF_WIDTH'))
    nu_max: float = field(default_factory=lambda: heston_setting('NU_MAX'))
    x_min: float = None
    x_max: float = None

    def x_bounds(self, market):
        x_min = market.log_strike - self.x_half_width if self.x_min is None else self.x_min
        x_max = market.log_strike + self.x_half_width if self.x_max is None else self.x_max
        return float(x_min), float(x_max)


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    nu_max: float
    T: float
    n_x: int
    n_nu: int
    n_tau: int

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.n_x

    @property
    def dnu(self):
        return self.nu_max / self.n_nu

    @property
    def dtau(self):
        return self.T / self.n_tau

    @property
    def x(self):
        return self.x_min + np.arange(self.n_x + 1) * self.dx

    @property
    def nu(self):
        return np.arange(self.n_nu + 1) * self.dnu

    @property
    def tau(self):
        return np.arange(self.n_tau + 1) * self.dtau

    @property
    def shape(self):
        return (self.n_x + 1, self.n_nu + 1)

    @property
    def size(self):
        return (self.n_x + 1) * (self.n_nu + 1)

    def mesh(self):
        """Node coordinates as two arrays of ``shape``."""
        return np.meshgrid(self.x, self.nu, indexing='ij')

    def x_interior_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, :] = True
        return mask

    def interior_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    def nu_min_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, 0] = True
        return mask

    def nu_max_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, -1] = True
        return mask

    def spatial_weights(self):
        """Trapezoidal weights w_i * w_j; sum(weights * field) equals ``integrate(field)``."""
        return np.outer(trapezoid_weights(self.n_x, self.dx), trapezoid_weights(self.n_nu, self.dnu))

    def time_weights(self):
        return trapezoid_weights(self.n_tau, self.dtau)

    def integrate(self, values):
        """Trapezoidal integral over (x, nu) of a field, and over tau as well for a stack of fields."""
        values = np.asarray(values, dtype=float)
        spatial = np.trapezoid(np.trapezoid(values, self.nu, axis=-1), self.x, axis=-1)
        if values.ndim == 2:
            return float(spatial)
        if values.ndim == 3:
            return float(np.trapezoid(spatial, self.tau))
        raise GridError(f"Cannot integrate an array of shape {values.shape} over the grid.")

    def flat_index(self, i, j):
        return np.ravel_multi_index((np.asarray(i), np.asarray(j)), self.shape)

    def with_counts(self, n_x=None, n_nu=None, n_tau=None):
        return replace(
            self,
            n_x=self.n_x if n_x is None else n_x,
            n_nu=self.n_nu if n_nu is None else n_nu,
            n_tau=self.n_tau if n_tau is None else n_tau,
        )


def build_grid(market, n_x, n_nu, n_tau, truncation=None):
    truncation = truncation or TruncationConfig()
    for name, count in (('n_x', n_x), ('n_nu', n_nu), ('n_tau', n_tau)):
        if int(count) != count or count < MIN_CELLS:
            raise GridError(f"{name} must be an integer >= {MIN_CELLS}, got {count}.")
    x_min, x_max = truncation.x_bounds(market)
    if not x_min < market.log_strike < x_max:
        raise GridError(
            f"Strike must be interior to the grid: need {x_min} < log(K)={market.log_strike:.6g} < {x_max}."
        )
    if not (math.isfinite(truncation.nu_max) and truncation.nu_max > 0):
        raise GridError(f"nu_max must be positive, got {truncation.nu_max}.")
    return Grid(
        x_min=x_min, x_max=x_max, nu_max=float(truncation.nu_max), T=float(market.T),
        n_x=int(n_x), n_nu=int(n_nu), n_tau=int(n_tau),
    )


def upwind_first_nu(a, dnu):
    """Weights (w_{j-1}, w_j, w_{j+1}) of a * d/dnu, differencing toward the drift.

    a > 0 gives the forward difference, a < 0 the backward one, a = 0 nothing.
    Works elementwise on arrays.
    """
    if not dnu > 0:
        raise GridError(f"dnu must be positive, got {dnu}.")
    a = np.asarray(a, dtype=float)
    w_minus = -np.minimum(a, 0.0) / dnu
    w_plus = np.maximum(a, 0.0) / dnu
    w_center = -np.abs(a) / dnu
    if a.ndim == 0:
        return float(w_minus), float(w_center), float(w_plus)
    return w_minus, w_center, w_plus


def nu_drift_modes(drift, diffusion, dnu, scheme=None):
    """Per-node stencil mode for drift * d/dnu along the last axis (keys of NU_DRIFT_STENCILS).

    ``diffusion`` is the coefficient of d2/dnu2 at the same nodes; 'hybrid'
    differences centrally where |drift| dnu <= 2 diffusion.
    """
    scheme = scheme or heston_setting('NU_DRIFT')
    if scheme not in NU_DRIFT_SCHEMES:
        raise GridError(f"Unknown variance-drift scheme '{scheme}', expected one of {NU_DRIFT_SCHEMES}.")
    drift = np.asarray(drift, dtype=float)
    diffusion = np.broadcast_to(np.asarray(diffusion, dtype=float), drift.shape)
    modes = np.sign(drift).astype(int)
    if scheme == 'hybrid':
        modes[np.abs(drift) * dnu <= 2.0 * diffusion] = 0
    elif scheme == 'upwind2':
        j = np.arange(drift.shape[-1])
        fits = np.where(modes > 0, j + 2 < drift.shape[-1], j >= 2)
        modes = np.where(fits, 2 * modes, modes)
    return modes


class StencilAssembler:
    """Accumulates stencil entries row by row and emits a CSR matrix."""

    def __init__(self, grid):
        self.grid = grid
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, mask, di, dj, coeff):
        shape = self.grid.shape
        i, j = np.nonzero(mask)
        vals = np.broadcast_to(np.asarray(coeff, dtype=float), shape)[i, j]
        ni, nj = i + di, j + dj
        inside = (ni >= 0) & (ni < shape[0]) & (nj >= 0) & (nj < shape[1])
        if np.any(~inside & (vals != 0.0)):
            raise GridError(f"Stencil offset ({di}, {dj}) leaves the grid.")
        keep = inside & (vals != 0.0)
        self._rows.append(np.ravel_multi_index((i[keep], j[keep]), shape))
        self._cols.append(np.ravel_multi_index((ni[keep], nj[keep]), shape))
        self._vals.append(vals[keep])

    def diagonal(self, mask, coeff):
        self.add(mask, 0, 0, coeff)

    def first_x(self, mask, coeff):
        c = np.asarray(coeff) / (2.0 * self.grid.dx)
        self.add(mask, -1, 0, -c)
        self.add(mask, 1, 0, c)

    def second_x(self, mask, coeff):
        c = np.asarray(coeff) / self.grid.dx ** 2
        self.add(mask, -1, 0, c)
        self.add(mask, 0, 0, -2.0 * c)
        self.add(mask, 1, 0, c)

    def second_nu(self, mask, coeff):
        c = np.asarray(coeff) / self.grid.dnu ** 2
        self.add(mask, 0, -1, c)
        self.add(mask, 0, 0, -2.0 * c)
        self.add(mask, 0, 1, c)

    def upwind_nu(self, mask, coeff):
        w_minus, w_center, w_plus = upwind_first_nu(np.broadcast_to(coeff, self.grid.shape), self.grid.dnu)
        self.add(mask, 0, -1, w_minus)
        self.add(mask, 0, 0, w_center)
        self.add(mask, 0, 1, w_plus)

    def drift_nu(self, mask, coeff, modes):
        """coeff * d/dnu with the per-node stencil picked by ``modes``; linear in coeff for fixed modes."""
        c = np.broadcast_to(np.asarray(coeff, dtype=float), self.grid.shape) / self.grid.dnu
        for mode, stencil in NU_DRIFT_STENCILS.items():
            rows = mask & (modes == mode)
            if not rows.any():
                continue
            for dj, weight in stencil:
                self.add(rows, 0, dj, weight * c)

    def mixed(self, mask, coeff):
        c = np.asarray(coeff) / (4.0 * self.grid.dx * self.grid.dnu)
        self.add(mask, 1, 1, c)
        self.add(mask, 1, -1, -c)
        self.add(mask, -1, 1, -c)
        self.add(mask, -1, -1, c)

    def matrix(self):
        n = self.grid.size
        if not self._rows:
            return sparse.csr_matrix((n, n))
        rows = np.concatenate(self._rows)
        cols = np.concatenate(self._cols)
        vals = np.concatenate(self._vals)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class SplitOperators:
    """F = F0 + Fx + Fnu plus the Dirichlet data for the x-boundaries.

    The lower x-boundary carries lower_value * exp(-lower_rate * tau), the
    upper one upper_value. Dirichlet rows of all three matrices are zero.
    """

    grid: Grid
    F0: sparse.csr_matrix
    Fx: sparse.csr_matrix
    Fnu: sparse.csr_matrix
    lower_value: float = 0.0
    lower_rate: float = 0.0
    upper_value: float = 0.0

    @property
    def F(self):
        return self.F0 + self.Fx + self.Fnu

    @property
    def lower_rows(self):
        return self.grid.flat_index(np.zeros(self.grid.n_nu + 1, dtype=int), np.arange(self.grid.n_nu + 1))

    @property
    def upper_rows(self):
        return self.grid.flat_index(np.full(self.grid.n_nu + 1, self.grid.n_x), np.arange(self.grid.n_nu + 1))

    def boundary_values(self, tau):
        return self.lower_value * math.exp(-self.lower_rate * tau), self.upper_value

    def apply(self, field):
        return (self.F @ np.asarray(field, dtype=float).ravel()).reshape(self.grid.shape)

    def without_forcing(self):
        return replace(self, lower_value=0.0, lower_rate=0.0, upper_value=0.0)


def _variance_drift(params, grid, scheme):
    """Rows carrying the nu-drift, kappa (mu - nu) on the grid, and the stencil modes at those rows."""
    sigma, _, kappa, mu = params.as_array()
    nu = np.broadcast_to(grid.nu[np.newaxis, :], grid.shape)
    rows = grid.interior_mask() | grid.nu_min_mask()
    drift = kappa * (mu - nu)
    modes = nu_drift_modes(drift, 0.5 * sigma ** 2 * nu, grid.dnu, scheme)
    return rows, nu, modes


def assemble_operators(params, market, grid, box=None, scheme=None):
    """Discretize V_tau = F V for the log-transformed Heston put."""
    (box or ParameterBox.default()).check(params)
    sigma, rho, kappa, mu = params.as_array()
    r, q = market.r, market.q
    nu = grid.nu[np.newaxis, :]
    interior = grid.interior_mask()
    x_rows = grid.x_interior_mask()

    f0 = StencilAssembler(grid)
    f0.mixed(interior, rho * sigma * nu)

    # the nu = 0 and nu_max rows share this form: nu/2 and r - q - nu/2 reduce correctly
    fx = StencilAssembler(grid)
    fx.second_x(x_rows, 0.5 * nu)
    fx.first_x(x_rows, r - q - 0.5 * nu)
    fx.diagonal(x_rows, -r)

    # the nu = 0 row keeps only kappa mu d/dnu from this direction
    drift_rows, nu_full, modes = _variance_drift(params, grid, scheme)
    fnu = StencilAssembler(grid)
    fnu.second_nu(interior, 0.5 * sigma ** 2 * nu)
    fnu.drift_nu(drift_rows, kappa * (mu - nu_full), modes)

    logger.debug("Assembled forward operators for %s on %sx%s", params, grid.n_x, grid.n_nu)
    return SplitOperators(
        grid=grid, F0=f0.matrix(), Fx=fx.matrix(), Fnu=fnu.matrix(),
        lower_value=market.K, lower_rate=r, upper_value=0.0,
    )


def assemble_operator_derivatives(params, market, grid, scheme=None):
    """d(F0, Fx, Fnu)/dp for p in PARAMETER_NAMES, as forcing-free SplitOperators.

    Stencil modes are frozen at ``params``, so each result is the exact
    derivative of ``assemble_operators`` away from mode switches.
    """
    sigma, rho, kappa, mu = params.as_array()
    nu = grid.nu[np.newaxis, :]
    interior = grid.interior_mask()
    drift_rows, nu_full, modes = _variance_drift(params, grid, scheme)

    def operators(f0=None, fnu=None):
        empty = StencilAssembler(grid).matrix()
        return SplitOperators(
            grid=grid,
            F0=empty if f0 is None else f0.matrix(),
            Fx=empty,
            Fnu=empty if fnu is None else fnu.matrix(),
        )

    d_sigma_0, d_sigma_nu = StencilAssembler(grid), StencilAssembler(grid)
    d_sigma_0.mixed(interior, rho * nu)
    d_sigma_nu.second_nu(interior, sigma * nu)

    d_rho_0 = StencilAssembler(grid)
    d_rho_0.mixed(interior, sigma * nu)

    d_kappa_nu = StencilAssembler(grid)
    d_kappa_nu.drift_nu(drift_rows, mu - nu_full, modes)

    d_mu_nu = StencilAssembler(grid)
    d_mu_nu.drift_nu(drift_rows, kappa, modes)

    return {
        'sigma_nu': operators(f0=d_sigma_0, fnu=d_sigma_nu),
        'rho': operators(f0=d_rho_0),
        'kappa_nu': operators(fnu=d_kappa_nu),
        'mu_nu': operators(fnu=d_mu_nu),
    }
