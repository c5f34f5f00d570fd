"""
Parameter derivatives of the constraint pairing <e(V, u), phi> and the reduced gradient.

Three forms, selected by GRADIENT_FORM:

* 'discrete' pairs the multipliers of ``solve_discrete_adjoint`` with the
  derivatives of the assembled operators, stepping back through the mCS stages.
  It is the exact gradient of the discrete reduced cost, including the nu = 0
  row's dependence on kappa mu.

* 'weak' and 'strong' pair the continuous adjoint of ``solve_adjoint``. Write the
  spatial operator in divergence form, F V = div(A grad V) + b . grad V - r V,
  with vectors ordered (nu, x). For each parameter p the derivative of F is
  div(dA grad V) + db . grad V, so

      d_p <e, phi> = -int int phi (div(dA grad V) + db . grad V)

  The weak form integrates by parts once, splitting the convection term evenly:

      int phi (...) = -int dA grad V . grad phi + 1/2 int (phi db . grad V - V db . grad phi)
                      - 1/2 int div(db) V phi + int_bdry phi (dA grad V) . n + 1/2 (db . n) V phi

  The strong form integrates phi (...) directly. Derivatives use second-order
  central differences with one-sided second-order stencils at the edges; all
  integrals are trapezoidal in x, nu and tau. Both drop the nu = 0 boundary
  row's parameter dependence, so they only approach the discrete cost's
  gradient as the mesh is refined.
"""
import logging
from dataclasses import dataclass

import numpy as np

from pricing.adjoint import solve_adjoint, solve_discrete_adjoint
from pricing.conf import heston_setting
from pricing.exceptions import GridError, ParameterError
from pricing.forward import CraigSneydStepper
from pricing.grid import assemble_operator_derivatives, assemble_operators
from pricing.params import PARAMETER_NAMES

from .exceptions import CalibrationError

logger = logging.getLogger(__name__)

FORMS = ('discrete', 'weak', 'strong')


@dataclass(frozen=True)
class Gradient4:
    g_sigma: float
    g_rho: float
    g_kappa: float
    g_mu: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise CalibrationError(f"Gradient has non-finite components: {self.as_array()}.")

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))

    def as_array(self):
        return np.array([self.g_sigma, self.g_rho, self.g_kappa, self.g_mu], dtype=float)

    @property
    def norm(self):
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class CoefficientDerivative:
    """dA (symmetric, entries nu-nu, nu-x, x-x), db = (db_nu, db_x) and div(db) for one parameter."""

    a_nunu: object = 0.0
    a_nux: object = 0.0
    a_xx: object = 0.0
    b_nu: object = 0.0
    b_x: object = 0.0
    div_b: object = 0.0


def coefficient_derivatives(params, grid):
    sigma, rho, kappa, mu = params.as_array()
    nu = grid.nu[np.newaxis, :]
    return {
        'sigma_nu': CoefficientDerivative(a_nunu=sigma * nu, a_nux=0.5 * rho * nu, b_nu=-sigma, b_x=-0.5 * rho),
        'rho': CoefficientDerivative(a_nux=0.5 * sigma * nu, b_x=-0.5 * sigma),
        'kappa_nu': CoefficientDerivative(b_nu=mu - nu, div_b=-1.0),
        'mu_nu': CoefficientDerivative(b_nu=kappa),
    }


def _gradients(values, grid):
    d_x, d_nu = np.gradient(values, grid.dx, grid.dnu, axis=(1, 2), edge_order=2)
    return d_nu, d_x


def _edge_integral(values, grid, edge):
    """Time-integrated trapezoidal line integral of values along one edge of the rectangle."""
    if edge in ('x_min', 'x_max'):
        line = values[:, 0 if edge == 'x_min' else -1, :]
        spatial = np.trapezoid(line, grid.nu, axis=-1)
    else:
        line = values[:, :, 0 if edge == 'nu_min' else -1]
        spatial = np.trapezoid(line, grid.x, axis=-1)
    return float(np.trapezoid(spatial, grid.tau))


# outward normal per edge as (n_nu, n_x)
NORMALS = {'x_min': (0.0, -1.0), 'x_max': (0.0, 1.0), 'nu_min': (-1.0, 0.0), 'nu_max': (1.0, 0.0)}


def _pairing(coeff, V, phi, grid, form):
    v, p = V.values, phi.values
    v_nu, v_x = _gradients(v, grid)
    flux_nu = coeff.a_nunu * v_nu + coeff.a_nux * v_x
    flux_x = coeff.a_nux * v_nu + coeff.a_xx * v_x

    if form == 'strong':
        div_flux = (
            np.gradient(flux_nu, grid.dnu, axis=2, edge_order=2)
            + np.gradient(flux_x, grid.dx, axis=1, edge_order=2)
        )
        return grid.integrate(p * (div_flux + coeff.b_nu * v_nu + coeff.b_x * v_x))

    p_nu, p_x = _gradients(p, grid)
    volume = (
        -(flux_nu * p_nu + flux_x * p_x)
        + 0.5 * (p * (coeff.b_nu * v_nu + coeff.b_x * v_x) - v * (coeff.b_nu * p_nu + coeff.b_x * p_x))
        - 0.5 * coeff.div_b * v * p
    )
    total = grid.integrate(volume)
    b_nu = np.broadcast_to(coeff.b_nu, grid.shape)
    b_x = np.broadcast_to(coeff.b_x, grid.shape)
    for edge, (n_nu, n_x) in NORMALS.items():
        flux_n = n_nu * flux_nu + n_x * flux_x
        b_n = n_nu * b_nu + n_x * b_x
        total += _edge_integral(p * flux_n + 0.5 * b_n * v * p, grid, edge)
    return total


def checked_form(form=None):
    form = form or heston_setting('GRADIENT_FORM')
    if form not in FORMS:
        raise ParameterError(f"Unknown gradient form '{form}', expected one of {FORMS}.")
    return form


def adjoint_solver(form=None):
    """The adjoint solve whose output the given form pairs with."""
    return solve_discrete_adjoint if checked_form(form) == 'discrete' else solve_adjoint


def _discrete_pairings(names, V, phi, params, market, grid, theta, box):
    theta = heston_setting('THETA') if theta is None else theta
    stepper = CraigSneydStepper(assemble_operators(params, market, grid, box), theta, grid.dtau)
    derivatives = assemble_operator_derivatives(params, market, grid)
    derivatives = [derivatives[name] for name in names]
    spatial = grid.spatial_weights()
    totals = np.zeros(len(names))
    for k in range(grid.n_tau):
        multiplier = grid.dtau * spatial * phi[k]
        if not multiplier.any():
            continue
        _, dots = stepper.pullback(multiplier, V[k], (k + 1) * grid.dtau, derivatives)
        totals += dots
    # the step constraint V_{k+1} - S(V_k) = 0 enters the Lagrangian with a minus sign
    return -totals


def _constraint_derivatives(names, V, phi, params, market, grid, form=None, theta=None, box=None):
    form = checked_form(form)
    V.check_same_grid(phi)
    if V.grid != grid:
        raise GridError("State trajectory lives on a different grid than requested.")
    if form == 'discrete':
        return _discrete_pairings(names, V, phi, params, market, grid, theta, box)
    coefficients = coefficient_derivatives(params, grid)
    return np.array([-_pairing(coefficients[name], V, phi, grid, form) for name in names])


def gradient_sigma(V, phi, params, market, grid, form=None, theta=None, box=None):
    return float(_constraint_derivatives(('sigma_nu',), V, phi, params, market, grid, form, theta, box)[0])


def gradient_rho(V, phi, params, market, grid, form=None, theta=None, box=None):
    return float(_constraint_derivatives(('rho',), V, phi, params, market, grid, form, theta, box)[0])


def gradient_kappa(V, phi, params, market, grid, form=None, theta=None, box=None):
    return float(_constraint_derivatives(('kappa_nu',), V, phi, params, market, grid, form, theta, box)[0])


def gradient_mu(V, phi, params, market, grid, form=None, theta=None, box=None):
    return float(_constraint_derivatives(('mu_nu',), V, phi, params, market, grid, form, theta, box)[0])


def assemble_gradient(V, phi, params, market, grid, lam=0.0, u_ref=None, form=None, theta=None, box=None):
    """Reduced gradient lam (u - u_ref) - d_u <e, phi>."""
    derivatives = _constraint_derivatives(PARAMETER_NAMES, V, phi, params, market, grid, form, theta, box)
    reduced = -derivatives
    if lam:
        if u_ref is None:
            raise ParameterError("A positive Tikhonov weight needs reference parameters.")
        reduced = reduced + lam * (params.as_array() - u_ref.as_array())
    return Gradient4.from_array(reduced)
