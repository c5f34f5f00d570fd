"""
Cost functional, feasibility projection and the gradient-descent calibration loop.

Each iteration solves the state equation, the adjoint equation driven by the
residual V - V_d, assembles the reduced gradient and takes a line-search step.
Line-search trial points only need forward solves. The loop stops as converged
once |g| <= max(epsilon, gradient_rtol * |g_0|).
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from pricing.adjoint import residual
from pricing.conf import heston_setting
from pricing.exceptions import HestonError, ParameterError
from pricing.forward import solve_forward
from pricing.params import HestonParams, ParameterBox

from .exceptions import CalibrationError, LineSearchError
from .gradient import FORMS, adjoint_solver, assemble_gradient
from .line_search import armijo_search, projected_armijo_search

logger = logging.getLogger(__name__)

LINE_SEARCHES = ('projected', 'armijo')

CONVERGED = 'converged'
MAX_ITERS = 'max_iters'
LINE_SEARCH_FAILURE = 'line_search_failure'


@dataclass(frozen=True)
class CalibConfig:
    lam: float = field(default_factory=lambda: heston_setting('LAMBDA'))
    u_ref: HestonParams = None
    gamma: float = field(default_factory=lambda: heston_setting('GAMMA'))
    epsilon: float = field(default_factory=lambda: heston_setting('EPSILON'))
    gradient_rtol: float = field(default_factory=lambda: heston_setting('GRADIENT_RTOL'))
    max_iters: int = field(default_factory=lambda: heston_setting('MAX_ITERS'))
    min_step: float = field(default_factory=lambda: heston_setting('MIN_STEP'))
    box: ParameterBox = field(default_factory=ParameterBox.default)
    theta: float = field(default_factory=lambda: heston_setting('THETA'))
    line_search: str = field(default_factory=lambda: heston_setting('LINE_SEARCH'))
    gradient_form: str = field(default_factory=lambda: heston_setting('GRADIENT_FORM'))

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}.")
        if not self.epsilon > 0.0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}.")
        if not 0.0 <= self.gradient_rtol < 1.0:
            raise ParameterError(f"gradient_rtol must lie in [0, 1), got {self.gradient_rtol}.")
        if self.lam < 0.0:
            raise ParameterError(f"lambda must be non-negative, got {self.lam}.")
        if self.lam > 0.0 and self.u_ref is None:
            raise ParameterError("A positive lambda needs reference parameters u_ref.")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ParameterError(f"max_iters must be a non-negative integer, got {self.max_iters}.")
        if not 0.0 < self.min_step <= 1.0:
            raise ParameterError(f"min_step must lie in (0, 1], got {self.min_step}.")
        if not 0.0 < self.theta <= 1.0:
            raise ParameterError(f"theta must lie in (0, 1], got {self.theta}.")
        if self.line_search not in LINE_SEARCHES:
            raise ParameterError(f"Unknown line search '{self.line_search}', expected one of {LINE_SEARCHES}.")
        if self.gradient_form not in FORMS:
            raise ParameterError(f"Unknown gradient form '{self.gradient_form}', expected one of {FORMS}.")


@dataclass(frozen=True)
class StepRecord:
    """One accepted step: J(u), J(u_next), sigma and u_next - u."""

    iteration: int
    cost: float
    cost_next: float
    sigma: float
    step: tuple

    def satisfies_armijo(self, gamma):
        squared = float(np.dot(self.step, self.step))
        return self.cost_next - self.cost <= -(gamma / self.sigma) * squared


def improvement(j0, j_opt):
    """Relative cost reduction (J0 - J_opt) / J0."""
    if not j0 > 0.0:
        raise ValueError(f"Initial cost must be positive, got {j0}.")
    return (j0 - j_opt) / j0


@dataclass(frozen=True)
class CalibrationResult:
    u0: HestonParams
    u_opt: HestonParams
    cost_history: tuple
    grad_norm_history: tuple
    gradients: tuple
    steps: tuple
    status: str

    @property
    def iterations(self):
        return len(self.steps)

    @property
    def j0(self):
        return self.cost_history[0]

    @property
    def j_opt(self):
        return self.cost_history[-1]

    @property
    def improvement(self):
        return 0.0 if self.j0 == 0.0 else improvement(self.j0, self.j_opt)


def cost(V, V_d, u, cfg):
    """1/2 int_0^T ||V - V_d||^2 dtau + lam/2 ||u - u_ref||^2."""
    V.check_same_grid(V_d)
    diff = V.values - V_d.values
    value = 0.5 * V.grid.integrate(diff * diff)
    if cfg.lam > 0.0:
        gap = u.as_array() - cfg.u_ref.as_array()
        value += 0.5 * cfg.lam * float(np.dot(gap, gap))
    return value


def project(u, cfg):
    """Clamp to the box, then shrink sigma_nu onto the Feller boundary if needed."""
    box = cfg.box
    sigma, rho, kappa, mu = box.clip(u.as_array())
    sigma_lo, mu_hi = box.lower[0], box.upper[3]

    if sigma_lo ** 2 > 2.0 * kappa * mu:
        mu = sigma_lo ** 2 / (2.0 * kappa)
        while 2.0 * kappa * mu < sigma_lo ** 2:
            mu = math.nextafter(mu, math.inf)
        if mu > mu_hi:
            raise ParameterError(f"Box {box.as_mapping()} holds no Feller-feasible point with kappa_nu={kappa}.")

    if sigma ** 2 > 2.0 * kappa * mu:
        sigma = max(math.sqrt(2.0 * kappa * mu), sigma_lo)
        while sigma ** 2 > 2.0 * kappa * mu:
            sigma = math.nextafter(sigma, 0.0)
    return HestonParams(float(sigma), float(rho), float(kappa), float(mu))


def is_feasible(u, cfg):
    return cfg.box.contains(u) and u.satisfies_feller


class _ForwardCost:
    """Reduced cost u -> J(V(u), u) with the trajectory of the last evaluation kept."""

    def __init__(self, V_d, market, grid, cfg, reject_infeasible):
        self.V_d = V_d
        self.market = market
        self.grid = grid
        self.cfg = cfg
        self.reject_infeasible = reject_infeasible
        self.solves = 0
        self._cache = {}

    def trajectory(self, values):
        return self._cache[tuple(np.asarray(values, dtype=float))]

    def __call__(self, values):
        params = HestonParams.from_array(values)
        if self.reject_infeasible and not is_feasible(params, self.cfg):
            return math.inf
        V = solve_forward(params, self.market, self.grid, self.cfg.theta, self.cfg.box)
        self.solves += 1
        self._cache = {tuple(params.as_array()): V}
        return cost(V, self.V_d, params, self.cfg)


def calibrate(u0, V_d, market, grid, cfg=None):
    cfg = cfg or CalibConfig()
    if V_d.grid != grid:
        raise CalibrationError("Data trajectory lives on a different grid than the calibration.")

    u = start = project(u0, cfg)
    if u != u0:
        logger.info("Initial guess %s projected to %s", u0, u)
    reduced_cost = _ForwardCost(V_d, market, grid, cfg, reject_infeasible=cfg.line_search == 'armijo')
    solve_adjoint = adjoint_solver(cfg.gradient_form)

    iteration = 0
    try:
        J = reduced_cost(u.as_array())
        V = reduced_cost.trajectory(u.as_array())
        costs, grad_norms, gradients, steps = [J], [], [], []
        status = MAX_ITERS

        for iteration in range(cfg.max_iters):
            phi = solve_adjoint(u, market, grid, residual(V, V_d), cfg.theta, cfg.box)
            g = assemble_gradient(
                V, phi, u, market, grid, cfg.lam, cfg.u_ref, cfg.gradient_form, cfg.theta, cfg.box,
            )
            grad_norms.append(g.norm)
            gradients.append(g)
            logger.info(
                "iter %d: J=%.6e |g|=%.3e g=(%.3e, %.3e, %.3e, %.3e)",
                iteration, J, g.norm, *g.as_array(),
            )
            if g.norm <= max(cfg.epsilon, cfg.gradient_rtol * grad_norms[0]):
                status = CONVERGED
                break

            u_vec, g_vec = u.as_array(), g.as_array()
            try:
                if cfg.line_search == 'projected':
                    trial = projected_armijo_search(
                        reduced_cost, u_vec, g_vec, cfg.gamma,
                        lambda point: project(HestonParams.from_array(point), cfg).as_array(),
                        cfg.min_step, f_u=J,
                    )
                else:
                    trial = armijo_search(reduced_cost, u_vec, -g_vec, g_vec, cfg.gamma, cfg.min_step, f_u=J)
            except LineSearchError as exc:
                logger.warning("iter %d: %s", iteration, exc)
                status = LINE_SEARCH_FAILURE
                break

            step = trial.point - u_vec
            if not np.any(step):
                logger.info("iter %d: projected step vanishes, stationary on the feasible set", iteration)
                status = CONVERGED
                break

            steps.append(StepRecord(iteration, J, trial.value, trial.sigma, tuple(step)))
            logger.info("iter %d: accepted sigma=%.3e, J -> %.6e", iteration, trial.sigma, trial.value)
            u = HestonParams.from_array(trial.point)
            V = reduced_cost.trajectory(trial.point)
            J = trial.value
            costs.append(J)
    except CalibrationError:
        raise
    except HestonError as exc:
        raise CalibrationError(str(exc), iteration=iteration) from exc

    logger.info(
        "Calibration finished: %s after %d steps, %d forward solves, J %.6e -> %.6e",
        status, len(steps), reduced_cost.solves, costs[0], costs[-1],
    )
    return CalibrationResult(
        u0=start, u_opt=u, cost_history=tuple(costs), grad_norm_history=tuple(grad_norms),
        gradients=tuple(gradients), steps=tuple(steps), status=status,
    )
