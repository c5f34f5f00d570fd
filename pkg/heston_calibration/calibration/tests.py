import math

import numpy as np
from django.test import SimpleTestCase, tag

from pricing.adjoint import residual, solve_adjoint, solve_discrete_adjoint
from pricing.exceptions import ParameterError
from pricing.forward import Trajectory, solve_forward
from pricing.grid import TruncationConfig, build_grid
from pricing.params import INITIAL_GUESS, REFERENCE_MARKET, REFERENCE_PARAMS, HestonParams, MarketSpec, ParameterBox

from .calibrator import CONVERGED, CalibConfig, calibrate, cost, improvement, is_feasible, project
from .exceptions import CalibrationError, LineSearchError
from .gradient import (
    Gradient4, adjoint_solver, assemble_gradient, gradient_kappa, gradient_mu, gradient_rho, gradient_sigma,
)
from .line_search import armijo_search, projected_armijo_search
from .oracle import central_difference_gradient, finite_difference_gradient

GRADIENTS = (gradient_sigma, gradient_rho, gradient_kappa, gradient_mu)


def small_problem(n_x=16, n_nu=12, n_tau=8):
    grid = build_grid(REFERENCE_MARKET, n_x, n_nu, n_tau)
    V_d = solve_forward(REFERENCE_PARAMS, REFERENCE_MARKET, grid)
    return grid, V_d


class CostTests(SimpleTestCase):
    def setUp(self):
        self.grid, self.V_d = small_problem()
        self.cfg = CalibConfig()

    def test_exact_data_costs_nothing(self):
        self.assertEqual(cost(self.V_d, self.V_d, REFERENCE_PARAMS, self.cfg), 0.0)

    def test_tikhonov_term(self):
        u_ref = HestonParams(0.9, 0.1, 5.5, 0.16)
        cfg = CalibConfig(lam=2.0, u_ref=u_ref)
        self.assertAlmostEqual(cost(self.V_d, self.V_d, REFERENCE_PARAMS, cfg), 0.25)

    def test_unit_residual(self):
        shifted = Trajectory(self.grid, self.V_d.values + 1.0)
        area = (self.grid.x_max - self.grid.x_min) * self.grid.nu_max
        self.assertAlmostEqual(cost(shifted, self.V_d, REFERENCE_PARAMS, self.cfg), 0.5 * area * self.grid.T)

    def test_config_validation(self):
        with self.assertRaises(ParameterError):
            CalibConfig(gamma=1.0)
        with self.assertRaises(ParameterError):
            CalibConfig(lam=1.0)
        with self.assertRaises(ParameterError):
            CalibConfig(line_search='wolfe')
        with self.assertRaises(ParameterError):
            CalibConfig(gradient_rtol=1.0)
        with self.assertRaises(ParameterError):
            CalibConfig(gradient_form='spectral')


class ProjectionTests(SimpleTestCase):
    def setUp(self):
        self.cfg = CalibConfig()

    def test_reference_parameters_unchanged(self):
        self.assertEqual(project(REFERENCE_PARAMS, self.cfg), REFERENCE_PARAMS)

    def test_feller_shrinks_sigma(self):
        projected = project(HestonParams(2.0, 0.1, 5.0, 0.16), self.cfg)
        self.assertAlmostEqual(projected.sigma_nu, math.sqrt(1.6), places=12)
        self.assertTrue(projected.satisfies_feller)

    def test_clamps_correlation(self):
        self.assertEqual(project(HestonParams(0.9, 1.2, 5.0, 0.16), self.cfg).rho, 0.999)

    def test_raises_mu_when_sigma_floor_breaks_feller(self):
        box = ParameterBox(lower=(0.5, -0.9, 0.1, 0.01), upper=(2.0, 0.9, 10.0, 1.0))
        cfg = CalibConfig(box=box)
        projected = project(HestonParams(0.6, 0.0, 0.5, 0.1), cfg)
        self.assertTrue(is_feasible(projected, cfg))
        self.assertAlmostEqual(projected.mu_nu, 0.25)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            u = HestonParams(*rng.uniform([0.0, -1.5, 0.0, 0.0], [3.0, 1.5, 25.0, 1.5]))
            once = project(u, self.cfg)
            self.assertTrue(is_feasible(once, self.cfg))
            self.assertEqual(project(once, self.cfg), once)


class LineSearchTests(SimpleTestCase):
    def test_quadratic_takes_full_step(self):
        u = np.array([1.0, -2.0, 0.5])
        step = armijo_search(lambda v: 0.5 * v @ v, u, -u, u, gamma=1e-4)
        self.assertEqual(step.sigma, 1.0)

    def test_stiff_quadratic_backtracks(self):
        f = lambda v: 50.0 * float(v[0]) ** 2
        step = armijo_search(f, np.array([1.0]), np.array([-100.0]), np.array([100.0]), gamma=1e-4)
        self.assertEqual(step.sigma, 1.0 / 64.0)

    def test_rejects_ascent_direction(self):
        u = np.array([1.0])
        with self.assertRaises(ValueError):
            armijo_search(lambda v: float(v @ v), u, u, 2 * u)

    def test_fails_below_min_step(self):
        u = np.array([1.0, 1.0])
        with self.assertRaises(LineSearchError):
            projected_armijo_search(lambda v: float(v @ v), u, -u, gamma=1e-4, min_step=2.0 ** -5)

    def test_zero_gradient_is_fixed_point(self):
        u = np.array([0.3, 0.2])
        step = projected_armijo_search(lambda v: float(v @ v), u, np.zeros(2))
        self.assertEqual(step.sigma, 1.0)
        np.testing.assert_array_equal(step.point, u)

    def test_interior_matches_plain_armijo(self):
        f = lambda v: 50.0 * float(v[0]) ** 2 + 0.5 * float(v[1]) ** 2
        u = np.array([1.0, 2.0])
        grad = np.array([100.0, 2.0])
        plain = armijo_search(f, u, -grad, grad, gamma=1e-4)
        projected = projected_armijo_search(f, u, grad, gamma=1e-4)
        self.assertEqual(plain.sigma, projected.sigma)

    def test_projected_step_keeps_feller(self):
        cfg = CalibConfig()
        u = project(HestonParams(2.0, 0.1, 5.0, 0.16), cfg).as_array()
        target = np.array([1.6, 0.1, 5.5, 0.16])
        f = lambda v: 0.5 * float((v - target) @ (v - target))
        step = projected_armijo_search(
            f, u, u - target, gamma=1e-4,
            project=lambda v: project(HestonParams.from_array(v), cfg).as_array(),
        )
        sigma, _, kappa, mu = step.point
        self.assertLessEqual(sigma ** 2, 2.0 * kappa * mu)


class GradientTests(SimpleTestCase):
    def setUp(self):
        self.grid, self.V_d = small_problem()
        self.V = solve_forward(INITIAL_GUESS, REFERENCE_MARKET, self.grid)
        self.phi = solve_discrete_adjoint(INITIAL_GUESS, REFERENCE_MARKET, self.grid, residual(self.V, self.V_d))

    def test_zero_adjoint_gives_zero(self):
        zero = Trajectory(self.grid, np.zeros_like(self.V.values))
        for gradient in GRADIENTS:
            for form in ('discrete', 'weak', 'strong'):
                self.assertEqual(gradient(self.V, zero, INITIAL_GUESS, REFERENCE_MARKET, self.grid, form), 0.0)

    def test_vanishing_prefactors(self):
        # sigma = 0 and kappa = 0 lie outside the box the discrete form assembles in
        no_vol = HestonParams(0.0, 0.3, 5.0, 0.16)
        no_reversion = HestonParams(0.9, 0.3, 0.0, 0.16)
        for form in ('weak', 'strong'):
            self.assertEqual(gradient_rho(self.V, self.phi, no_vol, REFERENCE_MARKET, self.grid, form), 0.0)
            self.assertEqual(gradient_mu(self.V, self.phi, no_reversion, REFERENCE_MARKET, self.grid, form), 0.0)

    def test_linear_in_adjoint(self):
        scaled = self.phi.scaled(3.0)
        for gradient in GRADIENTS:
            base = gradient(self.V, self.phi, INITIAL_GUESS, REFERENCE_MARKET, self.grid)
            triple = gradient(self.V, scaled, INITIAL_GUESS, REFERENCE_MARKET, self.grid)
            self.assertAlmostEqual(triple, 3.0 * base, delta=1e-12 * max(1.0, abs(base)))

    def test_constant_fields_cancel(self):
        # In divergence form the boundary flux 1/2 (db . n) c^2 balances the
        # -1/2 div(db) c^2 volume term, so constants pair to zero. A leftover
        # boundary term such as 1/4 (sigma + rho) c^2 |boundary| T has no
        # counterpart in the discrete cost: the discrete gradient, which
        # GradientAcceptanceTests checks against finite differences of that
        # cost, is the one the continuous forms approach.
        ones = Trajectory(self.grid, np.full_like(self.V.values, 2.0))
        for gradient in GRADIENTS:
            for form in ('weak', 'strong'):
                self.assertAlmostEqual(
                    gradient(ones, ones, INITIAL_GUESS, REFERENCE_MARKET, self.grid, form), 0.0, places=9,
                )

    def test_exact_fit_is_stationary(self):
        for form in ('discrete', 'weak', 'strong'):
            solve = adjoint_solver(form)
            phi = solve(REFERENCE_PARAMS, REFERENCE_MARKET, self.grid, residual(self.V_d, self.V_d))
            g = assemble_gradient(self.V_d, phi, REFERENCE_PARAMS, REFERENCE_MARKET, self.grid, form=form)
            self.assertEqual(g.norm, 0.0, form)

    def test_adjoint_solver_per_form(self):
        self.assertIs(adjoint_solver('discrete'), solve_discrete_adjoint)
        self.assertIs(adjoint_solver('weak'), solve_adjoint)
        self.assertIs(adjoint_solver('strong'), solve_adjoint)
        with self.assertRaises(ParameterError):
            adjoint_solver('spectral')

    def test_discrete_gradient_matches_finite_differences(self):
        adjoint = assemble_gradient(self.V, self.phi, INITIAL_GUESS, REFERENCE_MARKET, self.grid).as_array()
        fd = finite_difference_gradient(INITIAL_GUESS, self.V_d, REFERENCE_MARKET, self.grid, h=1e-4).as_array()
        np.testing.assert_allclose(adjoint, fd, rtol=1e-4, atol=1e-6 * np.abs(fd).max())

    def test_variance_floor_sensitivity_is_carried(self):
        # residual confined to the nu = 0 row
        values = np.zeros_like(self.V.values)
        values[:, 1:-1, 0] = self.V.values[:, 1:-1, 0] - self.V_d.values[:, 1:-1, 0]
        phi = solve_discrete_adjoint(INITIAL_GUESS, REFERENCE_MARKET, self.grid, Trajectory(self.grid, values))
        self.assertGreater(np.abs(phi.values[:, 1:-1, 0]).max(), 0.0)
        for gradient in (gradient_kappa, gradient_mu):
            self.assertNotEqual(gradient(self.V, phi, INITIAL_GUESS, REFERENCE_MARKET, self.grid), 0.0)

    def test_tikhonov_shift(self):
        phi = Trajectory(self.grid, np.zeros_like(self.V.values))
        g = assemble_gradient(self.V, phi, INITIAL_GUESS, REFERENCE_MARKET, self.grid, lam=2.0, u_ref=REFERENCE_PARAMS)
        np.testing.assert_allclose(g.as_array(), 2.0 * (INITIAL_GUESS.as_array() - REFERENCE_PARAMS.as_array()))

    def test_non_finite_components_rejected(self):
        with self.assertRaises(CalibrationError):
            Gradient4(1.0, math.nan, 0.0, 0.0)

    def test_weak_and_strong_forms_converge(self):
        market = MarketSpec(T=1.0)
        params = HestonParams(0.5, -0.3, 2.0, 0.3)
        errors = []
        for n in (8, 16, 32):
            grid = build_grid(market, n, n, n, TruncationConfig(x_half_width=1.0, nu_max=1.0))
            X, NU = grid.mesh()
            tau = grid.tau[:, None, None]
            V = Trajectory(grid, np.sin(X) * np.cos(NU) * (1.0 + tau))
            phi = Trajectory(grid, np.exp(0.25 * X) * NU * (1.0 + tau ** 2))
            errors.append([
                gradient(V, phi, params, market, grid, 'weak') - gradient(V, phi, params, market, grid, 'strong')
                for gradient in GRADIENTS
            ])
        errors = np.abs(np.array(errors))
        for k in range(4):
            if errors[0, k] > 1e-12:
                self.assertGreaterEqual(math.log2(errors[0, k] / errors[1, k]), 1.5)
                self.assertGreaterEqual(math.log2(errors[1, k] / errors[2, k]), 1.5)


class CalibrateTests(SimpleTestCase):
    def setUp(self):
        self.grid, self.V_d = small_problem(24, 16, 8)

    def test_exact_fit_converges_immediately(self):
        result = calibrate(REFERENCE_PARAMS, self.V_d, REFERENCE_MARKET, self.grid)
        self.assertEqual(result.status, CONVERGED)
        self.assertEqual(result.iterations, 0)
        self.assertEqual(result.improvement, 0.0)
        self.assertEqual(result.j_opt, 0.0)
        self.assertEqual(result.u_opt, REFERENCE_PARAMS)

    def _check_descent(self, result, cfg):
        costs = np.array(result.cost_history)
        self.assertTrue(np.all(np.diff(costs) < 0.0))
        for step in result.steps:
            self.assertTrue(step.satisfies_armijo(cfg.gamma))
        self.assertTrue(is_feasible(result.u_opt, cfg))
        self.assertGreaterEqual(result.improvement, 0.0)

    def test_projected_descent(self):
        cfg = CalibConfig(max_iters=3)
        result = calibrate(INITIAL_GUESS, self.V_d, REFERENCE_MARKET, self.grid, cfg)
        self.assertGreater(result.iterations, 0)
        self._check_descent(result, cfg)

    def test_plain_armijo_descent(self):
        cfg = CalibConfig(max_iters=2, line_search='armijo')
        result = calibrate(INITIAL_GUESS, self.V_d, REFERENCE_MARKET, self.grid, cfg)
        self._check_descent(result, cfg)

    def test_relative_gradient_stop(self):
        cfg = CalibConfig(gradient_rtol=0.5, max_iters=6)
        result = calibrate(INITIAL_GUESS, self.V_d, REFERENCE_MARKET, self.grid, cfg)
        norms = result.grad_norm_history
        threshold = max(cfg.epsilon, cfg.gradient_rtol * norms[0])
        self.assertTrue(all(norm > threshold for norm in norms[:-1]))
        if result.status == CONVERGED:
            self.assertLessEqual(norms[-1], threshold)
        strict = calibrate(INITIAL_GUESS, self.V_d, REFERENCE_MARKET, self.grid, CalibConfig(gradient_rtol=0.0, max_iters=1))
        self.assertNotEqual(strict.status, CONVERGED)

    def test_data_on_other_grid_rejected(self):
        other = self.grid.with_counts(n_x=20)
        with self.assertRaises(CalibrationError):
            calibrate(INITIAL_GUESS, self.V_d, REFERENCE_MARKET, other)

    def test_improvement(self):
        self.assertEqual(improvement(2.0, 0.5), 0.75)
        self.assertEqual(improvement(1.5, 1.5), 0.0)
        self.assertEqual(improvement(1.0, 0.0), 1.0)
        with self.assertRaises(ValueError):
            improvement(0.0, 0.0)


class FiniteDifferenceTests(SimpleTestCase):
    def test_exact_on_quadratics(self):
        target = np.array([0.5, 0.0, 4.0, 0.2])
        u = np.array([0.9, 0.1, 5.0, 0.16])
        grad = central_difference_gradient(lambda v: 0.5 * float((v - target) @ (v - target)), u, h=1e-4)
        np.testing.assert_allclose(grad, u - target, rtol=1e-8, atol=1e-10)

    def test_perturbation_outside_box(self):
        box = ParameterBox.default()
        u = np.array([2.0, 0.1, 5.0, 0.16])
        with self.assertRaises(ParameterError):
            central_difference_gradient(lambda v: 0.0, u, box=box)


@tag('slow')
class GradientAcceptanceTests(SimpleTestCase):
    def _problem(self, n_x, n_nu, n_tau):
        grid = build_grid(REFERENCE_MARKET, n_x, n_nu, n_tau)
        return grid, solve_forward(REFERENCE_PARAMS, REFERENCE_MARKET, grid)

    def _relative_errors(self, n_x, n_nu, n_tau):
        grid, V_d = self._problem(n_x, n_nu, n_tau)
        V = solve_forward(INITIAL_GUESS, REFERENCE_MARKET, grid)
        phi = adjoint_solver()(INITIAL_GUESS, REFERENCE_MARKET, grid, residual(V, V_d))
        adjoint = assemble_gradient(V, phi, INITIAL_GUESS, REFERENCE_MARKET, grid).as_array()
        fd = finite_difference_gradient(INITIAL_GUESS, V_d, REFERENCE_MARKET, grid, h=1e-4).as_array()
        significant = np.abs(fd) > 1e-8
        return np.abs(adjoint - fd)[significant] / np.abs(fd)[significant]

    def test_adjoint_matches_finite_differences(self):
        # the discrete gradient is exact for the discrete cost, so both meshes sit
        # at the finite-difference truncation level rather than on a refinement curve
        for counts in ((80, 80, 40), (120, 120, 60)):
            errors = self._relative_errors(*counts)
            self.assertTrue(np.all(errors < 1e-3), (counts, errors))

    def test_finite_difference_step_robustness(self):
        grid, V_d = self._problem(80, 80, 40)
        coarse = finite_difference_gradient(INITIAL_GUESS, V_d, REFERENCE_MARKET, grid, h=1e-4).as_array()
        fine = finite_difference_gradient(INITIAL_GUESS, V_d, REFERENCE_MARKET, grid, h=1e-5).as_array()
        np.testing.assert_allclose(fine, coarse, rtol=0.01)

    def test_reference_experiment(self):
        grid, V_d = self._problem(80, 80, 40)
        cfg = CalibConfig()
        result = calibrate(INITIAL_GUESS, V_d, REFERENCE_MARKET, grid, cfg)
        self.assertEqual(result.status, CONVERGED)
        self.assertLessEqual(result.iterations, 10)
        self.assertGreaterEqual(result.improvement, 0.5)
        self.assertTrue(np.all(np.diff(result.cost_history) < 0.0))
        for step in result.steps:
            self.assertTrue(step.satisfies_armijo(cfg.gamma))
