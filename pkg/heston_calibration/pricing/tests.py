import math

import numpy as np
from django.test import SimpleTestCase, tag
from scipy.integrate import quad

from .adjoint import assemble_adjoint_operators, residual, solve_adjoint, solve_discrete_adjoint
from .exceptions import DomainError, GridError, ParameterError
from .forward import (
    CraigSneydStepper, Trajectory, initial_condition, interpolate_price, march, mcs_step, price,
    smoothed_initial_condition, solve_forward, solve_tangent,
)
from .grid import (
    TruncationConfig, assemble_operator_derivatives, assemble_operators, build_grid, nu_drift_modes,
    trapezoid_weights, upwind_first_nu,
)
from .oracle import QuadratureSpec, black_scholes_put, heston_analytic_call, heston_analytic_put
from .params import INITIAL_GUESS, REFERENCE_MARKET, REFERENCE_PARAMS, HestonParams, MarketSpec, ParameterBox

THETA = 2.0 / 3.0


def dense_mcs_step(v, ops, theta, dt, tau_next, source=None):
    """Textbook mCS step with dense matrices and explicit Dirichlet rows."""
    n = ops.grid.size
    F0, Fx, Fnu = (m.toarray() for m in (ops.F0, ops.Fx, ops.Fnu))
    F = F0 + Fx + Fnu
    lower, upper = ops.boundary_values(tau_next)
    v = v.ravel()

    def implicit(A, rhs):
        rhs = rhs.copy()
        rhs[ops.lower_rows] = lower
        rhs[ops.upper_rows] = upper
        return np.linalg.solve(np.eye(n) - theta * dt * A, rhs)

    y0 = v + dt * F @ v
    if source is not None:
        y0 += dt * source.ravel()
    y1 = implicit(Fx, y0 - theta * dt * Fx @ v)
    y2 = implicit(Fnu, y1 - theta * dt * Fnu @ v)
    y0 = y0 + theta * dt * (F0 @ y2 - F0 @ v) + (0.5 - theta) * dt * (F @ y2 - F @ v)
    y1 = implicit(Fx, y0 - theta * dt * Fx @ v)
    y2 = implicit(Fnu, y1 - theta * dt * Fnu @ v)
    y2[ops.lower_rows] = lower
    y2[ops.upper_rows] = upper
    return y2.reshape(ops.grid.shape)


def trapezoid_inner(grid, a, b):
    return np.trapezoid(np.trapezoid(np.trapezoid(a * b, grid.nu, axis=2), grid.x, axis=1), grid.tau)


class GridTests(SimpleTestCase):
    def test_default_spacings(self):
        grid = build_grid(REFERENCE_MARKET, 80, 80, 40)
        self.assertAlmostEqual(grid.dx, 0.125)
        self.assertAlmostEqual(grid.dnu, 0.0375)
        self.assertAlmostEqual(grid.dtau, 0.025)
        self.assertAlmostEqual(grid.x_min, math.log(10.0) - 5.0)
        self.assertEqual(grid.shape, (81, 81))
        self.assertEqual(len(grid.tau), 41)

    def test_rejects_small_counts(self):
        with self.assertRaises(GridError):
            build_grid(REFERENCE_MARKET, 3, 80, 40)
        with self.assertRaises(GridError):
            build_grid(REFERENCE_MARKET, 80, 80, 2.5)

    def test_strike_must_be_interior(self):
        with self.assertRaises(GridError):
            build_grid(REFERENCE_MARKET, 8, 8, 4, TruncationConfig(x_min=3.0, x_max=6.0))

    def test_upwind_weights(self):
        self.assertEqual(upwind_first_nu(2.0, 0.5), (0.0, -4.0, 4.0))
        self.assertEqual(upwind_first_nu(-2.0, 0.5), (4.0, -4.0, 0.0))
        self.assertEqual(upwind_first_nu(0.0, 0.5), (0.0, 0.0, 0.0))
        with self.assertRaises(GridError):
            upwind_first_nu(1.0, 0.0)

    def test_trapezoid_weights_match_integrate(self):
        grid = build_grid(REFERENCE_MARKET, 8, 6, 4)
        np.testing.assert_allclose(trapezoid_weights(4, 0.5), [0.25, 0.5, 0.5, 0.5, 0.25])
        field = np.random.default_rng(2).standard_normal(grid.shape)
        self.assertAlmostEqual(float(np.sum(grid.spatial_weights() * field)), grid.integrate(field), places=12)
        self.assertAlmostEqual(float(grid.time_weights().sum()), grid.T, places=12)


class DriftSchemeTests(SimpleTestCase):
    def test_hybrid_is_central_where_diffusion_dominates(self):
        modes = nu_drift_modes(np.array([1.0, -1.0, 5.0, -5.0]), np.array([1.0, 1.0, 0.1, 0.1]), 0.5, 'hybrid')
        np.testing.assert_array_equal(modes, [0, 0, 1, -1])

    def test_upwind_follows_the_drift(self):
        modes = nu_drift_modes(np.array([2.0, -2.0, 0.0]), 10.0, 0.5, 'upwind')
        np.testing.assert_array_equal(modes, [1, -1, 0])

    def test_upwind2_falls_back_at_the_edges(self):
        up = nu_drift_modes(np.ones(5), 0.0, 0.5, 'upwind2')
        down = nu_drift_modes(-np.ones(5), 0.0, 0.5, 'upwind2')
        np.testing.assert_array_equal(up, [2, 2, 2, 1, 1])
        np.testing.assert_array_equal(down, [-1, -1, -2, -2, -2])

    def test_unknown_scheme(self):
        with self.assertRaises(GridError):
            nu_drift_modes(np.ones(3), 1.0, 0.5, 'central')

    def test_hybrid_and_upwind_keep_off_diagonals_non_negative(self):
        grid = build_grid(REFERENCE_MARKET, 40, 40, 4)
        for scheme in ('hybrid', 'upwind'):
            Fnu = assemble_operators(REFERENCE_PARAMS, REFERENCE_MARKET, grid, scheme=scheme).Fnu.tocoo()
            off = Fnu.row != Fnu.col
            self.assertGreaterEqual(Fnu.data[off].min(), 0.0, scheme)

    def test_reference_parameters_are_central_on_the_default_grid(self):
        grid = build_grid(REFERENCE_MARKET, 80, 80, 40)
        _, NU = grid.mesh()
        for params in (REFERENCE_PARAMS, INITIAL_GUESS):
            sigma, _, kappa, mu = params.as_array()
            modes = nu_drift_modes(kappa * (mu - NU), 0.5 * sigma ** 2 * NU, grid.dnu, 'hybrid')
            np.testing.assert_array_equal(modes[:, 1:-1], 0)
            np.testing.assert_array_equal(modes[:, 0], 1)

    def test_second_order_stencils_are_exact_on_quadratics(self):
        grid = build_grid(REFERENCE_MARKET, 8, 80, 4)
        sigma, _, kappa, mu = REFERENCE_PARAMS.as_array()
        _, NU = grid.mesh()
        rows = grid.interior_mask() | grid.nu_min_mask()
        expected = sigma ** 2 * NU + 2.0 * kappa * (mu - NU) * NU
        for scheme in ('hybrid', 'upwind2'):
            modes = nu_drift_modes(kappa * (mu - NU), 0.5 * sigma ** 2 * NU, grid.dnu, scheme)
            exact = rows & (np.abs(modes) != 1)
            Fnu = assemble_operators(REFERENCE_PARAMS, REFERENCE_MARKET, grid, scheme=scheme).Fnu
            out = (Fnu @ (NU ** 2).ravel()).reshape(grid.shape)
            self.assertTrue(exact.any(), scheme)
            np.testing.assert_allclose(out[exact], expected[exact], atol=1e-10)


class OperatorTests(SimpleTestCase):
    def setUp(self):
        self.market = REFERENCE_MARKET
        self.params = REFERENCE_PARAMS
        self.grid = build_grid(self.market, 8, 8, 4)
        self.ops = assemble_operators(self.params, self.market, self.grid)
        self.X, self.NU = self.grid.mesh()

    def test_constant_field(self):
        out = self.ops.apply(np.full(self.grid.shape, 2.0))
        np.testing.assert_allclose(out[1:-1, :], -self.market.r * 2.0, atol=1e-12)
        np.testing.assert_array_equal(out[[0, -1], :], 0.0)

    def test_linear_in_x(self):
        r, q = self.market.r, self.market.q
        out = self.ops.apply(self.X)
        expected = (r - q - 0.5 * self.NU) - r * self.X
        np.testing.assert_allclose(out[1:-1, :], expected[1:-1, :], atol=1e-10)

    def test_linear_in_nu(self):
        kappa, mu, r = self.params.kappa_nu, self.params.mu_nu, self.market.r
        out = self.ops.apply(self.NU)
        interior = kappa * (mu - self.NU) - r * self.NU
        np.testing.assert_allclose(out[1:-1, 1:-1], interior[1:-1, 1:-1], atol=1e-10)
        np.testing.assert_allclose(out[1:-1, 0], kappa * mu, atol=1e-10)
        np.testing.assert_allclose(out[1:-1, -1], -r * self.grid.nu_max, atol=1e-10)

    def test_bilinear_field(self):
        sigma, rho, kappa, mu = self.params.as_array()
        r, q = self.market.r, self.market.q
        X, NU = self.X, self.NU
        out = self.ops.apply(X * NU)
        expected = rho * sigma * NU + (r - q - 0.5 * NU) * NU - r * X * NU + kappa * (mu - NU) * X
        np.testing.assert_allclose(out[1:-1, 1:-1], expected[1:-1, 1:-1], atol=1e-9)

    def test_nu_min_row_ignores_sigma_and_rho(self):
        other = HestonParams(sigma_nu=0.3, rho=-0.7, kappa_nu=5.0, mu_nu=0.16)
        F_ref = self.ops.F.toarray()
        F_other = assemble_operators(other, self.market, self.grid).F.toarray()
        rows = self.grid.flat_index(*np.nonzero(self.grid.nu_min_mask()))
        np.testing.assert_array_equal(F_ref[rows], F_other[rows])

    def test_dirichlet_rows_are_empty(self):
        F = self.ops.F.tocsr()
        for row in np.concatenate([self.ops.lower_rows, self.ops.upper_rows]):
            self.assertEqual(F[row].nnz, 0)

    def test_rejects_parameters_outside_box(self):
        bad = HestonParams(sigma_nu=0.9, rho=1.5, kappa_nu=5.0, mu_nu=0.16)
        with self.assertRaises(ParameterError):
            assemble_operators(bad, self.market, self.grid)


def shifted(params, name, h):
    values = params.as_dict()
    values[name] += h
    return HestonParams(**values)


class OperatorDerivativeTests(SimpleTestCase):
    def setUp(self):
        self.grid = build_grid(REFERENCE_MARKET, 8, 6, 4)

    def test_match_central_differences_of_the_operators(self):
        derivatives = assemble_operator_derivatives(REFERENCE_PARAMS, REFERENCE_MARKET, self.grid)
        h = 1e-6
        for name, d in derivatives.items():
            plus = assemble_operators(shifted(REFERENCE_PARAMS, name, h), REFERENCE_MARKET, self.grid)
            minus = assemble_operators(shifted(REFERENCE_PARAMS, name, -h), REFERENCE_MARKET, self.grid)
            for part in ('F0', 'Fx', 'Fnu'):
                fd = (getattr(plus, part) - getattr(minus, part)).toarray() / (2.0 * h)
                np.testing.assert_allclose(getattr(d, part).toarray(), fd, atol=1e-6, err_msg=f"{name} {part}")

    def test_nu_min_row_depends_on_kappa_and_mu_only(self):
        derivatives = assemble_operator_derivatives(REFERENCE_PARAMS, REFERENCE_MARKET, self.grid)
        rows = self.grid.flat_index(*np.nonzero(self.grid.nu_min_mask()))
        for name in ('sigma_nu', 'rho'):
            self.assertEqual(abs(derivatives[name].F.tocsr()[rows]).sum(), 0.0)
        for name in ('kappa_nu', 'mu_nu'):
            self.assertGreater(abs(derivatives[name].F.tocsr()[rows]).sum(), 0.0)


class StepperTests(SimpleTestCase):
    def setUp(self):
        self.market = REFERENCE_MARKET
        self.grid = build_grid(self.market, 8, 6, 4)
        self.ops = assemble_operators(REFERENCE_PARAMS, self.market, self.grid)

    def test_zero_field_stays_zero_without_forcing(self):
        ops = self.ops.without_forcing()
        out = mcs_step(np.zeros(self.grid.shape), 0, ops, THETA, self.grid.dtau)
        np.testing.assert_array_equal(out, 0.0)

    def test_zero_step_is_identity(self):
        v = initial_condition(self.grid, self.market)
        v[0, :], v[-1, :] = self.ops.boundary_values(0.0)
        out = mcs_step(v, 0, self.ops, THETA, 0.0)
        np.testing.assert_allclose(out, v, rtol=0, atol=1e-14)

    def test_matches_dense_step(self):
        rng = np.random.default_rng(7)
        v = rng.standard_normal(self.grid.shape)
        source = rng.standard_normal(self.grid.shape)
        dt = self.grid.dtau
        out = mcs_step(v, 1, self.ops, THETA, dt, source)
        expected = dense_mcs_step(v, self.ops, THETA, dt, 2 * dt, source)
        np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-10)

    def test_rejects_bad_theta(self):
        with self.assertRaises(ValueError):
            CraigSneydStepper(self.ops, 0.0, self.grid.dtau)

    def test_homogeneous_march_is_linear_in_initial_data(self):
        stepper = CraigSneydStepper(self.ops.without_forcing(), THETA, self.grid.dtau)
        v0 = initial_condition(self.grid, self.market)
        v0[[0, -1], :] = 0.0
        single = march(stepper, v0, self.grid.n_tau)
        doubled = march(stepper, 2.5 * v0, self.grid.n_tau)
        np.testing.assert_allclose(doubled, 2.5 * single, rtol=1e-12, atol=1e-12)

    def test_pullback_is_the_transposed_step(self):
        stepper = CraigSneydStepper(self.ops.without_forcing(), THETA, self.grid.dtau)
        n = self.grid.size
        jacobian = np.column_stack([stepper.step(np.eye(n)[p].reshape(self.grid.shape), 0.0).ravel() for p in range(n)])
        cotangent = np.random.default_rng(9).standard_normal(n)
        bar_v, dots = stepper.pullback(cotangent)
        np.testing.assert_allclose(bar_v, jacobian.T @ cotangent, rtol=1e-10, atol=1e-10)
        self.assertEqual(dots, [])

    def test_pullback_parameter_derivatives(self):
        rng = np.random.default_rng(13)
        v = rng.uniform(0.0, 10.0, self.grid.shape)
        cotangent = rng.standard_normal(self.grid.size)
        tau_next = 2 * self.grid.dtau
        derivatives = assemble_operator_derivatives(REFERENCE_PARAMS, self.market, self.grid)
        stepper = CraigSneydStepper(self.ops, THETA, self.grid.dtau)
        _, dots = stepper.pullback(cotangent, v, tau_next, list(derivatives.values()))

        h = 1e-6
        for name, dot in zip(derivatives, dots):
            outputs = []
            for sign in (1.0, -1.0):
                ops = assemble_operators(shifted(REFERENCE_PARAMS, name, sign * h), self.market, self.grid)
                outputs.append(CraigSneydStepper(ops, THETA, self.grid.dtau).step(v, tau_next).ravel())
            fd = cotangent @ (outputs[0] - outputs[1]) / (2.0 * h)
            self.assertAlmostEqual(dot, fd, delta=1e-5 * max(1.0, abs(fd)), msg=name)


class ForwardSolveTests(SimpleTestCase):
    def setUp(self):
        self.market = REFERENCE_MARKET
        self.grid = build_grid(self.market, 20, 10, 8)
        self.traj = solve_forward(REFERENCE_PARAMS, self.market, self.grid)

    def test_initial_condition_is_payoff(self):
        expected = smoothed_initial_condition(self.grid, self.market)
        np.testing.assert_array_equal(self.traj[0][1:-1, :], expected[1:-1, :])
        payoff = np.maximum(self.market.K - np.exp(self.grid.x), 0.0)
        away = np.abs(self.grid.x - self.market.log_strike) > self.grid.dx
        away[[0, -1]] = False
        np.testing.assert_array_equal(self.traj[0][away, :], np.tile(payoff[away, None], (1, self.grid.n_nu + 1)))

    def test_price_reads_the_final_step(self):
        expected = interpolate_price(self.traj, 10.0, 0.16)
        self.assertEqual(price(REFERENCE_PARAMS, self.market, self.grid, 10.0, 0.16), expected)

    def test_dirichlet_rows_every_step(self):
        for k, tau in enumerate(self.grid.tau):
            np.testing.assert_array_equal(self.traj[k][0, :], self.market.K * math.exp(-self.market.r * tau))
            np.testing.assert_array_equal(self.traj[k][-1, :], 0.0)

    def test_trajectory_is_read_only(self):
        with self.assertRaises(ValueError):
            self.traj.values[0, 0, 0] = 1.0

    def test_grid_maturity_must_match_market(self):
        with self.assertRaises(GridError):
            solve_forward(REFERENCE_PARAMS, self.market.with_maturity(2.0), self.grid)

    def test_tangent_is_linear_in_forcing(self):
        rng = np.random.default_rng(3)
        forcing = Trajectory(self.grid, rng.standard_normal((self.grid.n_tau + 1,) + self.grid.shape))
        w = solve_tangent(REFERENCE_PARAMS, self.market, self.grid, forcing)
        w2 = solve_tangent(REFERENCE_PARAMS, self.market, self.grid, forcing.scaled(-3.0))
        np.testing.assert_allclose(w2.values, -3.0 * w.values, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(w.values[0], 0.0)
        np.testing.assert_array_equal(w.values[:, [0, -1], :], 0.0)


class SmoothedPayoffTests(SimpleTestCase):
    def _cell_average(self, market, x, dx):
        value, _ = quad(lambda y: max(market.K - math.exp(y), 0.0), x - 0.5 * dx, x + 0.5 * dx, points=[market.log_strike])
        return value / dx

    def test_strike_on_a_node(self):
        market = REFERENCE_MARKET
        grid = build_grid(market, 20, 4, 4)
        i = int(np.argmin(np.abs(grid.x - market.log_strike)))
        smoothed = smoothed_initial_condition(grid, market)
        self.assertAlmostEqual(smoothed[i, 0], self._cell_average(market, grid.x[i], grid.dx), places=12)
        self.assertGreater(smoothed[i, 0], 0.0)
        others = np.arange(grid.n_x + 1) != i
        np.testing.assert_array_equal(smoothed[others], initial_condition(grid, market)[others])

    def test_strike_between_nodes(self):
        market = REFERENCE_MARKET
        lk = market.log_strike
        grid = build_grid(market, 20, 4, 4, TruncationConfig(x_min=lk - 2.3, x_max=lk + 2.7))
        smoothed = smoothed_initial_condition(grid, market)
        changed = np.nonzero(np.any(smoothed != initial_condition(grid, market), axis=1))[0]
        np.testing.assert_array_equal(changed, [9])
        self.assertAlmostEqual(smoothed[9, 2], self._cell_average(market, grid.x[9], grid.dx), places=12)

    def test_same_on_every_variance_line(self):
        grid = build_grid(REFERENCE_MARKET, 20, 6, 4)
        smoothed = smoothed_initial_condition(grid, REFERENCE_MARKET)
        np.testing.assert_array_equal(smoothed, np.repeat(smoothed[:, :1], grid.n_nu + 1, axis=1))


class InterpolationTests(SimpleTestCase):
    def setUp(self):
        self.grid = build_grid(REFERENCE_MARKET, 8, 8, 4)
        field = np.random.default_rng(11).uniform(0.0, 10.0, self.grid.shape)
        self.traj = Trajectory(self.grid, np.broadcast_to(field, (self.grid.n_tau + 1,) + self.grid.shape))
        self.field = field

    def test_node_value(self):
        x, nu = self.grid.x, self.grid.nu
        value = interpolate_price(self.traj, math.exp(x[3]), nu[2])
        self.assertAlmostEqual(value, self.field[3, 2], places=10)

    def test_cell_center_is_mean_of_corners(self):
        x, nu = self.grid.x, self.grid.nu
        value = interpolate_price(self.traj, math.exp(0.5 * (x[3] + x[4])), 0.5 * (nu[2] + nu[3]), k=1)
        self.assertAlmostEqual(value, self.field[3:5, 2:4].mean(), places=10)

    def test_out_of_domain(self):
        with self.assertRaises(DomainError):
            interpolate_price(self.traj, math.exp(self.grid.x_max + 0.5), 0.1)
        with self.assertRaises(DomainError):
            interpolate_price(self.traj, 10.0, self.grid.nu_max + 0.1)
        with self.assertRaises(DomainError):
            interpolate_price(self.traj, 0.0, 0.1)


class AdjointTests(SimpleTestCase):
    def setUp(self):
        self.market = REFERENCE_MARKET
        self.grid = build_grid(self.market, 8, 6, 4)
        self.X, self.NU = self.grid.mesh()

    def _residual(self, seed=5):
        values = np.random.default_rng(seed).standard_normal((self.grid.n_tau + 1,) + self.grid.shape)
        return Trajectory(self.grid, values)

    def test_constant_field_response(self):
        ops = assemble_adjoint_operators(REFERENCE_PARAMS, self.market, self.grid)
        out = ops.apply(np.full(self.grid.shape, 3.0))
        expected = (REFERENCE_PARAMS.kappa_nu - self.market.r) * 3.0
        np.testing.assert_allclose(out[1:-1, 1:-1], expected, atol=1e-12)

    def test_constants_annihilated_when_kappa_equals_r(self):
        params = HestonParams(sigma_nu=0.3, rho=0.1, kappa_nu=self.market.r, mu_nu=0.5)
        out = assemble_adjoint_operators(params, self.market, self.grid).apply(np.ones(self.grid.shape))
        np.testing.assert_allclose(out[1:-1, 1:-1], 0.0, atol=1e-12)

    def test_bilinear_field(self):
        sigma, rho, kappa, mu = REFERENCE_PARAMS.as_array()
        r, q = self.market.r, self.market.q
        X, NU = self.X, self.NU
        out = assemble_adjoint_operators(REFERENCE_PARAMS, self.market, self.grid).apply(X * NU)
        expected = (
            rho * sigma * NU
            + (q - r + 0.5 * NU + sigma * rho) * NU
            + (kappa - r) * X * NU
            + (sigma ** 2 - kappa * (mu - NU)) * X
        )
        np.testing.assert_allclose(out[1:-1, 1:-1], expected[1:-1, 1:-1], atol=1e-9)

    def test_zero_residual_gives_zero_adjoint(self):
        zero = Trajectory(self.grid, np.zeros((self.grid.n_tau + 1,) + self.grid.shape))
        phi = solve_adjoint(REFERENCE_PARAMS, self.market, self.grid, zero)
        np.testing.assert_array_equal(phi.values, 0.0)

    def test_terminal_and_boundary_zero(self):
        phi = solve_adjoint(REFERENCE_PARAMS, self.market, self.grid, self._residual())
        np.testing.assert_array_equal(phi[self.grid.n_tau], 0.0)
        np.testing.assert_array_equal(phi.values[:, [0, -1], :], 0.0)
        np.testing.assert_allclose(phi.values[:, :, [0, -1]], 0.0, atol=1e-15)
        self.assertGreater(np.abs(phi[0]).max(), 0.0)

    def test_linear_in_residual(self):
        R = self._residual()
        phi = solve_adjoint(REFERENCE_PARAMS, self.market, self.grid, R)
        phi2 = solve_adjoint(REFERENCE_PARAMS, self.market, self.grid, R.scaled(0.25))
        np.testing.assert_allclose(phi2.values, 0.25 * phi.values, rtol=1e-12, atol=1e-14)

    def test_impulse_matches_dense_step(self):
        values = np.zeros((self.grid.n_tau + 1,) + self.grid.shape)
        values[self.grid.n_tau, 4, 3] = 1.0
        phi = solve_adjoint(REFERENCE_PARAMS, self.market, self.grid, Trajectory(self.grid, values))
        ops = assemble_adjoint_operators(REFERENCE_PARAMS, self.market, self.grid)
        expected = dense_mcs_step(
            np.zeros(self.grid.shape), ops, THETA, self.grid.dtau, self.grid.dtau, 0.5 * values[self.grid.n_tau],
        )
        np.testing.assert_allclose(phi[self.grid.n_tau - 1], expected, rtol=1e-10, atol=1e-14)

    def test_residual_requires_same_grid(self):
        V = self._residual()
        other = Trajectory(self.grid.with_counts(n_x=10), np.zeros((5, 11, 7)))
        with self.assertRaises(GridError):
            residual(V, other)

    @tag('slow')
    def test_discrete_duality(self):
        market = MarketSpec(K=10.0, r=0.1, q=0.05, T=0.5)
        params = HestonParams(sigma_nu=0.5, rho=0.1, kappa_nu=1.0, mu_nu=0.3)
        grid = build_grid(market, 64, 64, 32, TruncationConfig(x_half_width=2.0, nu_max=1.0))
        X, NU = grid.mesh()
        lk = market.log_strike
        tau = grid.tau[:, None, None]
        forcing = np.exp(-((X - lk) ** 2 / 0.1 + (NU - 0.3) ** 2 / 0.01)) * np.ones_like(tau)
        source = np.exp(-((X - lk - 0.2) ** 2 / 0.1 + (NU - 0.4) ** 2 / 0.01)) * (tau / market.T)
        mask = grid.interior_mask()
        forcing, source = forcing * mask, source * mask

        w = solve_tangent(params, market, grid, Trajectory(grid, forcing))
        phi = solve_adjoint(params, market, grid, Trajectory(grid, source))
        lhs = trapezoid_inner(grid, phi.values, forcing)
        rhs = trapezoid_inner(grid, source, w.values)
        self.assertGreater(abs(rhs), 0.0)
        self.assertLess(abs(lhs - rhs) / abs(rhs), 0.05)


class DiscreteAdjointTests(SimpleTestCase):
    def setUp(self):
        self.market = REFERENCE_MARKET
        self.grid = build_grid(self.market, 8, 6, 4)
        rng = np.random.default_rng(17)
        self.target = rng.uniform(0.0, 10.0, (self.grid.n_tau + 1,) + self.grid.shape)
        self.stepper = CraigSneydStepper(assemble_operators(REFERENCE_PARAMS, self.market, self.grid), THETA, self.grid.dtau)

    def _cost(self, v0):
        values = march(self.stepper, v0, self.grid.n_tau)
        diff = values - self.target
        return 0.5 * self.grid.integrate(diff * diff), Trajectory(self.grid, diff)

    def test_terminal_and_dirichlet_rows_vanish(self):
        _, R = self._cost(initial_condition(self.grid, self.market))
        phi = solve_discrete_adjoint(REFERENCE_PARAMS, self.market, self.grid, R, THETA)
        np.testing.assert_array_equal(phi[self.grid.n_tau], 0.0)
        np.testing.assert_array_equal(phi.values[:, [0, -1], :], 0.0)

    def test_variance_boundary_rows_are_coupled(self):
        _, R = self._cost(initial_condition(self.grid, self.market))
        interior_only = R.values * self.grid.interior_mask()
        phi = solve_discrete_adjoint(REFERENCE_PARAMS, self.market, self.grid, Trajectory(self.grid, interior_only), THETA)
        self.assertGreater(np.abs(phi.values[:-1, 1:-1, 0]).max(), 0.0)
        self.assertGreater(np.abs(phi.values[:-1, 1:-1, -1]).max(), 0.0)

    def test_zero_residual_and_linearity(self):
        zero = Trajectory(self.grid, np.zeros_like(self.target))
        np.testing.assert_array_equal(solve_discrete_adjoint(REFERENCE_PARAMS, self.market, self.grid, zero).values, 0.0)
        _, R = self._cost(initial_condition(self.grid, self.market))
        phi = solve_discrete_adjoint(REFERENCE_PARAMS, self.market, self.grid, R)
        phi2 = solve_discrete_adjoint(REFERENCE_PARAMS, self.market, self.grid, R.scaled(-2.0))
        np.testing.assert_allclose(phi2.values, -2.0 * phi.values, rtol=1e-12, atol=1e-14)

    def test_initial_field_sensitivity(self):
        grid = self.grid
        v0 = initial_condition(grid, self.market)
        _, R = self._cost(v0)
        phi = solve_discrete_adjoint(REFERENCE_PARAMS, self.market, grid, R, THETA)
        weights = grid.spatial_weights()
        gradient = (
            self.stepper.pullback((grid.dtau * weights * phi[0]).ravel())[0]
            + grid.time_weights()[0] * (weights * R[0]).ravel()
        )
        direction = np.random.default_rng(19).standard_normal(grid.shape) * grid.x_interior_mask()
        eps = 1e-3
        fd = (self._cost(v0 + eps * direction)[0] - self._cost(v0 - eps * direction)[0]) / (2.0 * eps)
        self.assertAlmostEqual(float(gradient @ direction.ravel()), fd, delta=1e-8 * max(1.0, abs(fd)))

    def test_other_grid_rejected(self):
        other = Trajectory(self.grid.with_counts(n_x=10), np.zeros((5, 11, 7)))
        with self.assertRaises(GridError):
            solve_discrete_adjoint(REFERENCE_PARAMS, self.market, self.grid, other)


class OracleTests(SimpleTestCase):
    def test_quadrature_spec_validation(self):
        with self.assertRaises(ParameterError):
            QuadratureSpec(nodes=16)
        with self.assertRaises(ParameterError):
            QuadratureSpec(scheme='simpson')
        with self.assertRaises(ParameterError):
            QuadratureSpec(upper=0.0)

    def test_small_spot_gives_discounted_strike(self):
        m = REFERENCE_MARKET
        put = heston_analytic_put(1.0, 0.16, m, REFERENCE_PARAMS)
        self.assertAlmostEqual(put, m.K * math.exp(-m.r * m.T) - math.exp(-m.q * m.T), places=4)

    def test_vanishing_vol_of_vol_is_black_scholes(self):
        params = HestonParams(sigma_nu=0.01, rho=0.0, kappa_nu=5.0, mu_nu=0.16)
        put = heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, params)
        bs = black_scholes_put(10.0, REFERENCE_MARKET, 0.4)
        self.assertAlmostEqual(put / bs, 1.0, delta=1e-3)

    def test_adaptive_and_fixed_nodes_agree(self):
        adaptive = heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, REFERENCE_PARAMS, QuadratureSpec(scheme='adaptive'))
        fixed = heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, REFERENCE_PARAMS, QuadratureSpec(scheme='fixed'))
        self.assertAlmostEqual(adaptive, fixed, delta=1e-6)

    def test_doubling_nodes_is_stable(self):
        coarse = heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, REFERENCE_PARAMS, QuadratureSpec(nodes=256, scheme='fixed'))
        fine = heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, REFERENCE_PARAMS, QuadratureSpec(nodes=512, scheme='fixed'))
        self.assertLess(abs(coarse - fine), 1e-8 * REFERENCE_MARKET.K)

    def test_put_call_parity(self):
        m = REFERENCE_MARKET
        for s0, nu0 in ((6.0, 0.05), (10.0, 0.16), (14.0, 0.4)):
            call = heston_analytic_call(s0, nu0, m, REFERENCE_PARAMS)
            put = heston_analytic_put(s0, nu0, m, REFERENCE_PARAMS)
            forward = s0 * math.exp(-m.q * m.T) - m.K * math.exp(-m.r * m.T)
            self.assertAlmostEqual(call - put, forward, delta=1e-10 * m.K)
            self.assertGreaterEqual(call, max(forward, 0.0) - 1e-8 * m.K)
            self.assertLessEqual(call, s0 * math.exp(-m.q * m.T))

    def test_requires_feller(self):
        params = HestonParams(sigma_nu=2.0, rho=0.1, kappa_nu=5.0, mu_nu=0.16)
        with self.assertRaises(ParameterError):
            heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, params)


@tag('slow')
class ForwardAcceptanceTests(SimpleTestCase):
    def test_price_matches_analytic_oracle(self):
        grid = build_grid(REFERENCE_MARKET, 80, 80, 40)
        pde = price(REFERENCE_PARAMS, REFERENCE_MARKET, grid, 10.0, 0.16)
        exact = heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, REFERENCE_PARAMS)
        self.assertLess(abs(pde - exact) / exact, 0.01)

    def test_refined_price_matches_analytic_oracle(self):
        grid = build_grid(REFERENCE_MARKET, 160, 160, 80)
        pde = price(REFERENCE_PARAMS, REFERENCE_MARKET, grid, 10.0, 0.16)
        exact = heston_analytic_put(10.0, 0.16, REFERENCE_MARKET, REFERENCE_PARAMS)
        self.assertLess(abs(pde - exact) / exact, 0.005)

    def test_bounds_and_monotonicity(self):
        K = REFERENCE_MARKET.K
        grid = build_grid(REFERENCE_MARKET, 80, 80, 40)
        values = solve_forward(REFERENCE_PARAMS, REFERENCE_MARKET, grid).values
        self.assertGreaterEqual(values.min(), -1e-8 * K)
        self.assertLessEqual(values.max(), K * (1.0 + 1e-8))
        self.assertLessEqual(np.diff(values, axis=1).max(), 1e-8 * K)

    def test_temporal_order(self):
        prices = []
        for n_tau in (10, 20, 40):
            grid = build_grid(REFERENCE_MARKET, 40, 40, n_tau)
            prices.append(interpolate_price(solve_forward(REFERENCE_PARAMS, REFERENCE_MARKET, grid), 10.0, 0.16))
        order = math.log2(abs(prices[0] - prices[1]) / abs(prices[1] - prices[2]))
        self.assertGreaterEqual(order, 1.5)

    def test_default_box_contains_reference_parameters(self):
        self.assertTrue(ParameterBox.default().contains(REFERENCE_PARAMS))
