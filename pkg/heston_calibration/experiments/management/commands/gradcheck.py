from django.core.management.base import CommandError

from calibration.gradient import adjoint_solver, assemble_gradient
from calibration.oracle import finite_difference_gradient
from experiments.studies import generate_data
from pricing.adjoint import residual
from pricing.exceptions import HestonError
from pricing.forward import solve_forward
from pricing.params import PARAMETER_NAMES

from ._base import RUN_FAILURE, ExperimentCommand


class Command(ExperimentCommand):
    help = 'Compares the adjoint gradient at the initial guess with central finite differences.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--fd-step', dest='h', type=float, default=1e-4, help='relative finite-difference step')
        parser.add_argument('--tolerance', type=float, help='fail when a relative error exceeds this')

    def handle(self, *args, **options):
        spec = self.load_spec(options, 'single')
        cfg, market, u = spec.calibration, spec.market, spec.initial
        try:
            grid = spec.grid()
            V_d = generate_data(spec.reference, market, grid, cfg.theta, cfg.box)
            V = solve_forward(u, market, grid, cfg.theta, cfg.box)
            solve_adjoint = adjoint_solver(cfg.gradient_form)
            phi = solve_adjoint(u, market, grid, residual(V, V_d), cfg.theta, cfg.box)
            adjoint = assemble_gradient(
                V, phi, u, market, grid, cfg.lam, cfg.u_ref, cfg.gradient_form, cfg.theta, cfg.box,
            ).as_array()
            fd = finite_difference_gradient(u, V_d, market, grid, cfg, options['h']).as_array()
        except HestonError as exc:
            raise CommandError(str(exc), returncode=RUN_FAILURE) from exc

        self.stdout.write(f"{'parameter':>9} {'adjoint':>14} {'finite diff':>14} {'rel error':>10}")
        errors = []
        for name, a, f in zip(PARAMETER_NAMES, adjoint, fd):
            error = abs(a - f) / abs(f) if f != 0.0 else abs(a)
            errors.append(error)
            self.stdout.write(f"{name:>9} {a:>14.6e} {f:>14.6e} {error:>10.3e}")

        tolerance = options['tolerance']
        if tolerance is not None and max(errors) > tolerance:
            raise CommandError(
                f"Largest relative error {max(errors):.3e} exceeds {tolerance:.3e}.", returncode=RUN_FAILURE,
            )
        self.stdout.write(self.style.SUCCESS(f"Gradient check on {grid.n_x}x{grid.n_nu}x{grid.n_tau}, gradient form {cfg.gradient_form}"))
