from django.core.management.base import CommandError

from pricing.exceptions import HestonError
from pricing.forward import price
from pricing.oracle import heston_analytic_put

from ._base import RUN_FAILURE, ExperimentCommand


class Command(ExperimentCommand):
    help = 'Prices the European put at (s0, nu0) with the PDE solver and the semi-analytic formula.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--s0', type=float, help='spot (default: the strike)')
        parser.add_argument('--nu0', type=float, default=None, help='variance (default: mu of the priced parameters)')
        parser.add_argument('--no-analytic', action='store_true', help='skip the semi-analytic price')

    def handle(self, *args, **options):
        spec = self.load_spec(options, 'single')
        params, market = spec.reference, spec.market
        s0 = market.K if options['s0'] is None else options['s0']
        nu0 = params.mu_nu if options['nu0'] is None else options['nu0']

        try:
            grid = spec.grid()
            pde = price(params, market, grid, s0, nu0, spec.calibration.theta, spec.calibration.box)
            self.stdout.write(f"PDE price      ({grid.n_x}x{grid.n_nu}x{grid.n_tau}): {pde:.10f}")
            if not options['no_analytic']:
                analytic = heston_analytic_put(s0, nu0, market, params)
                self.stdout.write(f"Analytic price: {analytic:.10f}")
                self.stdout.write(f"Relative error: {abs(pde - analytic) / abs(analytic):.3e}")
        except HestonError as exc:
            raise CommandError(str(exc), returncode=RUN_FAILURE) from exc
        self.stdout.write(self.style.SUCCESS(f"Priced put K={market.K} T={market.T} at s0={s0}, nu0={nu0}"))
