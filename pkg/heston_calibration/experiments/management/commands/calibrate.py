from pricing.params import PARAMETER_NAMES

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Calibrates the initial guess against synthetic data from the reference parameters.'

    def handle(self, *args, **options):
        spec = self.load_spec(options, 'single')
        report = self.run_and_report(spec, save=options['save'])
        run = report.runs[0]
        for name, start, end in zip(PARAMETER_NAMES, run.u0.as_array(), run.u_opt.as_array()):
            self.stdout.write(f"{name:>9}: {start:.6f} -> {end:.6f}")
        self.stdout.write(self.style.SUCCESS(
            f"{run.status} after {run.iterations} iterations: J {run.j0:.6e} -> {run.j_opt:.6e} "
            f"(improvement {run.improvement:.2%})"
        ))
