from experiments.studies import STUDIES

from ._base import ExperimentCommand

STUDY_KINDS = [kind for kind in STUDIES if kind != 'single']


class Command(ExperimentCommand):
    help = 'Runs a mesh, maturity or random-initial-guess calibration study and writes its report files.'

    def add_arguments(self, parser):
        parser.add_argument('kind', choices=STUDY_KINDS)
        super().add_arguments(parser)

    def handle(self, *args, **options):
        spec = self.load_spec(options, options['kind'])
        report = self.run_and_report(spec, save=options['save'])
        improvements = [run.improvement for run in report.runs]
        self.stdout.write(self.style.SUCCESS(
            f"{spec.study} study: {len(report.runs)} runs, improvement "
            f"min {min(improvements, default=0.0):.4f} max {max(improvements, default=0.0):.4f}"
        ))
