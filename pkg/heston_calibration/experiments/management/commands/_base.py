"""
Shared configuration surface of the experiment commands.

A JSON ``--config`` document (same shape as a report's ``*_config.json``) is
loaded first; every flag that is given overrides the matching key. The merged
document is validated by ``ExperimentSpecSerializer``. Configuration problems
exit with status 2, failed calibration runs with status 1.
"""
import json
import logging

from django.core.management.base import BaseCommand, CommandError

from experiments.reports import emit_report, save_report
from experiments.serializers import ExperimentSpecSerializer
from experiments.studies import run_study
from pricing.params import INITIAL_GUESS, REFERENCE_PARAMS

logger = logging.getLogger(__name__)

CONFIG_ERROR = 2
RUN_FAILURE = 1

# option dest -> path into the config document
FLAG_PATHS = {
    'K': ('market', 'K'),
    'r': ('market', 'r'),
    'q': ('market', 'q'),
    'T': ('market', 'T'),
    'sigma0': ('initial', 'sigma_nu'),
    'rho0': ('initial', 'rho'),
    'kappa0': ('initial', 'kappa_nu'),
    'mu0': ('initial', 'mu_nu'),
    'sigma_ref': ('reference', 'sigma_nu'),
    'rho_ref': ('reference', 'rho'),
    'kappa_ref': ('reference', 'kappa_nu'),
    'mu_ref': ('reference', 'mu_nu'),
    'n_x': ('n_x',),
    'n_nu': ('n_nu',),
    'n_tau': ('n_tau',),
    'meshes': ('meshes',),
    'maturities': ('maturities',),
    'deltas': ('deltas',),
    'samples': ('samples',),
    'seed': ('seed',),
    'workers': ('workers',),
    'record_timing': ('record_timing',),
    'output_dir': ('output_dir',),
    'x_half_width': ('truncation', 'x_half_width'),
    'nu_max': ('truncation', 'nu_max'),
    'lam': ('calibration', 'lam'),
    'gamma': ('calibration', 'gamma'),
    'epsilon': ('calibration', 'epsilon'),
    'gradient_rtol': ('calibration', 'gradient_rtol'),
    'max_iters': ('calibration', 'max_iters'),
    'theta': ('calibration', 'theta'),
    'line_search': ('calibration', 'line_search'),
    'gradient_form': ('calibration', 'gradient_form'),
}

# a partial parameter override starts from these values
PARAMETER_BASES = {'initial': INITIAL_GUESS, 'reference': REFERENCE_PARAMS}


def float_list(value):
    return [float(item) for item in value.split(',') if item.strip()]


def int_list(value):
    return [int(item) for item in value.split(',') if item.strip()]


class ExperimentCommand(BaseCommand):
    """Base for commands driven by an ExperimentSpec."""

    def add_arguments(self, parser):
        parser.add_argument('--config', help='JSON experiment document; flags override its values')

        market = parser.add_argument_group('market')
        market.add_argument('--K', dest='K', type=float)
        market.add_argument('--r', dest='r', type=float)
        market.add_argument('--q', dest='q', type=float)
        market.add_argument('--T', dest='T', type=float)

        params = parser.add_argument_group('parameters')
        for name in ('sigma', 'rho', 'kappa', 'mu'):
            params.add_argument(f'--{name}0', type=float, help=f'initial {name}')
            params.add_argument(f'--{name}-ref', type=float, help=f'data-generating {name}')

        grid = parser.add_argument_group('grid')
        grid.add_argument('--n-x', type=int)
        grid.add_argument('--n-nu', type=int)
        grid.add_argument('--n-tau', type=int)
        grid.add_argument('--x-half-width', type=float)
        grid.add_argument('--nu-max', type=float)

        study = parser.add_argument_group('study')
        study.add_argument('--meshes', type=int_list, help='comma-separated N_x values')
        study.add_argument('--maturities', type=float_list, help='comma-separated maturities')
        study.add_argument('--deltas', type=float_list, help='comma-separated deviation levels')
        study.add_argument('--samples', type=int)
        study.add_argument('--seed', type=int)
        study.add_argument('--workers', type=int)
        study.add_argument('--record-timing', action='store_true', default=None)
        study.add_argument('--output-dir')
        study.add_argument('--save', action='store_true', help='persist the study to the database')

        calib = parser.add_argument_group('calibration')
        calib.add_argument('--lam', type=float)
        calib.add_argument('--gamma', type=float)
        calib.add_argument('--epsilon', type=float)
        calib.add_argument('--gradient-rtol', type=float)
        calib.add_argument('--max-iters', type=int)
        calib.add_argument('--theta', type=float)
        calib.add_argument('--line-search')
        calib.add_argument('--gradient-form')

    def read_config(self, path):
        if not path:
            return {}
        try:
            with open(path) as handle:
                document = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise CommandError(f"Cannot read config '{path}': {exc}", returncode=CONFIG_ERROR) from exc
        if not isinstance(document, dict):
            raise CommandError(f"Config '{path}' must hold a JSON object.", returncode=CONFIG_ERROR)
        return document

    def merge_flags(self, document, options):
        for dest, path in FLAG_PATHS.items():
            value = options.get(dest)
            if value is None:
                continue
            target = document
            for key in path[:-1]:
                if key in PARAMETER_BASES and key not in target:
                    target[key] = PARAMETER_BASES[key].as_dict()
                target = target.setdefault(key, {})
            target[path[-1]] = value
        return document

    def load_spec(self, options, study):
        document = self.merge_flags(self.read_config(options.get('config')), options)
        document['study'] = study
        serializer = ExperimentSpecSerializer(data=document)
        if not serializer.is_valid():
            raise CommandError(
                f"Invalid configuration: {json.dumps(serializer.errors, sort_keys=True)}",
                returncode=CONFIG_ERROR,
            )
        spec = serializer.save()
        logger.info("%s configuration: grid %dx%dx%d, seed %s", study, spec.n_x, spec.n_nu, spec.n_tau, spec.seed)
        return spec

    def run_and_report(self, spec, save=False):
        """Run the study, write its files, optionally persist it; failed runs exit with status 1."""
        report = run_study(spec)
        paths = emit_report(report, spec.output_dir)
        for path in paths:
            self.stdout.write(f"wrote {path}")
        if save:
            study_run = save_report(report)
            self.stdout.write(f"saved study #{study_run.pk}")
        if report.failures:
            raise CommandError(
                f"{len(report.failures)} of {len(report.runs)} runs failed: "
                + '; '.join(f"run {run.run_id}: {run.error}" for run in report.failures),
                returncode=RUN_FAILURE,
            )
        return report
