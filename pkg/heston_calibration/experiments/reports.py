"""
Report emission: the per-run table, the config snapshot and the plot-data tables.

Floats are written with 17 significant digits so identical runs give
byte-identical files.
"""
import csv
import json
import logging
import math
from pathlib import Path

from django.core.serializers.json import DjangoJSONEncoder
from django.db import transaction

from pricing.params import PARAMETER_NAMES

from .models import RunRecord, StudyRun

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    'study', 'run_id', 'seed', 'delta', 'N_x', 'N_nu', 'N_tau', 'T',
    'sigma0', 'rho0', 'kappa0', 'mu0', 'sigma_opt', 'rho_opt', 'kappa_opt', 'mu_opt',
    'J0', 'Jopt', 'improvement', 'iters', 'status', 'wall_ms',
]

SHORT_NAMES = dict(zip(PARAMETER_NAMES, ('sigma', 'rho', 'kappa', 'mu')))
CHANGE_COLUMNS = [f'change_{short}' for short in SHORT_NAMES.values()]


def format_value(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return format(value, '.17g')
    return str(value)


def _parameter_columns(params, suffix):
    values = params.as_dict() if params is not None else dict.fromkeys(PARAMETER_NAMES)
    return {f'{SHORT_NAMES[name]}{suffix}': values[name] for name in PARAMETER_NAMES}


def run_row(run):
    row = {
        'study': run.study, 'run_id': run.run_id, 'seed': run.seed, 'delta': float(run.delta),
        'N_x': run.n_x, 'N_nu': run.n_nu, 'N_tau': run.n_tau, 'T': float(run.T),
        **_parameter_columns(run.u0, '0'),
        **_parameter_columns(run.u_opt, '_opt'),
        'J0': run.j0, 'Jopt': run.j_opt, 'improvement': run.improvement,
        'iters': run.iterations, 'status': run.status, 'wall_ms': run.wall_ms,
    }
    return row


def _changes(run):
    changes = run.parameter_changes()
    return {f'change_{SHORT_NAMES[name]}': changes[name] for name in PARAMETER_NAMES}


def _write_table(path, columns, rows):
    with open(path, 'w', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow({key: format_value(row[key]) for key in columns})
    return path


def _plot_tables(report):
    """Plot-data tables per study: name -> (columns, rows)."""
    runs = report.runs
    if report.study in ('mesh', 'maturity'):
        key_columns = ['N_x', 'N_nu'] if report.study == 'mesh' else ['T', 'N_tau']

        def keys(run):
            return {'N_x': run.n_x, 'N_nu': run.n_nu} if report.study == 'mesh' else {'T': float(run.T), 'N_tau': run.n_tau}

        return {
            f'{report.study}_improvement': (
                key_columns + ['improvement'], [{**keys(r), 'improvement': r.improvement} for r in runs],
            ),
            f'{report.study}_parameters': (
                key_columns + CHANGE_COLUMNS, [{**keys(r), **_changes(r)} for r in runs],
            ),
            f'{report.study}_iterations': (
                key_columns + ['iters'], [{**keys(r), 'iters': r.iterations} for r in runs],
            ),
        }
    if report.study == 'random':
        base = lambda r: {'delta': float(r.delta), 'run_id': r.run_id}
        return {
            'random_costs': (['delta', 'run_id', 'J0', 'Jopt'], [{**base(r), 'J0': r.j0, 'Jopt': r.j_opt} for r in runs]),
            'random_iterations': (['delta', 'run_id', 'iters'], [{**base(r), 'iters': r.iterations} for r in runs]),
            'random_parameters': (
                ['delta', 'run_id'] + CHANGE_COLUMNS, [{**base(r), **_changes(r)} for r in runs],
            ),
        }
    return {}


def emit_report(report, directory):
    """Write <study>_runs.csv, <study>_config.json and the plot-data tables; return the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [_write_table(directory / f'{report.study}_runs.csv', CSV_COLUMNS, map(run_row, report.runs))]

    config_path = directory / f'{report.study}_config.json'
    config_path.write_text(json.dumps(report.spec.snapshot(), cls=DjangoJSONEncoder, indent=2, sort_keys=True) + '\n')
    written.append(config_path)

    for name, (columns, rows) in _plot_tables(report).items():
        written.append(_write_table(directory / f'{name}.csv', columns, rows))
    logger.info("Wrote %d report files to %s", len(written), directory)
    return written


def _nullable(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else value


@transaction.atomic
def save_report(report):
    """Persist a study and its runs; nan costs of failed runs are stored as NULL."""
    study_run = StudyRun.objects.create(
        study=report.study, seed=report.spec.seed, config=report.spec.snapshot(),
        failed_runs=len(report.failures),
    )
    records = []
    for run in report.runs:
        row = run_row(run)
        records.append(RunRecord(
            study_run=study_run, run_id=run.run_id, delta=run.delta,
            n_x=run.n_x, n_nu=run.n_nu, n_tau=run.n_tau, T=run.T,
            sigma0=row['sigma0'], rho0=row['rho0'], kappa0=row['kappa0'], mu0=row['mu0'],
            sigma_opt=row['sigma_opt'], rho_opt=row['rho_opt'], kappa_opt=row['kappa_opt'], mu_opt=row['mu_opt'],
            j0=_nullable(run.j0), j_opt=_nullable(run.j_opt), improvement=_nullable(run.improvement),
            iterations=run.iterations, status=run.status, wall_ms=run.wall_ms, error=run.error,
        ))
    RunRecord.objects.bulk_create(records)
    logger.info("Saved %s study #%d with %d runs", report.study, study_run.pk, len(records))
    return study_run
