import csv
import json
import math
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, tag
from rest_framework import status
from rest_framework.test import APITestCase

from calibration.calibrator import CalibConfig
from pricing.exceptions import ParameterError, SolverError
from pricing.forward import solve_forward
from pricing.params import PARAMETER_NAMES, REFERENCE_MARKET, REFERENCE_PARAMS

from .models import RunRecord, StudyRun
from .reports import CSV_COLUMNS, emit_report, save_report
from .serializers import ExperimentSpecSerializer
from .studies import ExperimentSpec, StudyReport, generate_data, improvement, run_study

# smallest grids on which the reference problem still takes descent steps
TINY = dict(n_x=24, n_nu=16, n_tau=8, meshes=(16, 24), maturities=(1.0, 2.0), deltas=(0.05,), samples=2, seed=7, workers=1)
TINY_FLAGS = dict(n_x=24, n_nu=16, n_tau=8, meshes=[16, 24], maturities=[1.0, 2.0], deltas=[0.05], samples=2, seed=7, workers=1, max_iters=2)


def tiny_spec(study, **overrides):
    return ExperimentSpec(**{'study': study, **TINY, 'calibration': CalibConfig(max_iters=2), **overrides})


def read_rows(path):
    with open(path, newline='') as handle:
        return list(csv.DictReader(handle))


class OutputDirMixin:
    def setUp(self):
        super().setUp()
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out = Path(tmp.name)


class ImprovementTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(improvement(2.0, 0.5), 0.75)
        self.assertEqual(improvement(0.3, 0.3), 0.0)
        self.assertEqual(improvement(1.0, 0.0), 1.0)

    def test_initial_cost_must_be_positive(self):
        with self.assertRaises(ValueError):
            improvement(0.0, 0.0)


class ExperimentSpecTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ParameterError):
            ExperimentSpec(deltas=(1.0,))
        with self.assertRaises(ParameterError):
            ExperimentSpec(samples=0)
        with self.assertRaises(ParameterError):
            ExperimentSpec(meshes=(80, 3))
        with self.assertRaises(ParameterError):
            ExperimentSpec(maturities=(1.0, 0.0))
        with self.assertRaises(ParameterError):
            ExperimentSpec(study='sweep')

    def test_generated_data_is_the_forward_solve(self):
        spec = tiny_spec('single')
        grid = spec.grid()
        data = generate_data(REFERENCE_PARAMS, REFERENCE_MARKET, grid)
        self.assertEqual(data.values.tobytes(), solve_forward(REFERENCE_PARAMS, REFERENCE_MARKET, grid).values.tobytes())

    def test_snapshot_reloads_to_the_same_spec(self):
        spec = tiny_spec('mesh', calibration=CalibConfig(max_iters=3, lam=0.5, u_ref=REFERENCE_PARAMS))
        document = json.loads(json.dumps(spec.snapshot()))
        serializer = ExperimentSpecSerializer(data=document)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save().snapshot(), spec.snapshot())

    def test_serializer_reports_domain_errors(self):
        serializer = ExperimentSpecSerializer(data={'market': {'K': -1.0}})
        self.assertFalse(serializer.is_valid())
        self.assertIn('market', serializer.errors)
        serializer = ExperimentSpecSerializer(data={'calibration': {'lam': 1.0}})
        self.assertFalse(serializer.is_valid())


class StudyTests(OutputDirMixin, SimpleTestCase):
    def test_mesh_study_pairs(self):
        report = run_study(tiny_spec('mesh'))
        self.assertEqual([(run.n_x, run.n_nu) for run in report.runs], [(16, 8), (16, 16), (24, 12), (24, 24)])
        self.assertEqual([run.run_id for run in report.runs], [0, 1, 2, 3])

    def test_maturity_study_keeps_time_step(self):
        report = run_study(tiny_spec('maturity'))
        self.assertEqual([(run.T, run.n_tau) for run in report.runs], [(1.0, 8), (2.0, 16)])

    def test_zero_deviation_starts_at_the_data_parameters(self):
        report = run_study(tiny_spec('random', deltas=(0.0,), samples=3))
        self.assertEqual(len(report.runs), 3)
        for run in report.runs:
            self.assertEqual(run.u0, REFERENCE_PARAMS)
            self.assertEqual(run.status, 'converged')
            self.assertEqual(run.iterations, 0)
            self.assertEqual(run.improvement, 0.0)

    def test_random_draws_stay_within_deviation(self):
        report = run_study(tiny_spec('random', deltas=(0.05, 0.25), samples=3))
        self.assertEqual([run.delta for run in report.runs], [0.05] * 3 + [0.25] * 3)
        for run in report.runs:
            for start, ref in zip(run.u0.as_array(), REFERENCE_PARAMS.as_array()):
                self.assertLessEqual(abs(start - ref), run.delta * abs(ref) + 1e-12)
            self.assertTrue(run.u0.satisfies_feller)

    def test_runs_table_is_consistent(self):
        report = run_study(tiny_spec('mesh'))
        emit_report(report, self.out)
        rows = read_rows(self.out / 'mesh_runs.csv')
        self.assertEqual(len(rows), 4)
        for row in rows:
            j0, j_opt = float(row['J0']), float(row['Jopt'])
            self.assertGreater(j0, 0.0)
            self.assertLessEqual(j_opt, j0)
            self.assertAlmostEqual(float(row['improvement']), (j0 - j_opt) / j0, places=12)
            self.assertEqual(row['wall_ms'], '')
            self.assertEqual(row['study'], 'mesh')
        self.assertTrue(any(int(row['iters']) > 0 for row in rows))

    def test_single_study_takes_descent_steps(self):
        run = run_study(tiny_spec('single')).runs[0]
        self.assertGreater(run.iterations, 0)
        self.assertLess(run.j_opt, run.j0)
        self.assertGreater(run.improvement, 0.0)

    def test_plot_tables(self):
        expected = {
            'mesh': ['mesh_improvement', 'mesh_parameters', 'mesh_iterations'],
            'maturity': ['maturity_improvement', 'maturity_parameters', 'maturity_iterations'],
            'random': ['random_costs', 'random_iterations', 'random_parameters'],
        }
        for study, names in expected.items():
            with self.subTest(study=study):
                paths = emit_report(run_study(tiny_spec(study)), self.out)
                for name in names:
                    self.assertIn(self.out / f'{name}.csv', paths)
        self.assertEqual(len(list(self.out.glob('*_*.csv'))), 3 + 9)

    def test_parameter_change_columns(self):
        report = run_study(tiny_spec('maturity'))
        emit_report(report, self.out)
        rows = read_rows(self.out / 'maturity_parameters.csv')
        run = report.runs[0]
        self.assertAlmostEqual(
            float(rows[0]['change_kappa']), (run.u_opt.kappa_nu - run.u0.kappa_nu) / run.u0.kappa_nu, places=12,
        )

    def test_empty_report_writes_header_only(self):
        emit_report(StudyReport('mesh', tiny_spec('mesh'), ()), self.out)
        self.assertEqual((self.out / 'mesh_runs.csv').read_text(), ','.join(CSV_COLUMNS) + '\n')
        self.assertEqual((self.out / 'mesh_iterations.csv').read_text(), 'N_x,N_nu,iters\n')

    def test_rerun_is_byte_identical(self):
        first, second = self.out / 'a', self.out / 'b'
        emit_report(run_study(tiny_spec('random')), first)
        emit_report(run_study(tiny_spec('random')), second)
        for name in ('random_runs.csv', 'random_config.json', 'random_costs.csv'):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes())

    def test_timing_is_opt_in(self):
        report = run_study(tiny_spec('single', record_timing=True))
        self.assertGreater(report.runs[0].wall_ms, 0.0)

    def test_failed_run_is_recorded(self):
        with mock.patch('experiments.studies.calibrate', side_effect=SolverError('stage solve failed')):
            report = run_study(tiny_spec('single'))
        run = report.runs[0]
        self.assertEqual(run.status, 'error')
        self.assertTrue(math.isnan(run.j0))
        self.assertIs(report.failures[0], run)
        self.assertTrue(all(math.isnan(v) for v in run.parameter_changes().values()))


class CommandTests(OutputDirMixin, TestCase):
    def call(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, stderr=StringIO(), output_dir=str(self.out), **options)
        return out.getvalue()

    def test_study_writes_report(self):
        output = self.call('study', 'mesh', **TINY_FLAGS)
        self.assertIn('mesh study: 4 runs', output)
        self.assertTrue((self.out / 'mesh_runs.csv').exists())
        self.assertTrue(any(int(row['iters']) > 0 for row in read_rows(self.out / 'mesh_runs.csv')))
        config = json.loads((self.out / 'mesh_config.json').read_text())
        self.assertEqual(config['meshes'], [16, 24])
        self.assertEqual(config['calibration']['max_iters'], 2)
        self.assertFalse(StudyRun.objects.exists())

    def test_config_file_with_flag_override(self):
        config_path = self.out / 'experiment.json'
        config_path.write_text(json.dumps({'n_x': 40, 'n_nu': 8, 'n_tau': 4, 'calibration': {'max_iters': 1}}))
        self.call('calibrate', config=str(config_path), n_x=12, kappa0=5.5)
        row = read_rows(self.out / 'single_runs.csv')[0]
        self.assertEqual(row['N_x'], '12')
        self.assertEqual(float(row['kappa0']), 5.5)
        self.assertEqual(float(row['sigma0']), 0.92)
        self.assertLessEqual(int(row['iters']), 1)

    def test_stopping_flags_reach_the_config(self):
        self.call('calibrate', gradient_rtol=0.5, gradient_form='weak', **TINY_FLAGS)
        config = json.loads((self.out / 'single_config.json').read_text())
        self.assertEqual(config['calibration']['gradient_rtol'], 0.5)
        self.assertEqual(config['calibration']['gradient_form'], 'weak')
        with self.assertRaises(CommandError) as ctx:
            self.call('calibrate', gradient_rtol=1.5, **TINY_FLAGS)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_save_persists_records(self):
        self.call('study', 'random', save=True, **TINY_FLAGS)
        study_run = StudyRun.objects.get()
        self.assertEqual(study_run.study, 'random')
        self.assertEqual(study_run.seed, 7)
        self.assertEqual(list(study_run.records.values_list('run_id', flat=True)), [0, 1])
        self.assertEqual(study_run.config['samples'], 2)

    def test_config_errors_exit_with_two(self):
        bad = [
            dict(deltas=[1.5]),
            dict(line_search='wolfe'),
            dict(K=-1.0),
            dict(config=str(self.out / 'missing.json')),
            dict(nu_max=-1.0),
        ]
        for options in bad:
            with self.subTest(options=options), self.assertRaises(CommandError) as ctx:
                self.call('study', 'random', **options)
            self.assertEqual(ctx.exception.returncode, 2)

    def test_failed_runs_exit_with_one_after_writing(self):
        with mock.patch('experiments.studies.calibrate', side_effect=SolverError('stage solve failed')):
            with self.assertRaises(CommandError) as ctx:
                self.call('calibrate', save=True, **TINY_FLAGS)
        self.assertEqual(ctx.exception.returncode, 1)
        row = read_rows(self.out / 'single_runs.csv')[0]
        self.assertEqual(row['status'], 'error')
        self.assertEqual(row['J0'], 'nan')
        record = RunRecord.objects.get()
        self.assertIsNone(record.j0)
        self.assertEqual(record.error, 'stage solve failed')
        self.assertEqual(record.study_run.failed_runs, 1)

    def test_price_reports_both_prices(self):
        output = self.call('price', n_x=16, n_nu=16, n_tau=8)
        self.assertIn('PDE price', output)
        self.assertIn('Analytic price', output)
        self.assertIn('Relative error', output)

    def test_price_outside_domain_fails(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('price', n_x=16, n_nu=16, n_tau=8, s0=1e6)
        self.assertEqual(ctx.exception.returncode, 1)

    def test_gradcheck_lists_every_parameter(self):
        output = self.call('gradcheck', n_x=12, n_nu=8, n_tau=4)
        for name in PARAMETER_NAMES:
            self.assertIn(name, output)


class StudyApiTests(APITestCase):
    def setUp(self):
        self.study_run = StudyRun.objects.create(study='mesh', seed=3, config={'study': 'mesh'})
        for run_id in (1, 0):
            RunRecord.objects.create(
                study_run=self.study_run, run_id=run_id, n_x=80, n_nu=40 * (run_id + 1), n_tau=40, T=1.0,
                sigma0=0.92, rho0=0.05, kappa0=5.2, mu0=0.18, sigma_opt=0.9, rho_opt=0.1, kappa_opt=5.0,
                mu_opt=0.16, j0=1.0, j_opt=0.25, improvement=0.75, iterations=4, status='converged',
            )
        StudyRun.objects.create(study='random', seed=3, config={'study': 'random'})

    def test_list(self):
        response = self.client.get('/studies/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(len(response.data), 2)
        response = self.client.get('/studies/', {'study': 'mesh'})
        self.assertEqual([item['run_count'] for item in response.data], [2])

    def test_detail_orders_records(self):
        response = self.client.get(f'/studies/{self.study_run.pk}/')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual([record['run_id'] for record in response.data['records']], [0, 1])
        self.assertEqual(response.data['records'][0]['improvement'], 0.75)

    def test_read_only(self):
        response = self.client.post('/studies/', {'study': 'mesh', 'seed': 1, 'config': {}}, format='json')
        self.assertEqual(response.status_code, status.HTTP_405_METHOD_NOT_ALLOWED)

    def test_saved_report_round_trip(self):
        report = run_study(tiny_spec('single'))
        study_run = save_report(report)
        response = self.client.get(f'/studies/{study_run.pk}/')
        self.assertEqual(response.data['records'][0]['iterations'], report.runs[0].iterations)


class PriceApiTests(APITestCase):
    def payload(self, **overrides):
        return {'params': REFERENCE_PARAMS.as_dict(), 'n_x': 16, 'n_nu': 16, 'n_tau': 8, 's0': 10.0, 'nu0': 0.16, **overrides}

    def test_pde_price(self):
        response = self.client.post('/price/', self.payload(), format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertTrue(0.0 < response.data['pde_price'] < REFERENCE_MARKET.K)
        self.assertNotIn('analytic_price', response.data)

    def test_with_analytic_price(self):
        response = self.client.post('/price/', self.payload(analytic=True), format='json')
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertGreater(response.data['analytic_price'], 0.0)
        self.assertIn('relative_error', response.data)

    def test_invalid_request(self):
        response = self.client.post('/price/', self.payload(s0=-1.0), format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('s0', response.data)
        response = self.client.post('/price/', {'s0': 10.0, 'nu0': 0.1}, format='json')
        self.assertIn('params', response.data)

    def test_solver_errors_are_bad_requests(self):
        response = self.client.post('/price/', self.payload(s0=1e6), format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('error', response.data)
        params = {**REFERENCE_PARAMS.as_dict(), 'rho': 1.5}
        response = self.client.post('/price/', self.payload(params=params), format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)


@tag('slow')
class RandomStudyAcceptanceTests(OutputDirMixin, SimpleTestCase):
    def spec(self, workers, n=40, samples=10):
        return ExperimentSpec(
            study='random', n_x=n, n_nu=n, n_tau=n // 2, deltas=(0.05, 0.25), samples=samples, seed=11,
            workers=workers, calibration=CalibConfig(max_iters=30),
        )

    def test_reference_study(self):
        report = run_study(self.spec(workers=4, n=80, samples=100))
        self.assertEqual(len(report.runs), 200)
        iterations = {delta: [] for delta in (0.05, 0.25)}
        for run in report.runs:
            self.assertFalse(run.failed)
            self.assertTrue(report.spec.calibration.box.contains(run.u_opt))
            self.assertTrue(run.u_opt.satisfies_feller)
            self.assertGreaterEqual(run.improvement, 0.0)
            iterations[run.delta].append(run.iterations)
        near = np.array(iterations[0.05])
        far = np.array(iterations[0.25])
        self.assertGreaterEqual(np.mean(near <= 10), 0.5)
        self.assertGreaterEqual(np.median(far), np.median(near))

    def test_worker_pool_matches_sequential_run(self):
        emit_report(run_study(self.spec(workers=1)), self.out / 'sequential')
        emit_report(run_study(self.spec(workers=2)), self.out / 'pool')
        self.assertEqual(
            (self.out / 'sequential' / 'random_runs.csv').read_bytes(),
            (self.out / 'pool' / 'random_runs.csv').read_bytes(),
        )
