"""
Synthetic-data calibration studies.

Every study builds a list of independent ``RunTask`` objects (data generated in
the parent, one V_d per grid), executes them sequentially or on a process pool,
and returns a ``StudyReport`` whose runs are ordered by run_id.
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import django
import numpy as np

from calibration.calibrator import CalibConfig, calibrate, improvement, project
from pricing.conf import heston_setting
from pricing.exceptions import HestonError, ParameterError
from pricing.forward import solve_forward
from pricing.grid import MIN_CELLS, TruncationConfig, build_grid
from pricing.params import INITIAL_GUESS, PARAMETER_NAMES, REFERENCE_MARKET, REFERENCE_PARAMS, HestonParams

logger = logging.getLogger(__name__)

STUDIES = ('mesh', 'maturity', 'random', 'single')

DEFAULT_MESHES = (80, 90, 100, 110, 120, 130, 140)
DEFAULT_MATURITIES = (0.25, 0.5, 1.0, 2.0, 5.0)
DEFAULT_DELTAS = (0.05, 0.25)

__all__ = [
    'ExperimentSpec', 'RunResult', 'RunTask', 'StudyReport', 'generate_data', 'improvement',
    'run_maturity_study', 'run_mesh_study', 'run_random_init_study', 'run_single', 'run_study',
]


@dataclass(frozen=True)
class ExperimentSpec:
    study: str = 'single'
    market: object = REFERENCE_MARKET
    reference: object = REFERENCE_PARAMS
    initial: object = INITIAL_GUESS
    n_x: int = 80
    n_nu: int = 80
    n_tau: int = 40
    meshes: tuple = DEFAULT_MESHES
    maturities: tuple = DEFAULT_MATURITIES
    deltas: tuple = DEFAULT_DELTAS
    samples: int = 100
    seed: int = field(default_factory=lambda: heston_setting('SEED'))
    workers: int = field(default_factory=lambda: heston_setting('WORKERS'))
    record_timing: bool = False
    output_dir: str = field(default_factory=lambda: str(heston_setting('OUTPUT_DIR')))
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    calibration: CalibConfig = field(default_factory=CalibConfig)

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ParameterError(f"Unknown study '{self.study}', expected one of {STUDIES}.")
        if any(not 0.0 <= d < 1.0 for d in self.deltas):
            raise ParameterError(f"Deviation levels must lie in [0, 1), got {self.deltas}.")
        if self.samples < 1:
            raise ParameterError(f"Sample count must be at least 1, got {self.samples}.")
        if any(n < MIN_CELLS for n in self.meshes):
            raise ParameterError(f"Mesh entries must be at least {MIN_CELLS}, got {self.meshes}.")
        if not self.maturities or any(not T > 0.0 for T in self.maturities):
            raise ParameterError(f"Maturities must be positive, got {self.maturities}.")
        if self.workers < 1:
            raise ParameterError(f"Worker count must be at least 1, got {self.workers}.")

    def grid(self, n_x=None, n_nu=None, n_tau=None, market=None):
        return build_grid(
            market or self.market,
            self.n_x if n_x is None else n_x,
            self.n_nu if n_nu is None else n_nu,
            self.n_tau if n_tau is None else n_tau,
            self.truncation,
        )

    def snapshot(self):
        """JSON-ready description of everything that determines the report."""
        calib = self.calibration
        return {
            'study': self.study,
            'market': asdict(self.market),
            'reference': self.reference.as_dict(),
            'initial': self.initial.as_dict(),
            'n_x': self.n_x, 'n_nu': self.n_nu, 'n_tau': self.n_tau,
            'meshes': list(self.meshes),
            'maturities': list(self.maturities),
            'deltas': list(self.deltas),
            'samples': self.samples,
            'seed': self.seed,
            'record_timing': self.record_timing,
            'truncation': asdict(self.truncation),
            'calibration': {
                'lam': calib.lam,
                'u_ref': None if calib.u_ref is None else calib.u_ref.as_dict(),
                'gamma': calib.gamma,
                'epsilon': calib.epsilon,
                'gradient_rtol': calib.gradient_rtol,
                'max_iters': calib.max_iters,
                'min_step': calib.min_step,
                'box': calib.box.as_mapping(),
                'theta': calib.theta,
                'line_search': calib.line_search,
                'gradient_form': calib.gradient_form,
            },
        }


@dataclass(frozen=True)
class RunTask:
    run_id: int
    study: str
    seed: int
    delta: float
    u0: object
    market: object
    grid: object
    data: object
    calibration: CalibConfig
    record_timing: bool = False


@dataclass(frozen=True)
class RunResult:
    study: str
    run_id: int
    seed: int
    delta: float
    n_x: int
    n_nu: int
    n_tau: int
    T: float
    u0: object
    u_opt: object
    j0: float
    j_opt: float
    improvement: float
    iterations: int
    status: str
    wall_ms: float = None
    error: str = ''

    @property
    def failed(self):
        return self.status == 'error'

    def parameter_changes(self):
        """(u_opt - u0) / u0 per parameter; nan where u0 is zero or the run failed."""
        if self.u_opt is None:
            return dict.fromkeys(PARAMETER_NAMES, math.nan)
        start, end = self.u0.as_dict(), self.u_opt.as_dict()
        return {
            name: (end[name] - start[name]) / start[name] if start[name] != 0.0 else math.nan
            for name in PARAMETER_NAMES
        }


@dataclass(frozen=True)
class StudyReport:
    study: str
    spec: ExperimentSpec
    runs: tuple = ()

    @property
    def failures(self):
        return [run for run in self.runs if run.failed]


def generate_data(ref_params, market, grid, theta=None, box=None):
    """Synthetic observations V_d: the forward solve at the data-generating parameters."""
    return solve_forward(ref_params, market, grid, theta, box)


def run_single(task):
    """Calibrate one task; solver and calibration failures become an 'error' row."""
    grid = task.grid
    common = dict(
        study=task.study, run_id=task.run_id, seed=task.seed, delta=task.delta,
        n_x=grid.n_x, n_nu=grid.n_nu, n_tau=grid.n_tau, T=grid.T, u0=task.u0,
    )
    started = time.perf_counter()
    try:
        result = calibrate(task.u0, task.data, task.market, grid, task.calibration)
    except HestonError as exc:
        logger.error("run %d (%s) failed: %s", task.run_id, task.study, exc)
        return RunResult(
            **common, u_opt=None, j0=math.nan, j_opt=math.nan, improvement=math.nan,
            iterations=0, status='error', error=str(exc),
        )
    wall_ms = (time.perf_counter() - started) * 1e3 if task.record_timing else None
    logger.info(
        "run %d (%s): %s in %d steps, improvement %.4f",
        task.run_id, task.study, result.status, result.iterations, result.improvement,
    )
    return RunResult(
        **{**common, 'u0': result.u0}, u_opt=result.u_opt, j0=result.j0, j_opt=result.j_opt,
        improvement=result.improvement, iterations=result.iterations, status=result.status, wall_ms=wall_ms,
    )


def execute(tasks, workers=1):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=django.setup) as pool:
            runs = list(pool.map(run_single, tasks))
    else:
        runs = [run_single(task) for task in tasks]
    return tuple(sorted(runs, key=lambda run: run.run_id))


def _task(spec, run_id, u0, market, grid, data, delta=0.0):
    return RunTask(
        run_id=run_id, study=spec.study, seed=spec.seed, delta=delta, u0=u0, market=market, grid=grid,
        data=data, calibration=spec.calibration, record_timing=spec.record_timing,
    )


def _data_for(spec, market, grid):
    return generate_data(spec.reference, market, grid, spec.calibration.theta, spec.calibration.box)


def run_single_study(spec):
    grid = spec.grid()
    tasks = [_task(spec, 0, spec.initial, spec.market, grid, _data_for(spec, spec.market, grid))]
    return StudyReport(spec.study, spec, execute(tasks, spec.workers))


def run_mesh_study(spec):
    """One calibration per (N_x, N_nu) with N_nu in {N_x / 2, N_x}."""
    tasks = []
    for n_x in spec.meshes:
        for n_nu in (max(n_x // 2, MIN_CELLS), n_x):
            grid = spec.grid(n_x=n_x, n_nu=n_nu)
            data = _data_for(spec, spec.market, grid)
            tasks.append(_task(spec, len(tasks), spec.initial, spec.market, grid, data))
    logger.info("mesh study: %d runs", len(tasks))
    return StudyReport(spec.study, spec, execute(tasks, spec.workers))


def run_maturity_study(spec):
    """One calibration per maturity; N_tau scales with T so dtau stays fixed."""
    dtau = spec.market.T / spec.n_tau
    tasks = []
    for T in spec.maturities:
        market = spec.market.with_maturity(T)
        grid = spec.grid(n_tau=max(MIN_CELLS, round(T / dtau)), market=market)
        data = _data_for(spec, market, grid)
        tasks.append(_task(spec, len(tasks), spec.initial, market, grid, data))
    logger.info("maturity study: %d runs", len(tasks))
    return StudyReport(spec.study, spec, execute(tasks, spec.workers))


def run_random_init_study(spec):
    """``samples`` initial guesses per deviation level, uniform in u_ref (1 +/- delta) componentwise."""
    rng = np.random.default_rng(spec.seed)
    grid = spec.grid()
    data = _data_for(spec, spec.market, grid)
    reference = spec.reference.as_array()
    tasks = []
    for delta in spec.deltas:
        reprojected = 0
        for _ in range(spec.samples):
            draw = reference * (1.0 + rng.uniform(-delta, delta, size=reference.shape))
            raw = HestonParams.from_array(draw)
            u0 = project(raw, spec.calibration)
            reprojected += u0 != raw
            tasks.append(_task(spec, len(tasks), u0, spec.market, grid, data, delta))
        logger.info("delta=%.3g: %d of %d draws re-projected onto the feasible set", delta, reprojected, spec.samples)
    return StudyReport(spec.study, spec, execute(tasks, spec.workers))


STUDY_RUNNERS = {
    'single': run_single_study,
    'mesh': run_mesh_study,
    'maturity': run_maturity_study,
    'random': run_random_init_study,
}


def run_study(spec):
    logger.info("Starting %s study (seed %s, %d workers)", spec.study, spec.seed, spec.workers)
    report = STUDY_RUNNERS[spec.study](spec)
    if report.failures:
        logger.warning("%s study: %d of %d runs failed", spec.study, len(report.failures), len(report.runs))
    return report
