"""
Numerical defaults, overridable per key through ``settings.HESTON_CALIBRATION``.

    heston_setting('THETA')  # -> 2/3 unless the project settings override it
"""
from django.conf import settings

DEFAULTS = {
    'X_HALF_WIDTH': 5.0,
    'NU_MAX': 3.0,
    'THETA': 2.0 / 3.0,
    'NU_DRIFT': 'hybrid',
    'SMOOTH_PAYOFF': True,
    'QUAD_UPPER': 200.0,
    'QUAD_NODES': 256,
    'QUAD_SCHEME': 'adaptive',
    'LAMBDA': 0.0,
    'GAMMA': 1e-4,
    'EPSILON': 1e-4,
    'MAX_ITERS': 100,
    'MIN_STEP': 2.0 ** -30,
    'LINE_SEARCH': 'projected',
    'GRADIENT_FORM': 'discrete',
    'GRADIENT_RTOL': 0.1,
    'BOX': {
        'sigma_nu': (0.01, 2.0),
        'rho': (-0.999, 0.999),
        'kappa_nu': (0.01, 20.0),
        'mu_nu': (0.001, 1.0),
    },
    'WORKERS': 1,
    'SEED': 2024,
    'OUTPUT_DIR': 'reports',
}


def heston_setting(name):
    if name not in DEFAULTS:
        raise KeyError(f"Unknown HESTON_CALIBRATION setting '{name}'.")
    user_settings = getattr(settings, 'HESTON_CALIBRATION', {})
    return user_settings.get(name, DEFAULTS[name])
