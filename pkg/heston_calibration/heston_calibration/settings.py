"""
Django settings for the heston_calibration project.

The numerical defaults (grid truncation, ADI parameter, line search, parameter
box, study defaults) live in ``HESTON_CALIBRATION`` below. Keys left out fall
back to ``pricing.conf.DEFAULTS``.
"""

import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('HESTON_SECRET_KEY', 'django-insecure-heston-calibration-dev-only')

DEBUG = os.environ.get('HESTON_DEBUG', '1') == '1'

ALLOWED_HOSTS = os.environ.get('HESTON_ALLOWED_HOSTS', 'localhost,127.0.0.1').split(',')


INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',

    'pricing',
    'calibration',
    'experiments',
]

REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [
        'rest_framework.permissions.AllowAny',
    ],
    'UNAUTHENTICATED_USER': None,
}

HESTON_CALIBRATION = {
    # domain truncation around log(K) and variance ceiling
    'X_HALF_WIDTH': 5.0,
    'NU_MAX': 3.0,
    # modified Craig-Sneyd parameter
    'THETA': 2.0 / 3.0,
    # variance-drift stencil: 'hybrid', 'upwind' or 'upwind2'
    'NU_DRIFT': 'hybrid',
    # cell-average the payoff across the strike
    'SMOOTH_PAYOFF': True,
    # analytic oracle
    'QUAD_UPPER': 200.0,
    'QUAD_NODES': 256,
    'QUAD_SCHEME': 'adaptive',
    # gradient descent
    'LAMBDA': 0.0,
    'GAMMA': 1e-4,
    'EPSILON': 1e-4,
    'MAX_ITERS': 100,
    'MIN_STEP': 2.0 ** -30,
    'LINE_SEARCH': 'projected',
    'GRADIENT_FORM': 'discrete',
    # stop once |g| <= EPSILON or |g| <= GRADIENT_RTOL * |g_0|
    'GRADIENT_RTOL': 0.1,
    'BOX': {
        'sigma_nu': (0.01, 2.0),
        'rho': (-0.999, 0.999),
        'kappa_nu': (0.01, 20.0),
        'mu_nu': (0.001, 1.0),
    },
    # experiment harness
    'WORKERS': int(os.environ.get('HESTON_WORKERS', '1')),
    'SEED': 2024,
    'OUTPUT_DIR': BASE_DIR / 'reports',
}


MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.middleware.common.CommonMiddleware',
]

ROOT_URLCONF = 'heston_calibration.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
            ],
        },
    },
]

WSGI_APPLICATION = 'heston_calibration.wsgi.application'


DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}


LOG_LEVEL = os.environ.get('HESTON_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'pricing': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
        'calibration': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
        'experiments': {'handlers': ['console'], 'level': LOG_LEVEL, 'propagate': False},
    },
}


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
