import os
from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# The project has no web surface; the key only satisfies Django's startup checks.
SECRET_KEY = config('SECRET_KEY', default='django-insecure-qeve-numerics-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS: list[str] = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # Third-party apps
    'rest_framework',

    # Local apps
    'apps.driving',
    'apps.interval_maps',
    'apps.transfer_op',
    'apps.thermo',
    'apps.perturb',
    'apps.evt',
    'apps.limits',
    'apps.experiments',
]


# Database
# Nothing is persisted; the sqlite entry keeps the test runner and system checks quiet.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Numerical defaults
# Every value can be overridden from the environment or a .env file.

# Pullback / adjoint sweeps
THERMO_TOL = config('THERMO_TOL', default=1e-9, cast=float)
# Thermo depths come from a pilot decay run; DEFAULT_PULL_DEPTH covers paths too short for one
# and the matrix cocycles.
DEFAULT_PULL_DEPTH = config('DEFAULT_PULL_DEPTH', default=40, cast=int)
MAX_PULL_DEPTH = config('MAX_PULL_DEPTH', default=400, cast=int)

# Ulam grids
DEFAULT_GRID_CELLS = config('DEFAULT_GRID_CELLS', default=4096, cast=int)
MAX_GRID_CELLS = config('MAX_GRID_CELLS', default=2 ** 14, cast=int)

# Extremal index series
KMAX_DEFAULT = config('KMAX_DEFAULT', default=12, cast=int)
KMAX_CAP = config('KMAX_CAP', default=4096, cast=int)
QHAT_TAIL_TOL = config('QHAT_TAIL_TOL', default=1e-3, cast=float)
THRESHOLD_TOL = config('THRESHOLD_TOL', default=1e-12, cast=float)

# Monte Carlo
MC_BLOCK_SIZE = config('MC_BLOCK_SIZE', default=20000, cast=int)

# Experiment runner
EXPERIMENT_THREADS = config('EXPERIMENT_THREADS', default=1, cast=int)
EXPERIMENT_OUTPUT_DIR = config('EXPERIMENT_OUTPUT_DIR', default=str(BASE_DIR / 'output'))


os.makedirs(BASE_DIR / 'logs', exist_ok=True)

# Simple Logging Configuration - Only logs from the project (apps.*)
LOGGING = {
    'version': 1,
    'disable_existing_loggers': True,
    'formatters': {
        'simple': {
            'format': '{levelname} {asctime} {name} - {message}',
            'style': '{',
            'datefmt': '%Y-%m-%d %H:%M:%S',
        },
    },
    'handlers': {
        'console': {
            'level': config('CONSOLE_LOG_LEVEL', default='INFO'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'INFO',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': BASE_DIR / 'logs' / 'app.log',
            'maxBytes': 1024*1024*10,  # 10MB
            'backupCount': 5,
            'formatter': 'simple',
        },
        'error_file': {
            'level': 'ERROR',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': BASE_DIR / 'logs' / 'app_error.log',
            'maxBytes': 1024*1024*10,  # 10MB
            'backupCount': 5,
            'formatter': 'simple',
        },
    },
    'loggers': {
        'apps': {
            'handlers': ['console', 'file', 'error_file'],
            'level': 'DEBUG',
            'propagate': False,
        },
    },
}
