"""
Django settings for the nslab project.

The project hosts two apps: ``geometry`` (the numeric library) and
``experiments`` (scenario runs, emitted artifacts and the run ledger).
Values below can be overridden from the environment or a ``.env`` file.
"""

from pathlib import Path

import dj_database_url
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default='django-insecure-nslab-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'geometry',
    'experiments',
]

MIDDLEWARE = []


# --- DATABASE CONFIGURATION ---
# The run ledger; SQLite next to the project unless DATABASE_URL is set.
DATABASES = {
    'default': dj_database_url.config(
        default='sqlite:///' + str(BASE_DIR / 'db.sqlite3'),
        conn_max_age=600,
    )
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# --- LOGGING ---
NSLAB_LOG_LEVEL = config('NSLAB_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'geometry': {
            'handlers': ['console'],
            'level': NSLAB_LOG_LEVEL,
            'propagate': False,
        },
        'experiments': {
            'handlers': ['console'],
            'level': NSLAB_LOG_LEVEL,
            'propagate': False,
        },
    },
}


# --- LAB TOLERANCES ---
# Every entry can be overridden by an environment variable of the same name.
NSLAB = {
    'NEWTON_TOL': config('NEWTON_TOL', default=1e-12, cast=float),
    'NEWTON_MAX_ITER': config('NEWTON_MAX_ITER', default=50, cast=int),
    'SINGULAR_TOL': config('SINGULAR_TOL', default=1e-14, cast=float),
    'DERIVATIVE_STEP': config('DERIVATIVE_STEP', default=1e-5, cast=float),
    'DERIVATIVE_RTOL': config('DERIVATIVE_RTOL', default=1e-6, cast=float),
    'SURFACE_FD_STEP': config('SURFACE_FD_STEP', default=1e-4, cast=float),
    'TIME_STEP': config('TIME_STEP', default=1e-3, cast=float),
    'GRID_SAMPLES': config('GRID_SAMPLES', default=201, cast=int),
    'SHIFT_NODES': config('SHIFT_NODES', default=9, cast=int),
    'VANISHING_NU': config('VANISHING_NU', default=1e-12, cast=float),
    'RECORD_RUNS': config('RECORD_RUNS', default=True, cast=bool),
}
