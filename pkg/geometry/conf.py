from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

DEFAULTS = {
    'NEWTON_TOL': 1e-12,
    'NEWTON_MAX_ITER': 50,
    'SINGULAR_TOL': 1e-14,
    'DERIVATIVE_STEP': 1e-5,
    'DERIVATIVE_RTOL': 1e-6,
    'SURFACE_FD_STEP': 1e-4,
    'TIME_STEP': 1e-3,
    'GRID_SAMPLES': 201,
    'SHIFT_NODES': 9,
    'VANISHING_NU': 1e-12,
    'RECORD_RUNS': True,
}


def lab_setting(name):
    """Look up a lab tolerance, falling back to the built-in default."""
    if name not in DEFAULTS:
        raise KeyError(f"Unknown lab setting: {name}")
    try:
        overrides = getattr(settings, 'NSLAB', {})
    except ImproperlyConfigured:
        # Library used outside a configured Django project.
        overrides = {}
    return overrides.get(name, DEFAULTS[name])
