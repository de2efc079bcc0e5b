"""
Django settings for the lidarsim project.

Generated by 'django-admin startproject' and trimmed down to what a
command-line simulator needs: no URL conf, no database, no static files.
Every simulator default lives here and can be overridden from the
environment (or a local .env file).

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""
from dotenv import load_dotenv
load_dotenv()
from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing here is served or signed.
SECRET_KEY = os.environ.get('LIDARSIM_SECRET_KEY', 'lidarsim-local-only')

DEBUG = os.environ.get('LIDARSIM_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'transients',
]

MIDDLEWARE = []

# Simulations never touch a database.
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# ================================================
# LOGGING
# ================================================
LIDARSIM_LOG_LEVEL = os.environ.get('LIDARSIM_LOG_LEVEL', 'INFO')

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
        'transients': {
            'handlers': ['console'],
            'level': LIDARSIM_LOG_LEVEL,
            'propagate': False,
        },
    },
}


# ================================================
# TRANSIENT CUBE GEOMETRY
# ================================================
LIDARSIM_DELTA_PS = float(os.environ.get('LIDARSIM_DELTA_PS', '128'))
LIDARSIM_N_BINS = int(os.environ.get('LIDARSIM_N_BINS', '637'))
LIDARSIM_GATE_PATH_MIN_M = float(os.environ.get('LIDARSIM_GATE_PATH_MIN_M', '1.0'))
# 'error' or 'drop'
LIDARSIM_GATE_POLICY = os.environ.get('LIDARSIM_GATE_POLICY', 'error')


# ================================================
# RIG
# ================================================
LIDARSIM_RESOLUTION = int(os.environ.get('LIDARSIM_RESOLUTION', '64'))
LIDARSIM_FOV_DEG = float(os.environ.get('LIDARSIM_FOV_DEG', '90'))
LIDARSIM_SPOT_GRID = int(os.environ.get('LIDARSIM_SPOT_GRID', '5'))
LIDARSIM_SPOT_FOV_DEG = float(os.environ.get('LIDARSIM_SPOT_FOV_DEG', '60'))


# ================================================
# RENDERER
# ================================================
# Photons per spot; scales every deposit so the weakest lit pair still
# clears LIDARSIM_MIN_AMPLITUDE in generated rooms.
LIDARSIM_SOURCE_POWER = float(os.environ.get('LIDARSIM_SOURCE_POWER', '1e8'))
LIDARSIM_GRAZING_COS = float(os.environ.get('LIDARSIM_GRAZING_COS', '1e-2'))
LIDARSIM_MAX_PRIMITIVES = int(os.environ.get('LIDARSIM_MAX_PRIMITIVES', '8'))


# ================================================
# DEMULTIPLEXER
# ================================================
LIDARSIM_TOLERANCE_BINS = int(os.environ.get('LIDARSIM_TOLERANCE_BINS', '1'))
LIDARSIM_MIN_AMPLITUDE = float(os.environ.get('LIDARSIM_MIN_AMPLITUDE', '1e-6'))
LIDARSIM_MIN_SEPARATION_BINS = int(os.environ.get('LIDARSIM_MIN_SEPARATION_BINS', '2'))
LIDARSIM_SPECULAR_MIN_SPOTS = int(os.environ.get('LIDARSIM_SPECULAR_MIN_SPOTS', '3'))


# ================================================
# SHADOW CARVING
# ================================================
LIDARSIM_GRID_RESOLUTION = int(os.environ.get('LIDARSIM_GRID_RESOLUTION', '64'))
# 'occupied' or 'empty'
LIDARSIM_UNKNOWN_POLICY = os.environ.get('LIDARSIM_UNKNOWN_POLICY', 'occupied')


# ================================================
# METRICS
# ================================================
LIDARSIM_SSIM_ALPHA = 0.15
LIDARSIM_SMOOTHNESS_BETA = 1e-3
LIDARSIM_SSIM_WINDOW = 7
LIDARSIM_EDGE_THRESHOLD = float(os.environ.get('LIDARSIM_EDGE_THRESHOLD', '0.05'))
LIDARSIM_BOUNDARY_TOLERANCE = int(os.environ.get('LIDARSIM_BOUNDARY_TOLERANCE', '1'))


# ================================================
# EXECUTION
# ================================================
LIDARSIM_THREADS = int(os.environ.get('LIDARSIM_THREADS', str(os.cpu_count() or 1)))
