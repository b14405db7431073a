"""
Django settings for rcautocalib project.

The project hosts the calibration pipeline apps (geometry, raster, kernels,
matchnet, fusion, supervision, synthdata) and the `runs` app, which carries the
management commands and the run/evaluation records.
"""
import copy
import os
from pathlib import Path
from django.utils.log import DEFAULT_LOGGING

from dotenv import load_dotenv
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-rcautocalib-local-only')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = os.environ.get('DJANGO_DEBUG', '') == '1'

ALLOWED_HOSTS = [h for h in os.environ.get('DJANGO_ALLOWED_HOSTS', 'localhost,127.0.0.1').split(',') if h]

# Application definition

INSTALLED_APPS = [
    'jazzmin',
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    # my apps
    'geometry',
    'raster',
    'kernels',
    'matchnet',
    'fusion',
    'supervision',
    'synthdata',
    'runs',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'rcautocalib.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'rcautocalib.wsgi.application'


# Database

DATABASE_URL = os.environ.get('DATABASE_URL')
if DATABASE_URL:
    import dj_database_url
    DATABASES = {'default': dj_database_url.parse(DATABASE_URL)}
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': BASE_DIR / 'db.sqlite3',
        }
    }

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# Static files (admin only)

STATIC_URL = 'static/'
STATIC_ROOT = BASE_DIR / 'staticfiles'


# Calibration pipeline

CALIBRATION_DATA_ROOT = Path(os.environ.get('CALIBRATION_DATA_ROOT', BASE_DIR / 'data'))
CALIBRATION_RUNS_DIR = Path(os.environ.get('CALIBRATION_RUNS_DIR', BASE_DIR / 'runs_out'))
CALIBRATION_CONFIG_FILE = os.environ.get('CALIBRATION_CONFIG_FILE', '')
CALIBRATION_LOG_LEVEL = os.environ.get('CALIBRATION_LOG_LEVEL', 'INFO')


# Logging: Django's defaults plus an unfiltered console handler for the
# pipeline apps (the default console handler only fires with DEBUG on).

LOGGING = copy.deepcopy(DEFAULT_LOGGING)
LOGGING['formatters']['calibration'] = {
    'format': '[{levelname}] {name}: {message}',
    'style': '{',
}
LOGGING['handlers']['calibration_console'] = {
    'level': CALIBRATION_LOG_LEVEL,
    'class': 'logging.StreamHandler',
    'formatter': 'calibration',
}
for _app in ('geometry', 'raster', 'kernels', 'matchnet', 'fusion', 'supervision', 'synthdata', 'runs'):
    LOGGING['loggers'][_app] = {
        'handlers': ['calibration_console'],
        'level': CALIBRATION_LOG_LEVEL,
        'propagate': False,
    }


# Admin panel
JAZZMIN_SETTINGS = {
    'site_title': 'RC-AutoCalib Admin',
    'site_header': 'RC-AutoCalib',
    "site_brand": "RC-AutoCalib",
    'welcome_sign': 'Training runs and evaluations',
    "show_sidebar": True,
}
