import os
from pathlib import Path
from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / '.env')

SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'dev-secret-key')
DEBUG = os.environ.get('DJANGO_DEBUG', '1') == '1'
ALLOWED_HOSTS = os.environ.get('DJANGO_ALLOWED_HOSTS', 'localhost,127.0.0.1').split(',')

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    # Third-party
    'rest_framework',

    # Local apps
    'apps.core',
    'apps.grids',
    'apps.evolution',
    'apps.equilibria',
    'apps.continuation',
    'apps.segregation',
    'apps.packs',
    'apps.scenarios',
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

ROOT_URLCONF = 'config.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'config.wsgi.application'

# Run records only; sqlite is enough for a desk-scale toolkit
DATABASES = {
    'default': {
        'ENGINE': os.environ.get('DB_ENGINE', 'django.db.backends.sqlite3'),
        'NAME': os.environ.get('DB_NAME', BASE_DIR / 'db.sqlite3'),
    }
}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True

STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Solver defaults
PREDPACK_NEWTON_TOL = float(os.environ.get('PREDPACK_NEWTON_TOL', '1e-10'))
PREDPACK_NEWTON_MAX_ITER = int(os.environ.get('PREDPACK_NEWTON_MAX_ITER', '50'))
PREDPACK_NEWTON_COND_LIMIT = float(
    os.environ.get('PREDPACK_NEWTON_COND_LIMIT', '1e12'))

PREDPACK_EVOLVE_DT_MAX = float(os.environ.get('PREDPACK_EVOLVE_DT_MAX', '1e-2'))
PREDPACK_EVOLVE_MAX_HALVINGS = int(
    os.environ.get('PREDPACK_EVOLVE_MAX_HALVINGS', '20'))

PREDPACK_DISCRETE_SPECTRUM_MAX_NODES = int(
    os.environ.get('PREDPACK_DISCRETE_SPECTRUM_MAX_NODES', '4096'))

PREDPACK_CONTINUATION_BETA_MAX = float(
    os.environ.get('PREDPACK_CONTINUATION_BETA_MAX', '500'))
PREDPACK_CONTINUATION_MAX_STEPS = int(
    os.environ.get('PREDPACK_CONTINUATION_MAX_STEPS', '2000'))

PREDPACK_FREE_BOUNDARY_THRESHOLD = float(
    os.environ.get('PREDPACK_FREE_BOUNDARY_THRESHOLD', '1e-3'))
PREDPACK_LIPSCHITZ_SAFETY = float(
    os.environ.get('PREDPACK_LIPSCHITZ_SAFETY', '1.05'))

# 'inline' solves optimizer cells in-process, 'celery' fans them out to workers
PREDPACK_PACKS_DISPATCH = os.environ.get('PREDPACK_PACKS_DISPATCH', 'inline')

PREDPACK_OUTPUT_ROOT = Path(
    os.environ.get('PREDPACK_OUTPUT_ROOT', BASE_DIR / 'runs'))

# Celery Configuration (optional worker pool for optimizer cells)
CELERY_BROKER_URL = os.environ.get(
    'CELERY_BROKER_URL', 'redis://localhost:6379/0')
CELERY_RESULT_BACKEND = os.environ.get(
    'CELERY_RESULT_BACKEND', 'redis://localhost:6379/0')
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = TIME_ZONE
CELERY_ENABLE_UTC = True

# Run tasks in-process when no worker is available
CELERY_TASK_ALWAYS_EAGER = os.environ.get('CELERY_ALWAYS_EAGER', '0') == '1'
CELERY_TASK_EAGER_PROPAGATES = CELERY_TASK_ALWAYS_EAGER

# Logging configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'apps': {
            'handlers': ['console'],
            'level': os.environ.get('PREDPACK_LOG_LEVEL', 'INFO'),
            'propagate': True,
        },
    },
}
