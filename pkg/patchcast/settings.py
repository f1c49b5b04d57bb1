import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# The run registry and admin are local tools; override the key for anything shared.
SECRET_KEY = os.environ.get(
    'PATCHCAST_SECRET_KEY',
    'django-insecure-patchcast-local-experiments-only',
)

DEBUG = os.environ.get('PATCHCAST_DEBUG', '0') == '1'

ALLOWED_HOSTS = ['localhost', '127.0.0.1']


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    # additional apps
    'forecasting',
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

ROOT_URLCONF = 'patchcast.urls'

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

WSGI_APPLICATION = 'patchcast.wsgi.application'


# Database
# SQLite by default; PATCHCAST_DB_ENGINE=postgresql switches to the psycopg2 backend.

if os.environ.get('PATCHCAST_DB_ENGINE') == 'postgresql':
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': os.environ.get('PATCHCAST_DB_NAME', 'patchcast'),
            'USER': os.environ.get('PATCHCAST_DB_USER', 'patchcast'),
            'PASSWORD': os.environ.get('PATCHCAST_DB_PASSWORD', ''),
            'HOST': os.environ.get('PATCHCAST_DB_HOST', 'localhost'),
            'PORT': os.environ.get('PATCHCAST_DB_PORT', '5432'),
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': os.environ.get('PATCHCAST_DB_NAME', BASE_DIR / 'runs.sqlite3'),
        }
    }


AUTH_PASSWORD_VALIDATORS = [
    {
        'NAME': 'django.contrib.auth.password_validation.UserAttributeSimilarityValidator',
    },
    {
        'NAME': 'django.contrib.auth.password_validation.MinimumLengthValidator',
    },
]


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'patchcast': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'patchcast',
        },
    },
    'loggers': {
        'forecasting': {
            'handlers': ['console'],
            'level': os.environ.get('PATCHCAST_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Experiment defaults. Command flags and --config files take precedence.

PATCHCAST = {
    'OUTPUT_DIR': BASE_DIR / 'runs',
    'TRAIN_SEED': 42,
    'TEST_SEED': 101,
    'NUM_SAMPLES': 10000,
    'SEQ_LEN': 160,
    'PATCH_LEN': 8,
    'HORIZON': 1,
    'TRAINING': {
        'lr': 1e-3,
        'batch_size': 32,
        'stage1_epochs': 2000,
        'stage2_epochs': 300,
        'baseline_epochs': 300,
        'seed': 0,
    },
    'DESK_SCALE': {
        'num_samples': 500,
        'stage1_epochs': 200,
        'stage2_epochs': 100,
        'baseline_epochs': 100,
    },
}


# Desk-scale experiments are tagged 'slow'; run them with "manage.py test --tag=slow".

TEST_RUNNER = 'patchcast.test_runner.PatchcastTestRunner'
