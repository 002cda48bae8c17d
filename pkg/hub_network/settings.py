"""
Django settings for hub_network project.

The project has no web surface: it is driven through management commands
(``python manage.py simulate|fit|preprocess|bootstrap|eval|study``). The
database keeps the run ledger and the task queue for study replicates.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/6.0/ref/settings/
"""

import os
from pathlib import Path

import dj_database_url
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(str(BASE_DIR / ".env"))

# Nothing is signed; the key only satisfies Django
SECRET_KEY = os.getenv("SECRET_KEY", "hub-network-local")

DEBUG = os.getenv("DEBUG") == "True"

# Application definition

INSTALLED_APPS = [
    "django_tasks",
    "django_tasks.backends.database",
    "hubmodel",
]

# Database
# https://docs.djangoproject.com/en/6.0/ref/settings/#databases

DATABASES = {"default": dj_database_url.config(default="sqlite:///db.sqlite3")}

# Default primary key field type
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

TIME_ZONE = "UTC"

USE_TZ = True

# Django Tasks Configuration
# Study replicates run inline by default; point TASKS_BACKEND at
# "django_tasks.backends.database.DatabaseBackend" and start
# `manage.py db_worker` processes to spread them over workers.
TASKS = {
    "default": {
        "BACKEND": os.getenv(
            "TASKS_BACKEND", "django_tasks.backends.immediate.ImmediateBackend"
        ),
        "ENQUEUE_ON_COMMIT": False,
    }
}

# Logging
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "hubmodel": {
            "handlers": ["console"],
            "level": "DEBUG" if DEBUG else "INFO",
            "propagate": False,
        },
    },
}

# Hub model defaults; command-line options override these per run
HUB_MODEL = {
    "THETA_MAX": 30.0,
    "MAX_EM_ITERS": 500,
    "EM_TOL": 1e-7,
    "MSTEP_TOL": 1e-8,
    "MSTEP_GRAD_TOL": 1e-6,
    "MSTEP_MAX_CYCLES": 100,
    "NEWTON_MAX_STEPS": 25,
    "NEWTON_DAMPING": 20,
    "BOOTSTRAP_REPLICATES": 200,
    "BOOTSTRAP_LEVEL": 0.95,
    "BOOTSTRAP_MAX_FAILURE_RATE": 0.10,
}
