"""
Django settings for the cbetbench project.

The bench is file based: there is no database, no middleware and no URL
configuration. Django provides settings, logging configuration and the
management-command CLI.
"""

from pathlib import Path

from .env import EnvValue

_env = EnvValue()

BASE_DIR = Path(__file__).resolve().parent.parent

DEBUG = False

SECRET_KEY = _env.string("SECRET_KEY", "cbetbench-not-a-web-service")

ALLOWED_HOSTS: list[str] = []

INSTALLED_APPS = [
    "cbetbench.bench.apps.AppConfig",
]

DATABASES: dict[str, dict[str, str]] = {}

USE_TZ = True

TIME_ZONE = "UTC"

# Logging
# https://docs.djangoproject.com/en/5.0/topics/logging/

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "{levelname} {message}", "style": "{"},
        "verbose": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        "cbetbench": {"handlers": ["console"], "level": "INFO"},
    },
}

# Custom settings

CBET_OUTPUT_DIR = _env.path("CBET_OUTPUT_DIR", Path.cwd() / "runs")
CBET_EVENT_LOG = _env.bool("CBET_EVENT_LOG", True)
