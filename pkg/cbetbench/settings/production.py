from .base import *  # noqa
from .base import LOGGING, _env

DEBUG = False

LOGGING["loggers"]["cbetbench"]["level"] = _env.string(  # type: ignore
    "CBET_LOG_LEVEL", "INFO"
)
