from .base import *  # noqa
from .base import LOGGING

DEBUG = True

LOGGING["handlers"]["console"]["formatter"] = "verbose"  # type: ignore
LOGGING["loggers"]["cbetbench"]["level"] = "DEBUG"  # type: ignore
