from __future__ import annotations

from typing import Any

from django.core.exceptions import ValidationError


class ConfigurationError(ValidationError):
    """An experiment, environment or policy was configured inconsistently."""


class UsageError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class TrainingError(ArithmeticError):
    def __init__(self, message: str, diagnostics: dict[str, Any]):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self) -> str:
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{self.args[0]} ({details})" if details else self.args[0]


class CollectionError(RuntimeError):
    def __init__(self, message: str, actor: int, step: int):
        super().__init__(
            f"Actor {actor} failed at unroll step {step}: {message}"
        )
        self.actor = actor
        self.step = step
