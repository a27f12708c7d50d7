from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest

try:
    from pytest_django.fixtures import SettingsWrapper
except ImportError:  # pytest-django >= 4.12 renamed it
    from pytest_django.fixtures import Settings as SettingsWrapper

from cbetbench.bench.agents import AgentStream, StreamRole
from cbetbench.bench.config import ExperimentConfig
from cbetbench.bench.gridworlds import EnvKind, Observation, make_env


@pytest.fixture(autouse=True)
def output_dir(settings: SettingsWrapper, tmp_path: Path) -> Path:
    settings.CBET_OUTPUT_DIR = tmp_path / "runs"
    return settings.CBET_OUTPUT_DIR  # type: ignore


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def doorkey_obs() -> list[Observation]:
    env = make_env(EnvKind.DOORKEY, layout_seed=3)
    observations = [env.reset(0)]
    for action in (0, 2, 1, 2, 3):
        observations.append(env.step(action).observation)
    return observations


@pytest.fixture
def stream(rng: np.random.Generator) -> AgentStream:
    return AgentStream.initialize(
        StreamRole.EXTRINSIC, rng, width=8, init_scale=0.3
    )


@pytest.fixture
def small_config() -> Callable[..., ExperimentConfig]:
    def factory(**overrides: Any) -> ExperimentConfig:
        values: dict[str, Any] = {
            "name": "test",
            "env_kind": EnvKind.UNLOCK,
            "seeds": [1, 2],
            "step_budget": 400,
            "eval_every": 200,
            "eval_episodes": 2,
            "n_actors": 2,
            "unroll_length": 10,
            "feature_width": 8,
            "record_wall_time": False,
        }
        values.update(overrides)
        return ExperimentConfig(**values)

    return factory
