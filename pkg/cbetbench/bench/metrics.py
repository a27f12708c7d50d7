from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import TracebackType
from typing import IO, Any

import numpy as np

from .agents import Policy
from .gridworlds import EnvSpec, Replay
from .utils import ACTION_STREAM, EVAL_STREAM, draw_seed, rng_stream


@dataclass(frozen=True)
class MetricsRow:
    global_step: int
    seed: int
    returns: tuple[float, ...]
    mean_intrinsic: float | None = None
    episodes_completed: int = 0
    wall_seconds: float = 0.0

    @property
    def mean_eval_return(self) -> float:
        return float(np.mean(self.returns)) if self.returns else 0.0

    @property
    def se_eval_return(self) -> float | None:
        return standard_error(self.returns)


def standard_error(values: Sequence[float]) -> float | None:
    """Sample standard deviation over sqrt(n); None below two values."""
    if len(values) < 2:
        return None
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def rolling_average(
    series: Sequence[tuple[int, float]], window_steps: int
) -> list[tuple[int, float]]:
    """Mean of the values whose steps lie in (step - window, step]."""
    smoothed = []
    start = 0
    for end, (step, _) in enumerate(series):
        while series[start][0] <= step - window_steps:
            start += 1
        window = [v for _, v in series[start : end + 1]]
        smoothed.append((step, float(np.mean(window))))
    return smoothed


def evaluate(
    policy: Policy,
    env_spec: EnvSpec,
    n_episodes: int,
    seed: int,
    traces: list[Replay] | None = None,
) -> list[float]:
    """Extrinsic returns of ``n_episodes`` fresh episodes, no learning."""
    env = env_spec.make()
    episode_rng = rng_stream(seed, EVAL_STREAM)
    action_rng = rng_stream(seed, EVAL_STREAM, ACTION_STREAM)
    returns = []
    for _ in range(n_episodes):
        obs = env.reset(draw_seed(episode_rng))
        actions: list[int] = []
        rewards: list[float] = []
        done = False
        while not done:
            action = policy.choose(env, obs, action_rng)
            result = env.step(action)
            actions.append(action)
            rewards.append(result.extrinsic_reward)
            obs, done = result.observation, result.done
        returns.append(float(sum(rewards)))
        if traces is not None:
            traces.append(Replay.record(env, actions, rewards))
    return returns


@dataclass
class EventLog:
    """JSON Lines log with one object per environment step."""

    path: Path | None = None
    _handle: IO[str] | None = field(default=None, repr=False)

    def __enter__(self) -> EventLog:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8")
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def write(self, record: dict[str, Any]) -> None:
        if self._handle is not None:
            self._handle.write(json.dumps(record) + "\n")


def read_events(path: Path) -> list[dict[str, Any]]:
    with path.open(encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
