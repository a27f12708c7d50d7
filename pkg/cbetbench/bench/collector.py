"""
Synchronous multi-actor rollout collection.

Every actor owns its environment, count store and random streams and
advances a fixed number of steps under a read-only policy snapshot. The
learner consumes whole batches, so the only gap between the behavior and
the learned policy is the updates applied earlier in the same batch. That
gap is corrected with truncated importance weights.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import (
    AgentStream,
    FloatArray,
    ForwardPass,
    LogitPolicy,
    TargetFunction,
    Targets,
    Trajectory,
    Transition,
    forward,
    sample_action,
)
from .errors import (
    CollectionError,
    ConfigurationError,
    TrainingError,
    UsageError,
)
from .gridworlds import EnvSpec, GridEnvironment, Observation
from .novelty import CountStore, NoveltyTracker
from .utils import (
    ACTION_STREAM,
    ENV_STREAM,
    RESET_STREAM,
    batched,
    draw_seed,
    rng_stream,
)

logger = logging.getLogger(__name__)

RewardFunction = Callable[[float | None, float | None], float]


@dataclass(frozen=True)
class CorrectionConfig:
    """Clip levels for the importance-weighted value targets.

    ``rho_bar`` and ``c_bar`` default to 1.0, the common choice for
    V-trace style corrections; ``unroll_length`` defaults to 20 steps.
    """

    rho_bar: float = 1.0
    c_bar: float = 1.0
    unroll_length: int = 20

    def __post_init__(self) -> None:
        problems = []
        if self.rho_bar < 1.0 or self.c_bar < 1.0:
            problems.append("rho_bar and c_bar must be at least 1")
        if self.c_bar > self.rho_bar:
            problems.append("c_bar must not exceed rho_bar")
        if self.unroll_length < 1:
            problems.append("unroll_length must be at least 1")
        if problems:
            raise ConfigurationError(problems)

    def targets(
        self,
        traj: Trajectory,
        fwd: ForwardPass,
        gamma: float,
        n_step: int | None = None,
    ) -> Targets:
        return vtrace_targets(
            traj.behavior_log_probs,
            fwd.action_log_probs,
            traj.rewards,
            fwd.values,
            fwd.bootstrap_value,
            traj.discounts(gamma),
            self.rho_bar,
            self.c_bar,
            n_step,
        )

    def target_fn(self, n_step: int | None = None) -> TargetFunction:
        def targets(
            traj: Trajectory, fwd: ForwardPass, gamma: float
        ) -> Targets:
            return self.targets(traj, fwd, gamma, n_step)

        return targets


def clipped_ratios(
    behavior_log_probs: FloatArray, target_log_probs: FloatArray, bar: float
) -> FloatArray:
    log_ratios = target_log_probs - behavior_log_probs
    if not np.isfinite(log_ratios).all():
        raise TrainingError(
            "Non-finite importance ratio",
            {
                "min_behavior_log_prob": float(behavior_log_probs.min()),
                "min_target_log_prob": float(target_log_probs.min()),
            },
        )
    return np.minimum(bar, np.exp(log_ratios))


def vtrace_targets(
    behavior_log_probs: FloatArray,
    target_log_probs: FloatArray,
    rewards: FloatArray,
    values: FloatArray,
    bootstrap_value: float,
    discounts: FloatArray,
    rho_bar: float = 1.0,
    c_bar: float = 1.0,
    n_step: int | None = None,
) -> Targets:
    """Truncated-importance value targets over windows of ``n_step`` steps.

    ``v_s = V(x_s) + sum_t (prod_{s<=i<t} d_i * c_i) * delta_t`` for
    ``s <= t < min(s + n_step, T)`` with
    ``delta_t = rho_t * (r_t + d_t * V(x_{t+1}) - V(x_t))``, where ``d_t``
    is the per-step discount (zero after a terminal step) and
    ``V(x_T)`` is the bootstrap value. With ``rho = c = 1`` this is the
    ``n_step`` return; ``n_step=None`` uses the whole unroll.
    """
    size = len(values)
    window = size if n_step is None else n_step
    if window < 1:
        raise ConfigurationError("n_step must be at least 1")
    rhos = clipped_ratios(behavior_log_probs, target_log_probs, rho_bar)
    traces = discounts * clipped_ratios(
        behavior_log_probs, target_log_probs, c_bar
    )
    next_values = np.append(values[1:], bootstrap_value)
    deltas = rhos * (rewards + discounts * next_values - values)
    vs = np.empty(size)
    # Correction from s + 1 up to the window end of s
    tails = np.empty(size)
    for s in range(size):
        acc = 0.0
        for t in reversed(range(s + 1, min(s + window, size))):
            acc = deltas[t] + traces[t] * acc
        tails[s] = acc
        vs[s] = values[s] + deltas[s] + traces[s] * acc
    advantages = rhos * (rewards + discounts * (next_values + tails) - values)
    return Targets(vs, advantages)


def offpolicy_targets(
    traj: Trajectory,
    stream: AgentStream,
    cfg: CorrectionConfig,
    gamma: float,
    logit_offsets: FloatArray | None = None,
    logit_scale: float = 1.0,
    n_step: int | None = None,
) -> Targets:
    return cfg.targets(
        traj,
        forward(stream, traj, logit_offsets, logit_scale),
        gamma,
        n_step,
    )


@dataclass(frozen=True)
class PolicySnapshot:
    version: int
    policy: LogitPolicy


@dataclass
class ActorSlot:
    index: int
    env: GridEnvironment
    action_rng: np.random.Generator
    episode_rng: np.random.Generator
    reward_fn: RewardFunction
    novelty: NoveltyTracker | None = None
    observe_extrinsic: bool = True
    snapshot_version: int = 0
    buffer: list[Transition] = field(default_factory=list)
    observation: Observation | None = None
    episode_return: float = 0.0
    episodes_completed: int = 0

    @classmethod
    def create(
        cls,
        index: int,
        env_spec: EnvSpec,
        seed: int,
        reward_fn: RewardFunction,
        count_store: CountStore | None = None,
        observe_extrinsic: bool = True,
        reset_rng: np.random.Generator | None = None,
    ) -> ActorSlot:
        novelty = None
        if count_store is not None:
            novelty = NoveltyTracker(
                count_store,
                (
                    reset_rng
                    if reset_rng is not None
                    else rng_stream(seed, RESET_STREAM, index)
                ),
            )
        return cls(
            index=index,
            env=env_spec.make(),
            action_rng=rng_stream(seed, ACTION_STREAM, index),
            episode_rng=rng_stream(seed, ENV_STREAM, index),
            reward_fn=reward_fn,
            novelty=novelty,
            observe_extrinsic=observe_extrinsic,
        )

    def start(self) -> Observation:
        self.observation = self.env.reset(draw_seed(self.episode_rng))
        self.episode_return = 0.0
        return self.observation

    def unroll(self, snapshot: PolicySnapshot, length: int) -> Trajectory:
        if self.observation is None:
            self.start()
        self.snapshot_version = snapshot.version
        self.buffer = []
        for step in range(length):
            try:
                self._advance(snapshot.policy)
            except (UsageError, ConfigurationError, ValueError) as e:
                raise CollectionError(str(e), self.index, step) from e
        assert self.observation is not None
        return Trajectory(self.buffer, self.observation, actor=self.index)

    def _advance(self, policy: LogitPolicy) -> None:
        obs = self.observation
        assert obs is not None
        logits = policy.action_logits(obs)
        action, log_prob = sample_action(logits, self.action_rng)
        result = self.env.step(action)
        r_e = result.extrinsic_reward if self.observe_extrinsic else None
        r_i, did_reset = None, False
        if self.novelty is not None:
            r_i, did_reset = self.novelty.step(obs, result.observation)
        self.buffer.append(
            Transition(
                observation=obs,
                action=action,
                behavior_logits=logits,
                behavior_log_prob=log_prob,
                reward=self.reward_fn(r_e, r_i),
                done=result.done,
                extrinsic_reward=r_e,
                intrinsic_reward=r_i,
                count_reset=did_reset,
            )
        )
        self.episode_return += result.extrinsic_reward
        if result.done:
            self.episodes_completed += 1
            self.start()
        else:
            self.observation = result.observation


def lockstep_lengths(steps: int, n_actors: int) -> list[int]:
    """Per-actor unroll lengths covering exactly ``steps`` lockstep steps.

    Step ``k`` of the batch belongs to actor ``k % n_actors``, so the first
    ``steps % n_actors`` actors take one step more than the rest.
    """
    return [max(0, math.ceil((steps - a) / n_actors)) for a in range(n_actors)]


def collect(
    actors: list[ActorSlot],
    snapshot: PolicySnapshot,
    unroll_length: int | Sequence[int],
    max_workers: int = 1,
) -> list[Trajectory]:
    """Advance every actor its unroll length; one trajectory each.

    ``unroll_length`` is either shared or given per actor. Actors with a
    length of zero sit the batch out and produce no trajectory.
    """
    if isinstance(unroll_length, int):
        lengths = [unroll_length] * len(actors)
    else:
        lengths = list(unroll_length)
    if (
        len(lengths) != len(actors)
        or min(lengths, default=0) < 0
        or max(lengths, default=0) < 1
    ):
        raise ConfigurationError(
            f"Invalid unroll lengths {lengths} for {len(actors)} actors"
        )
    work = [(a, n) for a, n in zip(actors, lengths) if n > 0]

    def run(group: list[tuple[ActorSlot, int]]) -> list[Trajectory]:
        return [actor.unroll(snapshot, n) for actor, n in group]

    if max_workers <= 1 or len(work) <= 1:
        return run(work)
    group_size = math.ceil(len(work) / max_workers)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        groups = pool.map(run, batched(work, group_size))
        return [traj for group in groups for traj in group]
