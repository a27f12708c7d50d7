"""
Training protocols.

Tabula rasa training mixes intrinsic and extrinsic rewards into one
stream. Transfer training first fits an intrinsic stream on the
exploration environment, freezes it, then trains an extrinsic stream on
the task environment while acting from the softmax of the summed logits
of both streams.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .agents import (
    AgentStream,
    FloatArray,
    LogitPolicy,
    StreamPolicy,
    StreamRole,
    TrainHyper,
    Trajectory,
    a2c_update,
    encode,
    load_checkpoint,
    policy_logits,
    save_checkpoint,
)
from .collector import (
    ActorSlot,
    CorrectionConfig,
    PolicySnapshot,
    RewardFunction,
    collect,
    lockstep_lengths,
)
from .errors import CheckpointError, ConfigurationError
from .gridworlds import EnvSpec
from .metrics import EventLog, MetricsRow, evaluate, read_events
from .novelty import CountStore, RewardMix, mix
from .utils import EVAL_STREAM, draw_seed, file_sha256, rng_stream

logger = logging.getLogger(__name__)

COMBINE_SCALES = (1.0, 0.5)


class TransferMode(str, Enum):
    MODEL_FREE = "model_free"
    WORLD_MODEL = "world_model"


class Phase(str, Enum):
    TABULA_RASA = "tabula_rasa"
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


class CombinedPolicy(LogitPolicy):
    """Task policy acting on the summed logits of two streams.

    In ``model_free`` mode both heads read the intrinsic stream's features.
    In ``world_model`` mode each stream encodes the observation itself.
    """

    def __init__(
        self,
        intrinsic: AgentStream,
        extrinsic: AgentStream,
        mode: TransferMode = TransferMode.MODEL_FREE,
        combine_scale: float = 1.0,
    ):
        if intrinsic.n_actions != extrinsic.n_actions:
            raise ConfigurationError(
                f"Intrinsic stream has {intrinsic.n_actions} actions,"
                f" extrinsic stream has {extrinsic.n_actions}"
            )
        if combine_scale not in COMBINE_SCALES:
            raise ConfigurationError(
                f"combine_scale must be one of {COMBINE_SCALES}"
            )
        if (
            mode == TransferMode.MODEL_FREE
            and intrinsic.width != extrinsic.width
        ):
            raise ConfigurationError(
                "Model-free transfer needs equal feature widths"
            )
        self.intrinsic = intrinsic
        self.extrinsic = extrinsic
        self.mode = TransferMode(mode)
        self.combine_scale = combine_scale

    def intrinsic_logits(self, obs: Any) -> FloatArray:
        return policy_logits(self.intrinsic, encode(self.intrinsic, obs))

    def extrinsic_logits(self, obs: Any) -> FloatArray:
        source = (
            self.intrinsic
            if self.mode == TransferMode.MODEL_FREE
            else self.extrinsic
        )
        return policy_logits(self.extrinsic, encode(source, obs))

    def action_logits(self, obs: Any) -> FloatArray:
        return self.combine_scale * (
            self.intrinsic_logits(obs) + self.extrinsic_logits(obs)
        )

    def frozen_offsets(self, traj: Trajectory) -> FloatArray:
        """Intrinsic logits for every step, fed to the update as offsets."""
        return np.stack(
            [self.intrinsic_logits(t.observation) for t in traj.transitions]
        )

    def with_extrinsic(self, extrinsic: AgentStream) -> CombinedPolicy:
        return CombinedPolicy(
            self.intrinsic, extrinsic, self.mode, self.combine_scale
        )


def combine(policy: CombinedPolicy, obs: Any) -> FloatArray:
    return policy.action_distribution(obs)


@dataclass(frozen=True)
class Schedule:
    step_budget: int
    eval_every: int = 10_000
    eval_episodes: int = 8
    n_actors: int = 8
    unroll_length: int = 20
    actor_threads: int = 1
    record_wall_time: bool = True

    def __post_init__(self) -> None:
        problems = []
        if self.step_budget < 1:
            problems.append("step_budget must be positive")
        if self.eval_every < 1:
            problems.append("eval_every must be positive")
        if self.eval_episodes < 1:
            problems.append("eval_episodes must be positive")
        if self.n_actors < 1 or self.unroll_length < 1:
            problems.append("n_actors and unroll_length must be positive")
        if problems:
            raise ConfigurationError(problems)

    @property
    def eval_steps(self) -> list[int]:
        return list(range(0, self.step_budget + 1, self.eval_every))


@dataclass(frozen=True)
class PhaseConfig:
    pretrain_steps: int
    finetune_steps: int
    exploration_env: EnvSpec
    task_env: EnvSpec

    def __post_init__(self) -> None:
        if self.pretrain_steps < 1 or self.finetune_steps < 1:
            raise ConfigurationError("Phase step counts must be positive")


class Learner:
    """Owns the trainable stream and hands out versioned snapshots."""

    def __init__(
        self,
        stream: AgentStream,
        hyper: TrainHyper,
        correction: CorrectionConfig | None = None,
        frozen: CombinedPolicy | None = None,
    ):
        self.stream = stream
        self.hyper = hyper
        self.correction = correction
        self.frozen = frozen
        self.version = 0

    @property
    def train_encoder(self) -> bool:
        return (
            self.frozen is None or self.frozen.mode != TransferMode.MODEL_FREE
        )

    def policy(self) -> LogitPolicy:
        if self.frozen is None:
            return StreamPolicy(self.stream)
        return self.frozen.with_extrinsic(self.stream)

    def snapshot(self) -> PolicySnapshot:
        copied = self.stream.copy()
        policy: LogitPolicy
        if self.frozen is None:
            policy = StreamPolicy(copied)
        else:
            policy = self.frozen.with_extrinsic(copied)
        return PolicySnapshot(self.version, policy)

    def learn(self, batch: list[Trajectory]) -> None:
        target_fn = None
        if self.correction is not None:
            target_fn = self.correction.target_fn(self.hyper.n_step)
        for traj in batch:
            offsets, scale = None, 1.0
            if self.frozen is not None:
                offsets = self.frozen.frozen_offsets(traj)
                scale = self.frozen.combine_scale
            a2c_update(
                self.stream,
                traj,
                self.hyper,
                target_fn=target_fn,
                logit_offsets=offsets,
                logit_scale=scale,
                train_encoder=self.train_encoder,
            )
        self.version += 1


@dataclass
class PhaseResult:
    phase: Phase
    stream: AgentStream
    rows: list[MetricsRow]
    steps: int
    checkpoint: Path | None = None
    digest: str | None = None
    count_snapshots: list[dict[str, Any]] = field(default_factory=list)


@dataclass
class FrozenCheckpoint:
    path: Path
    stream: AgentStream
    digest: str

    @classmethod
    def load(
        cls, path: Path, expected_digest: str | None = None
    ) -> FrozenCheckpoint:
        digest = file_sha256(path)
        if expected_digest is not None and digest != expected_digest:
            raise CheckpointError(
                f"Checkpoint {path} digest {digest} does not match"
                f" {expected_digest}"
            )
        return cls(path, load_checkpoint(path), digest)

    def intact(self) -> bool:
        return (
            self.stream.digest() == self.digest
            and file_sha256(self.path) == self.digest
        )


def _actor_stores(
    novelty: CountStore | None,
    resume_counts: Sequence[dict[str, Any]] | None,
    n_actors: int,
) -> list[tuple[CountStore | None, np.random.Generator | None]]:
    """Each actor counts in a copy of ``novelty`` or its resumed store."""
    if resume_counts is None:
        return [
            (None if novelty is None else novelty.copy(), None)
            for _ in range(n_actors)
        ]
    if novelty is None:
        raise ConfigurationError("Count snapshots given without novelty")
    if len(resume_counts) != n_actors:
        raise ConfigurationError(
            f"{len(resume_counts)} count snapshots for {n_actors} actors"
        )
    return [CountStore.from_snapshot(data) for data in resume_counts]


def _log_batch(
    events: EventLog,
    phase: Phase,
    base: int,
    n_actors: int,
    batch: list[Trajectory],
) -> None:
    for traj in batch:
        for t, tr in enumerate(traj.transitions):
            measured = tr.intrinsic_reward is not None
            events.write(
                {
                    "phase": phase.value,
                    "step": base + t * n_actors + traj.actor + 1,
                    "actor": traj.actor,
                    "action": tr.action,
                    "r_e": tr.extrinsic_reward,
                    "r_i": tr.intrinsic_reward,
                    "r_t": tr.reward,
                    "reset": tr.count_reset if measured else None,
                    "done": tr.done,
                }
            )


def _train(
    phase: Phase,
    env_spec: EnvSpec,
    learner: Learner,
    reward_fn: RewardFunction,
    schedule: Schedule,
    *,
    seed: int,
    novelty: CountStore | None,
    resume_counts: Sequence[dict[str, Any]] | None = None,
    observe_extrinsic: bool = True,
    events: EventLog | None = None,
) -> tuple[list[MetricsRow], int, list[ActorSlot]]:
    events = events or EventLog()
    stores = _actor_stores(novelty, resume_counts, schedule.n_actors)
    actors = [
        ActorSlot.create(
            i,
            env_spec,
            seed,
            reward_fn,
            store,
            observe_extrinsic,
            reset_rng=reset_rng,
        )
        for i, (store, reset_rng) in enumerate(stores)
    ]
    started = time.perf_counter()
    intrinsic: list[float] = []

    def evaluation_row(step: int) -> MetricsRow:
        eval_seed = draw_seed(rng_stream(seed, EVAL_STREAM, step))
        returns = evaluate(
            learner.policy(), env_spec, schedule.eval_episodes, eval_seed
        )
        row = MetricsRow(
            global_step=step,
            seed=seed,
            returns=tuple(returns),
            mean_intrinsic=float(np.mean(intrinsic)) if intrinsic else None,
            episodes_completed=sum(a.episodes_completed for a in actors),
            wall_seconds=(
                time.perf_counter() - started
                if schedule.record_wall_time
                else 0.0
            ),
        )
        intrinsic.clear()
        logger.info(
            "%s seed %d step %d: mean eval return %.4f",
            phase.value,
            seed,
            step,
            row.mean_eval_return,
        )
        return row

    rows = [evaluation_row(0)]
    pending = schedule.eval_steps[1:]
    full_batch = schedule.unroll_length * schedule.n_actors
    global_step = 0
    while global_step < schedule.step_budget:
        # Batches never cross an evaluation step or the budget
        boundary = pending[0] if pending else schedule.step_budget
        steps = min(full_batch, boundary - global_step)
        batch = collect(
            actors,
            learner.snapshot(),
            lockstep_lengths(steps, schedule.n_actors),
            schedule.actor_threads,
        )
        _log_batch(events, phase, global_step, schedule.n_actors, batch)
        intrinsic.extend(
            tr.intrinsic_reward
            for traj in batch
            for tr in traj.transitions
            if tr.intrinsic_reward is not None
        )
        learner.learn(batch)
        global_step += steps
        logger.debug(
            "%s seed %d learner version %d at step %d",
            phase.value,
            seed,
            learner.version,
            global_step,
        )
        if pending and pending[0] == global_step:
            rows.append(evaluation_row(pending.pop(0)))
    return rows, global_step, actors


def _count_snapshots(actors: list[ActorSlot]) -> list[dict[str, Any]]:
    return [a.novelty.snapshot() for a in actors if a.novelty is not None]


def _finish(
    phase: Phase,
    stream: AgentStream,
    trained: tuple[list[MetricsRow], int, list[ActorSlot]],
    checkpoint_path: Path | None,
) -> PhaseResult:
    rows, steps, actors = trained
    digest = None
    if checkpoint_path is not None:
        digest = save_checkpoint(stream, checkpoint_path)
    return PhaseResult(
        phase,
        stream,
        rows,
        steps,
        checkpoint_path,
        digest,
        _count_snapshots(actors),
    )


def train_tabula_rasa(
    env_spec: EnvSpec,
    stream: AgentStream,
    novelty: CountStore | None,
    mixcfg: RewardMix,
    hyper: TrainHyper,
    schedule: Schedule,
    *,
    seed: int,
    correction: CorrectionConfig | None = None,
    events: EventLog | None = None,
    resume_counts: Sequence[dict[str, Any]] | None = None,
    checkpoint_path: Path | None = None,
) -> PhaseResult:
    """Train one stream on ``r_e + alpha * r_i``.

    Every actor counts in its own copy of ``novelty``, or in its store from
    ``resume_counts`` when resuming. Passing None trains on ``r_e`` without
    measuring novelty at all.
    """

    def reward_fn(r_e: float | None, r_i: float | None) -> float:
        extrinsic = r_e or 0.0
        return extrinsic if r_i is None else mix(extrinsic, r_i, mixcfg)

    learner = Learner(stream, hyper, correction)
    logger.info(
        "Tabula rasa on %s, seed %d, alpha %g",
        env_spec.kind.value,
        seed,
        mixcfg.alpha,
    )
    trained = _train(
        Phase.TABULA_RASA,
        env_spec,
        learner,
        reward_fn,
        schedule,
        seed=seed,
        novelty=novelty,
        resume_counts=resume_counts,
        events=events,
    )
    return _finish(Phase.TABULA_RASA, stream, trained, checkpoint_path)


def _intrinsic_only(r_e: float | None, r_i: float | None) -> float:
    assert r_i is not None
    return r_i


def _extrinsic_only(r_e: float | None, r_i: float | None) -> float:
    assert r_e is not None
    return r_e


def pretrain_explorer(
    exploration_env: EnvSpec,
    stream: AgentStream,
    novelty: CountStore,
    hyper: TrainHyper,
    schedule: Schedule,
    *,
    seed: int,
    checkpoint_path: Path,
    correction: CorrectionConfig | None = None,
    events: EventLog | None = None,
    resume_counts: Sequence[dict[str, Any]] | None = None,
) -> PhaseResult:
    """Train the intrinsic stream on ``r_i`` alone and write its checkpoint.

    Extrinsic rewards are never shown to the learner; evaluation rows still
    report the exploration environment's return.
    """
    stream.role = StreamRole.INTRINSIC
    learner = Learner(stream, hyper, correction)
    logger.info(
        "Pre-training on %s for %d steps, seed %d",
        exploration_env.kind.value,
        schedule.step_budget,
        seed,
    )
    trained = _train(
        Phase.PRETRAIN,
        exploration_env,
        learner,
        _intrinsic_only,
        schedule,
        seed=seed,
        novelty=novelty,
        resume_counts=resume_counts,
        observe_extrinsic=False,
        events=events,
    )
    return _finish(Phase.PRETRAIN, stream, trained, checkpoint_path)


def check_compatible(exploration_env: EnvSpec, task_env: EnvSpec) -> None:
    first = exploration_env.make().reset(0)
    second = task_env.make().reset(0)
    problems = []
    if first.view.shape != second.view.shape:
        problems.append("observation views differ in shape")
    if len(first.inventory) != len(second.inventory):
        problems.append("inventories differ in length")
    if (first.vitals is None) != (second.vitals is None):
        problems.append("only one environment reports vitals")
    if problems:
        raise ConfigurationError(
            [
                f"{exploration_env.kind.value} -> {task_env.kind.value}: {p}"
                for p in problems
            ]
        )


def finetune_task(
    task_env: EnvSpec,
    frozen: FrozenCheckpoint,
    extrinsic: AgentStream,
    hyper: TrainHyper,
    schedule: Schedule,
    mode: TransferMode,
    *,
    seed: int,
    combine_scale: float = 1.0,
    correction: CorrectionConfig | None = None,
    events: EventLog | None = None,
    checkpoint_path: Path | None = None,
) -> PhaseResult:
    """Train the extrinsic stream on ``r_e`` while acting from both streams.

    In model-free mode the extrinsic stream takes a copy of the frozen
    encoder and only its heads learn.
    """
    if not frozen.intact():
        raise CheckpointError(f"Checkpoint {frozen.path} changed on disk")
    extrinsic.role = StreamRole.EXTRINSIC
    if mode == TransferMode.MODEL_FREE:
        extrinsic.encoder = frozen.stream.encoder.copy()
    combined = CombinedPolicy(frozen.stream, extrinsic, mode, combine_scale)
    learner = Learner(extrinsic, hyper, correction, frozen=combined)
    logger.info(
        "Fine-tuning on %s (%s) for %d steps, seed %d",
        task_env.kind.value,
        combined.mode.value,
        schedule.step_budget,
        seed,
    )
    trained = _train(
        Phase.FINETUNE,
        task_env,
        learner,
        _extrinsic_only,
        schedule,
        seed=seed,
        novelty=None,
        events=events,
    )
    if not frozen.intact():
        raise CheckpointError(
            f"Frozen stream {frozen.path} changed during fine-tuning"
        )
    return _finish(Phase.FINETUNE, extrinsic, trained, checkpoint_path)


@dataclass
class TransferResult:
    pretrain: PhaseResult
    finetune: PhaseResult
    manifest: dict[str, Any]


def run_transfer(
    phases: PhaseConfig,
    mode: TransferMode,
    intrinsic: AgentStream,
    extrinsic: AgentStream,
    novelty: CountStore,
    hyper: TrainHyper,
    schedule: Schedule,
    *,
    seed: int,
    run_dir: Path,
    combine_scale: float = 1.0,
    correction: CorrectionConfig | None = None,
    event_log: bool = True,
    resume_counts: Sequence[dict[str, Any]] | None = None,
) -> TransferResult:
    """Pre-train, freeze, fine-tune and write ``transfer.json``."""
    check_compatible(phases.exploration_env, phases.task_env)
    events_path = run_dir / "events.jsonl" if event_log else None
    intrinsic_path = run_dir / "intrinsic.ckpt"
    with EventLog(events_path) as events:
        pretrain = pretrain_explorer(
            phases.exploration_env,
            intrinsic,
            novelty,
            hyper,
            replace(schedule, step_budget=phases.pretrain_steps),
            seed=seed,
            checkpoint_path=intrinsic_path,
            correction=correction,
            events=events,
            resume_counts=resume_counts,
        )
        frozen = FrozenCheckpoint.load(intrinsic_path, pretrain.digest)
        finetune = finetune_task(
            phases.task_env,
            frozen,
            extrinsic,
            hyper,
            replace(schedule, step_budget=phases.finetune_steps),
            mode,
            seed=seed,
            combine_scale=combine_scale,
            correction=correction,
            events=events,
            checkpoint_path=run_dir / "extrinsic.ckpt",
        )
    manifest = {
        "seed": seed,
        "mode": TransferMode(mode).value,
        "combine_scale": combine_scale,
        "exploration_env": phases.exploration_env.as_dict(),
        "task_env": phases.task_env.as_dict(),
        "pretrain_steps": pretrain.steps,
        "finetune_steps": finetune.steps,
        "intrinsic_checkpoint": {
            "path": str(intrinsic_path),
            "sha256": pretrain.digest,
        },
        "extrinsic_checkpoint": {
            "path": str(finetune.checkpoint),
            "sha256": finetune.digest,
        },
        "intrinsic_unchanged": frozen.intact(),
        "event_log": None if events_path is None else str(events_path),
    }
    (run_dir / "transfer.json").write_text(json.dumps(manifest, indent=2))
    return TransferResult(pretrain, finetune, manifest)


_PURITY_RULES: dict[str, Callable[[dict[str, Any]], bool]] = {
    Phase.PRETRAIN.value: lambda e: e["r_e"] is None and e["r_t"] == e["r_i"],
    Phase.FINETUNE.value: lambda e: (
        e["r_i"] is None and e["reset"] is None and e["r_t"] == e["r_e"]
    ),
}


def audit_phase_purity(event_log_path: Path) -> list[int]:
    """Line numbers of events whose training reward mixes phases."""
    violations = []
    for number, event in enumerate(read_events(event_log_path), start=1):
        rule = _PURITY_RULES.get(event.get("phase", ""))
        if rule is not None and not rule(event):
            violations.append(number)
    return violations
