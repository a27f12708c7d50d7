"""
Linear actor-critic streams over binarized grid features.

A stream owns an encoder (sparse binary features -> tanh features), a
policy head (features -> per-action logits) and a value head (features ->
scalar). Gradients of the advantage actor-critic loss are written out by
hand so they can be checked against finite differences.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import numpy as np
import numpy.typing as npt

from .errors import CheckpointError, ConfigurationError, TrainingError
from .gridworlds import (
    N_ACTIONS,
    N_COLORS,
    N_ITEMS,
    VIEW_SIZE,
    DoorState,
    GridEnvironment,
    ObjectKind,
    Observation,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IndexArray = npt.NDArray[np.intp]

# Sparse binary input layout
N_KINDS = len(ObjectKind)
N_DOOR_STATES = len(DoorState)
CELL_WIDTH = N_KINDS + N_DOOR_STATES + N_COLORS
N_CELLS = VIEW_SIZE * VIEW_SIZE
INVENTORY_BUCKETS = 4
VITAL_LEVELS = 10
INVENTORY_OFFSET = N_CELLS * CELL_WIDTH
VITALS_OFFSET = INVENTORY_OFFSET + N_ITEMS * INVENTORY_BUCKETS
BIAS_INDEX = VITALS_OFFSET + 2 * VITAL_LEVELS
N_INPUTS = BIAS_INDEX + 1

_CELL_BASE = np.arange(N_CELLS) * CELL_WIDTH
_ITEM_BASE = INVENTORY_OFFSET + np.arange(N_ITEMS) * INVENTORY_BUCKETS


def binarize(obs: Observation) -> IndexArray:
    """Indices of the active inputs of the fixed one-hot encoding."""
    cells = obs.view.reshape(N_CELLS, 3).astype(np.intp)
    kinds, doors, colors = cells[:, 0], cells[:, 1], cells[:, 2]
    has_door, has_color = doors > 0, colors > 0
    parts = [
        _CELL_BASE + kinds,
        _CELL_BASE[has_door] + N_KINDS + doors[has_door] - 1,
        _CELL_BASE[has_color]
        + N_KINDS
        + N_DOOR_STATES
        + colors[has_color]
        - 1,
        _ITEM_BASE
        + np.minimum(np.asarray(obs.inventory), INVENTORY_BUCKETS - 1),
    ]
    if obs.vitals is not None:
        health, food = (min(v, VITAL_LEVELS - 1) for v in obs.vitals)
        parts.append(
            np.array(
                [VITALS_OFFSET + health, VITALS_OFFSET + VITAL_LEVELS + food]
            )
        )
    parts.append(np.array([BIAS_INDEX]))
    return np.concatenate(parts).astype(np.intp)


class StreamRole(str, Enum):
    INTRINSIC = "intrinsic"
    EXTRINSIC = "extrinsic"

    @property
    def code(self) -> int:
        return list(StreamRole).index(self)


@dataclass
class AgentStream:
    """Encoder, policy head and value head with their own parameters.

    ``encoder`` is stored input-major, shape (N_INPUTS, width), so the
    features of an observation are ``tanh(encoder[binarize(obs)].sum(0))``.
    """

    encoder: FloatArray
    policy: FloatArray
    value_head: FloatArray
    role: StreamRole = StreamRole.EXTRINSIC

    def __post_init__(self) -> None:
        width = self.width
        if self.encoder.shape != (N_INPUTS, width):
            raise ConfigurationError(
                f"Encoder shape {self.encoder.shape} != ({N_INPUTS}, {width})"
            )
        if self.policy.ndim != 2 or self.policy.shape[1] != width:
            raise ConfigurationError(
                f"Policy head shape {self.policy.shape} does not match"
                f" feature width {width}"
            )
        if self.value_head.shape != (width,):
            raise ConfigurationError(
                f"Value head shape {self.value_head.shape} != ({width},)"
            )

    @property
    def width(self) -> int:
        return int(self.encoder.shape[1])

    @property
    def n_actions(self) -> int:
        return int(self.policy.shape[0])

    @classmethod
    def initialize(
        cls,
        role: StreamRole,
        rng: np.random.Generator,
        width: int = 64,
        n_actions: int = N_ACTIONS,
        init_scale: float = 0.1,
    ) -> AgentStream:
        return cls(
            encoder=rng.normal(0.0, init_scale, size=(N_INPUTS, width)),
            policy=np.zeros((n_actions, width)),
            value_head=np.zeros(width),
            role=role,
        )

    def copy(self, role: StreamRole | None = None) -> AgentStream:
        return AgentStream(
            self.encoder.copy(),
            self.policy.copy(),
            self.value_head.copy(),
            role or self.role,
        )

    def arrays(self) -> dict[str, FloatArray]:
        return {
            "encoder": self.encoder,
            "policy": self.policy,
            "value_head": self.value_head,
        }

    def to_bytes(self) -> bytes:
        arrays = self.arrays()
        chunks = [
            struct.pack(
                "<8sHBH",
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                self.role.code,
                len(arrays),
            )
        ]
        for name, array in arrays.items():
            encoded = name.encode()
            chunks.append(struct.pack("<B", len(encoded)) + encoded)
            chunks.append(
                struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape)
            )
            chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
        return b"".join(chunks)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


CHECKPOINT_MAGIC = b"CBETCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(stream: AgentStream, path: Path) -> str:
    data = stream.to_bytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    logger.info("Wrote %s checkpoint %s", stream.role.value, path)
    return hashlib.sha256(data).hexdigest()


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, fmt: str) -> tuple[Any, ...]:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise CheckpointError(f"Truncated checkpoint {self.source}")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"Truncated checkpoint {self.source}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk


def stream_from_bytes(data: bytes, source: str = "<bytes>") -> AgentStream:
    reader = _Reader(data, source)
    magic, version, role_code, n_arrays = reader.take("<8sHBH")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source} is not a stream checkpoint")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{source} has checkpoint version {version},"
            f" expected {CHECKPOINT_VERSION}"
        )
    arrays: dict[str, FloatArray] = {}
    for _ in range(n_arrays):
        (name_len,) = reader.take("<B")
        name = reader.raw(name_len).decode()
        (ndim,) = reader.take("<B")
        shape = tuple(int(d) for d in reader.take(f"<{ndim}I"))
        count = int(np.prod(shape)) if shape else 1
        buffer = reader.raw(count * 8)
        arrays[name] = (
            np.frombuffer(buffer, dtype="<f8")
            .reshape(shape)
            .astype(np.float64)
        )
    if reader.offset != len(data):
        raise CheckpointError(f"Trailing bytes in checkpoint {source}")
    try:
        return AgentStream(
            arrays["encoder"],
            arrays["policy"],
            arrays["value_head"],
            list(StreamRole)[role_code],
        )
    except (KeyError, IndexError) as e:
        raise CheckpointError(f"Incomplete checkpoint {source}: {e}") from e


def load_checkpoint(path: Path) -> AgentStream:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return stream_from_bytes(data, str(path))


def encode(stream: AgentStream, obs: Observation) -> FloatArray:
    return np.tanh(stream.encoder[binarize(obs)].sum(axis=0))


def policy_logits(stream: AgentStream, z: FloatArray) -> FloatArray:
    return stream.policy @ z


def value(stream: AgentStream, z: FloatArray) -> float:
    return float(stream.value_head @ z)


def log_softmax(logits: FloatArray) -> FloatArray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: FloatArray) -> FloatArray:
    return np.exp(log_softmax(logits))


def sample_action(
    logits: FloatArray, rng: np.random.Generator
) -> tuple[int, float]:
    """Draw from softmax(logits); returns (action, behavior log-prob)."""
    log_probs = log_softmax(np.asarray(logits, dtype=np.float64))
    cumulative = np.cumsum(np.exp(log_probs))
    action = int(np.searchsorted(cumulative, rng.random(), side="right"))
    action = min(action, len(log_probs) - 1)
    return action, float(log_probs[action])


class Policy(Protocol):
    def choose(
        self,
        env: GridEnvironment,
        obs: Observation,
        rng: np.random.Generator,
    ) -> int:
        ...


class LogitPolicy(ABC):
    @abstractmethod
    def action_logits(self, obs: Observation) -> FloatArray:
        ...

    def action_distribution(self, obs: Observation) -> FloatArray:
        return softmax(self.action_logits(obs))

    def choose(
        self,
        env: GridEnvironment,
        obs: Observation,
        rng: np.random.Generator,
    ) -> int:
        return sample_action(self.action_logits(obs), rng)[0]


class StreamPolicy(LogitPolicy):
    def __init__(self, stream: AgentStream):
        self.stream = stream

    def action_logits(self, obs: Observation) -> FloatArray:
        return policy_logits(self.stream, encode(self.stream, obs))


@dataclass(frozen=True)
class Transition:
    observation: Observation
    action: int
    behavior_logits: FloatArray
    behavior_log_prob: float
    reward: float
    done: bool
    extrinsic_reward: float | None = None
    intrinsic_reward: float | None = None
    count_reset: bool = False


@dataclass
class Trajectory:
    transitions: list[Transition]
    last_observation: Observation
    actor: int = 0

    def __post_init__(self) -> None:
        if not self.transitions:
            raise ConfigurationError("A trajectory needs at least one step")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def rewards(self) -> FloatArray:
        return np.array([t.reward for t in self.transitions])

    @property
    def actions(self) -> npt.NDArray[np.intp]:
        return np.array([t.action for t in self.transitions], dtype=np.intp)

    @property
    def behavior_log_probs(self) -> FloatArray:
        return np.array([t.behavior_log_prob for t in self.transitions])

    def discounts(self, gamma: float) -> FloatArray:
        return np.array(
            [0.0 if t.done else gamma for t in self.transitions]
        )


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 0.01
    gamma: float = 0.99
    n_step: int = 5
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    max_grad_norm: float | None = 40.0

    def __post_init__(self) -> None:
        problems = []
        if not self.learning_rate >= 0.0:
            problems.append("learning_rate must be nonnegative")
        if not 0.0 < self.gamma < 1.0:
            problems.append("gamma must lie in (0, 1)")
        if self.n_step < 1:
            problems.append("n_step must be at least 1")
        if self.entropy_coeff < 0.0 or self.value_coeff < 0.0:
            problems.append("loss coefficients must be nonnegative")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0.0:
            problems.append("max_grad_norm must be positive")
        if problems:
            raise ConfigurationError(problems)


@dataclass
class ForwardPass:
    active: list[IndexArray]
    features: FloatArray
    logits: FloatArray
    log_probs: FloatArray
    values: FloatArray
    bootstrap_value: float
    action_log_probs: FloatArray
    logit_scale: float = 1.0


def forward(
    stream: AgentStream,
    traj: Trajectory,
    logit_offsets: FloatArray | None = None,
    logit_scale: float = 1.0,
) -> ForwardPass:
    """Batched pass over a trajectory.

    Logits are ``logit_scale * (logit_offsets + stream logits)``, which is
    how a frozen stream's logits enter the combined task policy.
    """
    active = [binarize(t.observation) for t in traj.transitions]
    pre = np.stack([stream.encoder[idx].sum(axis=0) for idx in active])
    features = np.tanh(pre)
    logits = features @ stream.policy.T
    if logit_offsets is not None:
        logits = logits + logit_offsets
    logits = logit_scale * logits
    log_probs = log_softmax(logits)
    values = features @ stream.value_head
    bootstrap = value(stream, encode(stream, traj.last_observation))
    taken = log_probs[np.arange(len(traj)), traj.actions]
    return ForwardPass(
        active,
        features,
        logits,
        log_probs,
        values,
        bootstrap,
        taken,
        logit_scale,
    )


def n_step_returns(
    rewards: FloatArray,
    values: FloatArray,
    bootstrap_value: float,
    discounts: FloatArray,
    n: int,
) -> FloatArray:
    """Bootstrapped n-step returns, truncated at the end of the unroll."""
    size = len(rewards)
    next_values = np.append(values[1:], bootstrap_value)
    returns = np.zeros(size)
    for t in range(size):
        horizon = min(n, size - t)
        total, scale = 0.0, 1.0
        for k in range(horizon):
            total += scale * rewards[t + k]
            scale *= discounts[t + k]
        returns[t] = total + scale * next_values[t + horizon - 1]
    return returns


@dataclass(frozen=True)
class Targets:
    returns: FloatArray
    advantages: FloatArray


TargetFunction = Callable[[Trajectory, ForwardPass, float], Targets]


def n_step_targets(n: int) -> TargetFunction:
    def targets(traj: Trajectory, fwd: ForwardPass, gamma: float) -> Targets:
        returns = n_step_returns(
            traj.rewards,
            fwd.values,
            fwd.bootstrap_value,
            traj.discounts(gamma),
            n,
        )
        return Targets(returns, returns - fwd.values)

    return targets


@dataclass
class Gradients:
    encoder: FloatArray | None
    policy: FloatArray
    value_head: FloatArray

    def arrays(self) -> list[FloatArray]:
        found = [self.policy, self.value_head]
        return found if self.encoder is None else [self.encoder] + found

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float((g * g).sum()) for g in self.arrays())))


def a2c_loss(
    fwd: ForwardPass,
    actions: Sequence[int] | npt.NDArray[np.intp],
    targets: Targets,
    hyper: TrainHyper,
) -> float:
    steps = len(fwd.values)
    probs = np.exp(fwd.log_probs)
    taken = fwd.log_probs[np.arange(steps), np.asarray(actions)]
    entropy = -(probs * fwd.log_probs).sum(axis=1)
    policy_loss = -(targets.advantages * taken)
    value_loss = 0.5 * hyper.value_coeff * (targets.returns - fwd.values) ** 2
    return float(
        (policy_loss + value_loss - hyper.entropy_coeff * entropy).mean()
    )


def a2c_gradients(
    stream: AgentStream,
    fwd: ForwardPass,
    actions: Sequence[int] | npt.NDArray[np.intp],
    targets: Targets,
    hyper: TrainHyper,
    train_encoder: bool = True,
) -> Gradients:
    """Analytic gradient of :func:`a2c_loss` with targets held fixed."""
    steps = len(fwd.values)
    probs = np.exp(fwd.log_probs)
    entropy = -(probs * fwd.log_probs).sum(axis=1, keepdims=True)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(steps), np.asarray(actions)] = 1.0
    d_logits = (
        -targets.advantages[:, None] * (one_hot - probs)
        + hyper.entropy_coeff * probs * (fwd.log_probs + entropy)
    ) / steps
    d_own_logits = fwd.logit_scale * d_logits
    d_values = hyper.value_coeff * (fwd.values - targets.returns) / steps
    grad_policy = d_own_logits.T @ fwd.features
    grad_value = d_values @ fwd.features
    grad_encoder = None
    if train_encoder:
        d_features = d_own_logits @ stream.policy + np.outer(
            d_values, stream.value_head
        )
        d_pre = d_features * (1.0 - fwd.features**2)
        grad_encoder = np.zeros_like(stream.encoder)
        for idx, row in zip(fwd.active, d_pre):
            grad_encoder[idx] += row
    return Gradients(grad_encoder, grad_policy, grad_value)


def a2c_update(
    stream: AgentStream,
    traj: Trajectory,
    hyper: TrainHyper,
    *,
    target_fn: TargetFunction | None = None,
    logit_offsets: FloatArray | None = None,
    logit_scale: float = 1.0,
    train_encoder: bool = True,
) -> AgentStream:
    """One n-step advantage actor-critic step, applied in place."""
    fwd = forward(stream, traj, logit_offsets, logit_scale)
    target_fn = target_fn or n_step_targets(hyper.n_step)
    targets = target_fn(traj, fwd, hyper.gamma)
    grads = a2c_gradients(
        stream, fwd, traj.actions, targets, hyper, train_encoder
    )
    norm = grads.global_norm()
    if not np.isfinite(norm):
        raise TrainingError(
            "Non-finite gradient",
            {
                "actor": traj.actor,
                "steps": len(traj),
                "max_abs_logit": float(np.abs(fwd.logits).max()),
                "max_abs_value": float(np.abs(fwd.values).max()),
                "max_abs_target": float(np.abs(targets.returns).max()),
            },
        )
    scale = hyper.learning_rate
    if hyper.max_grad_norm is not None and norm > hyper.max_grad_norm:
        scale *= hyper.max_grad_norm / norm
    stream.policy -= scale * grads.policy
    stream.value_head -= scale * grads.value_head
    if grads.encoder is not None:
        stream.encoder -= scale * grads.encoder
    return stream
