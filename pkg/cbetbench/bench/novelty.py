"""
Change-based intrinsic rewards.

Observations and observation changes are hashed to stable 64-bit keys and
counted exactly. The intrinsic reward for a step is ``1 / (n(s) + n(c))``
with both counts incremented before the reward is computed, so a first
visit earns 0.5. Counts are wiped at random with a small per-step
probability so the bonus never vanishes for good.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, NewType

import numpy as np
import numpy.typing as npt

from .errors import ConfigurationError, UsageError
from .gridworlds import EnvKind, Observation
from .utils import stable_hash64

logger = logging.getLogger(__name__)

StateKey = NewType("StateKey", int)
ChangeKey = NewType("ChangeKey", int)

_STATE_PERSON = b"cbet-state"
_CHANGE_PERSON = b"cbet-change"

ALPHA_PRESETS: dict[tuple[str, str], float] = {
    ("impala", "minigrid"): 0.0025,
    ("dreamer-like", "minigrid"): 0.0025,
    ("impala", "crafter"): 0.005,
    ("dreamer-like", "crafter"): 0.001,
}

ALPHA_CANDIDATES = (0.001, 0.0025, 0.005)


def default_alpha(family: str, env_kind: EnvKind) -> float:
    try:
        return ALPHA_PRESETS[(family, env_kind.family)]
    except KeyError:
        raise ConfigurationError(
            f"No alpha preset for agent family {family!r}"
        ) from None


def hash_observation(obs: Observation) -> StateKey:
    return StateKey(stable_hash64(obs.canonical_bytes(), _STATE_PERSON))


def _cell_codes(obs: Observation) -> npt.NDArray[np.int32]:
    view = obs.view.astype(np.int32)
    codes = view[:, :, 0] | (view[:, :, 1] << 4) | (view[:, :, 2] << 6)
    return codes.ravel()


def _sparse_delta(
    old: npt.NDArray[np.int32], new: npt.NDArray[np.int32]
) -> list[npt.NDArray[np.int32]]:
    idx = np.flatnonzero(old != new).astype(np.int32)
    return [np.array([idx.size], dtype=np.int32), idx, old[idx], new[idx]]


def compute_change(prev: Observation, next: Observation) -> ChangeKey:
    """Key of the set of (index, old, new) differences between two frames.

    Inventory and vitals differences are part of the change, so crafting
    registers even when no visible cell moves.
    """
    if prev.view.shape != next.view.shape or len(prev.inventory) != len(
        next.inventory
    ):
        raise UsageError("Observations differ in shape")
    if (prev.vitals is None) != (next.vitals is None):
        raise UsageError("Observations differ in vitals presence")
    parts = _sparse_delta(_cell_codes(prev), _cell_codes(next))
    parts += _sparse_delta(
        np.asarray(prev.inventory, dtype=np.int32),
        np.asarray(next.inventory, dtype=np.int32),
    )
    parts += _sparse_delta(
        np.asarray(prev.vitals or (), dtype=np.int32),
        np.asarray(next.vitals or (), dtype=np.int32),
    )
    payload = np.concatenate(parts).astype("<i4").tobytes()
    return ChangeKey(stable_hash64(payload, _CHANGE_PERSON))


# Cell, inventory and vitals sections each reduce to a zero length header
_NO_CHANGE = np.zeros(3, dtype="<i4").tobytes()
EMPTY_CHANGE_KEY = ChangeKey(stable_hash64(_NO_CHANGE, _CHANGE_PERSON))


@dataclass
class CountStore:
    gamma_i: float = 0.99
    reset_probability: float | None = None
    state_counts: dict[int, int] = field(default_factory=dict)
    change_counts: dict[int, int] = field(default_factory=dict)
    resets: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma_i < 1.0:
            raise ConfigurationError("gamma_i must lie in (0, 1)")
        if self.reset_probability is None:
            self.reset_probability = 1.0 - self.gamma_i
        if not 0.0 <= self.reset_probability <= 1.0:
            raise ConfigurationError("reset_probability must lie in [0, 1]")
        if self.reset_probability > 1.0 - self.gamma_i + 1e-12:
            raise ConfigurationError(
                f"reset_probability {self.reset_probability} exceeds"
                f" 1 - gamma_i = {1.0 - self.gamma_i}"
            )

    def observe_and_reward(self, s_key: int, c_key: int) -> float:
        n_s = self.state_counts[s_key] = self.state_counts.get(s_key, 0) + 1
        n_c = self.change_counts[c_key] = self.change_counts.get(c_key, 0) + 1
        return 1.0 / (n_s + n_c)

    def copy(self) -> CountStore:
        return replace(
            self,
            state_counts=dict(self.state_counts),
            change_counts=dict(self.change_counts),
        )

    def maybe_reset(self, rng: np.random.Generator) -> bool:
        # One draw per call keeps the reset stream aligned with steps
        if rng.random() >= (self.reset_probability or 0.0):
            return False
        self.state_counts.clear()
        self.change_counts.clear()
        self.resets += 1
        logger.debug("Count store reset (%d so far)", self.resets)
        return True

    def snapshot(
        self, rng: np.random.Generator | None = None
    ) -> dict[str, Any]:
        return {
            "gamma_i": self.gamma_i,
            "reset_probability": self.reset_probability,
            "resets": self.resets,
            "state_counts": sorted(self.state_counts.items()),
            "change_counts": sorted(self.change_counts.items()),
            "rng_state": None if rng is None else rng.bit_generator.state,
        }

    @classmethod
    def from_snapshot(
        cls, data: dict[str, Any]
    ) -> tuple[CountStore, np.random.Generator | None]:
        store = cls(
            gamma_i=float(data["gamma_i"]),
            reset_probability=float(data["reset_probability"]),
            state_counts={int(k): int(n) for k, n in data["state_counts"]},
            change_counts={int(k): int(n) for k, n in data["change_counts"]},
            resets=int(data.get("resets", 0)),
        )
        rng = None
        if (rng_state := data.get("rng_state")) is not None:
            rng = np.random.Generator(np.random.PCG64())
            rng.bit_generator.state = rng_state
        return store, rng


@dataclass(frozen=True)
class RewardMix:
    alpha: float = 0.0

    def __post_init__(self) -> None:
        if not self.alpha >= 0.0:
            raise ConfigurationError("alpha must be nonnegative")


def mix(r_e: float, r_i: float, mixcfg: RewardMix) -> float:
    return r_e + mixcfg.alpha * r_i


class NoveltyTracker:
    """Per-actor bundle of a count store and its reset stream."""

    def __init__(self, store: CountStore, rng: np.random.Generator):
        self.store = store
        self.rng = rng

    def step(self, prev: Observation, next: Observation) -> tuple[float, bool]:
        reward = self.store.observe_and_reward(
            hash_observation(next), compute_change(prev, next)
        )
        did_reset = self.store.maybe_reset(self.rng)
        return reward, did_reset

    def snapshot(self) -> dict[str, Any]:
        return self.store.snapshot(self.rng)
