"""
Seeded sparse-reward grid environments.

Three kinds share one action set and one observation format:

* ``doorkey`` pick up the key, unlock the door, reach the goal square
* ``unlock`` pick up the key and unlock the door
* ``craftworld`` a reduced crafting survival game with six achievements

Layouts are generated from a seed and rejected unless the scripted solver
in this module can finish them within the step limit.
"""

from __future__ import annotations

import copy
import json
import logging
from abc import ABC, abstractmethod
from collections import deque
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any

import numpy as np
import numpy.typing as npt

from .errors import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

VIEW_SIZE = 7
AGENT_VIEW_ROW = VIEW_SIZE - 1
AGENT_VIEW_COL = VIEW_SIZE // 2
N_COLORS = 6
MAX_LAYOUT_ATTEMPTS = 100


class EnvKind(str, Enum):
    DOORKEY = "doorkey"
    UNLOCK = "unlock"
    CRAFTWORLD = "craftworld"

    @property
    def family(self) -> str:
        return "crafter" if self is EnvKind.CRAFTWORLD else "minigrid"


class ObjectKind(IntEnum):
    EMPTY = 0
    WALL = 1
    DOOR = 2
    KEY = 3
    GOAL = 4
    RESOURCE_TREE = 5
    RESOURCE_STONE = 6
    CRAFTING_TABLE = 7
    AGENT = 8
    RESOURCE_DIAMOND = 9
    RESOURCE_PLANT = 10


class DoorState(IntEnum):
    OPEN = 1
    CLOSED = 2
    LOCKED = 3


class Direction(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def vector(self) -> tuple[int, int]:
        return _DIRECTION_VECTORS[self]

    def left(self) -> Direction:
        return Direction((self + 3) % 4)

    def right(self) -> Direction:
        return Direction((self + 1) % 4)


_DIRECTION_VECTORS = {
    Direction.N: (-1, 0),
    Direction.E: (0, 1),
    Direction.S: (1, 0),
    Direction.W: (0, -1),
}


class Action(IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    TOGGLE = 4
    CRAFT = 5
    NOOP = 6


N_ACTIONS = len(Action)


class Item(IntEnum):
    KEY = 0
    WOOD = 1
    STONE = 2
    DIAMOND = 3
    WOOD_PICKAXE = 4
    STONE_PICKAXE = 5


N_ITEMS = len(Item)


class Achievement(str, Enum):
    COLLECT_WOOD = "collect_wood"
    PLACE_TABLE = "place_table"
    MAKE_PICKAXE = "make_pickaxe"
    COLLECT_STONE = "collect_stone"
    MAKE_STONE_PICKAXE = "make_stone_pickaxe"
    COLLECT_DIAMOND = "collect_diamond"


@dataclass(frozen=True)
class Cell:
    object_kind: ObjectKind
    door_state: DoorState | None = None
    color_tag: int | None = None

    def __post_init__(self) -> None:
        is_door = self.object_kind is ObjectKind.DOOR
        if is_door != (self.door_state is not None):
            raise UsageError("door_state is required for doors only")
        if (self.object_kind in {ObjectKind.KEY, ObjectKind.DOOR}) != (
            self.color_tag is not None
        ):
            raise UsageError("color_tag is required for keys and doors only")


def _view_offsets() -> dict[Direction, tuple[npt.NDArray, npt.NDArray]]:
    forward = (AGENT_VIEW_ROW - np.arange(VIEW_SIZE))[:, None]
    lateral = (np.arange(VIEW_SIZE) - AGENT_VIEW_COL)[None, :]
    offsets = {}
    for d in Direction:
        (dr, dc), (rr, rc) = d.vector, d.right().vector
        offsets[d] = (forward * dr + lateral * rr, forward * dc + lateral * rc)
    return offsets


_VIEW_OFFSETS = _view_offsets()


@dataclass(frozen=True, eq=False)
class Observation:
    """Egocentric 7x7 snapshot.

    ``view`` has shape (7, 7, 3) holding object kind, door state (0 when
    not a door) and color tag plus one (0 when untagged) per cell. The
    agent sits at the bottom-center cell facing up.
    """

    view: npt.NDArray[np.int8]
    inventory: tuple[int, ...]
    vitals: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.view.shape != (VIEW_SIZE, VIEW_SIZE, 3):
            raise UsageError(f"Malformed observation view {self.view.shape}")
        if any(n < 0 for n in self.inventory):
            raise UsageError("Inventory counts must be nonnegative")
        self.view.setflags(write=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            np.array_equal(self.view, other.view)
            and self.inventory == other.inventory
            and self.vitals == other.vitals
        )

    __hash__ = None  # type: ignore

    @property
    def kinds(self) -> npt.NDArray[np.int8]:
        return self.view[:, :, 0]

    def cell(self, row: int, col: int) -> Cell:
        kind, door, color = (int(v) for v in self.view[row, col])
        return Cell(
            ObjectKind(kind),
            DoorState(door) if door else None,
            color - 1 if color else None,
        )

    def canonical_bytes(self) -> bytes:
        vitals = self.vitals if self.vitals is not None else (-1, -1)
        tail = np.asarray(self.inventory + vitals, dtype="<i4").tobytes()
        return np.ascontiguousarray(self.view).tobytes() + tail


@dataclass
class EnvState:
    kinds: npt.NDArray[np.int8]
    doors: npt.NDArray[np.int8]
    colors: npt.NDArray[np.int8]
    agent_pos: tuple[int, int]
    agent_dir: Direction
    episode_seed: int
    step_count: int = 0
    inventory: npt.NDArray[np.int64] = field(
        default_factory=lambda: np.zeros(N_ITEMS, dtype=np.int64)
    )
    carrying_color: int | None = None
    health: int | None = None
    food: int | None = None
    achievements_unlocked: set[Achievement] = field(default_factory=set)
    done: bool = False

    def copy(self) -> EnvState:
        return copy.deepcopy(self)

    def cell(self, pos: tuple[int, int]) -> Cell:
        kind, door, color = (
            int(a[pos]) for a in (self.kinds, self.doors, self.colors)
        )
        return Cell(
            ObjectKind(kind),
            DoorState(door) if door else None,
            color - 1 if color else None,
        )

    def set_cell(
        self,
        pos: tuple[int, int],
        kind: ObjectKind,
        door: DoorState | None = None,
        color: int | None = None,
    ) -> None:
        self.kinds[pos] = kind
        self.doors[pos] = 0 if door is None else door
        self.colors[pos] = 0 if color is None else color + 1


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    extrinsic_reward: float
    done: bool
    info: dict[str, Any] = field(default_factory=dict)


class GridEnvironment(ABC):
    kind: EnvKind
    height: int
    width: int

    def __init__(
        self,
        layout_seed: int,
        fixed_layout: bool = True,
        max_steps: int | None = None,
    ):
        if layout_seed < 0:
            raise ConfigurationError("layout_seed must be nonnegative")
        self.layout_seed = layout_seed
        self.fixed_layout = fixed_layout
        self.max_steps = max_steps or self.default_max_steps()
        self.state: EnvState | None = None
        self._template: EnvState | None = None
        self._success = False

    def default_max_steps(self) -> int:
        return 4 * self.width * self.height

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(layout_seed={self.layout_seed},"
            f" fixed_layout={self.fixed_layout})"
        )

    @abstractmethod
    def _generate(
        self, rng: np.random.Generator, episode_seed: int
    ) -> EnvState:
        ...

    @abstractmethod
    def _interact(self, action: Action, info: dict[str, Any]) -> float:
        ...

    def is_solved(self) -> bool:
        self._require_state()
        return self._success

    def clone(self) -> GridEnvironment:
        other = copy.copy(self)
        other.state = None if self.state is None else self.state.copy()
        return other

    def reset(self, episode_seed: int = 0) -> Observation:
        if self.fixed_layout and self._template is not None:
            self.state = self._template.copy()
            self.state.episode_seed = episode_seed
        else:
            self.state = self._draw_layout(episode_seed)
            if self.fixed_layout:
                self._template = self.state.copy()
        self._success = False
        return self.observe()

    def _draw_layout(self, episode_seed: int) -> EnvState:
        material = [self.layout_seed]
        if not self.fixed_layout:
            material.append(episode_seed)
        rng = np.random.default_rng(np.random.SeedSequence(material))
        for attempt in range(MAX_LAYOUT_ATTEMPTS):
            state = self._generate(rng, episode_seed)
            self.state = state
            self._success = False
            if solve(self) is not None:
                return state
            logger.warning(
                "Rejected unsolvable %s layout (attempt %d)",
                self.kind.value,
                attempt + 1,
            )
        raise ConfigurationError(
            f"No solvable {self.kind.value} layout after"
            f" {MAX_LAYOUT_ATTEMPTS} attempts"
        )

    def _require_state(self) -> EnvState:
        if self.state is None:
            raise UsageError("reset() must be called first")
        return self.state

    def front_pos(self) -> tuple[int, int]:
        state = self._require_state()
        dr, dc = state.agent_dir.vector
        return state.agent_pos[0] + dr, state.agent_pos[1] + dc

    def in_bounds(self, pos: tuple[int, int]) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    def passable(self, pos: tuple[int, int]) -> bool:
        if not self.in_bounds(pos):
            return False
        state = self._require_state()
        kind = state.kinds[pos]
        if kind == ObjectKind.DOOR:
            return bool(state.doors[pos] == DoorState.OPEN)
        return kind in (ObjectKind.EMPTY, ObjectKind.GOAL)

    def step(self, action: Action | int) -> StepResult:
        state = self._require_state()
        if state.done:
            raise UsageError("step() called after the episode ended")
        action = Action(action)
        state.step_count += 1
        info: dict[str, Any] = {}
        if action is Action.TURN_LEFT:
            state.agent_dir = state.agent_dir.left()
            reward = 0.0
        elif action is Action.TURN_RIGHT:
            state.agent_dir = state.agent_dir.right()
            reward = 0.0
        else:
            reward = self._interact(action, info)
        self._tick(info)
        if info.get("success"):
            self._success = True
        if not state.done and state.step_count >= self.max_steps:
            state.done = True
            info["truncated"] = True
        return StepResult(self.observe(), reward, state.done, info)

    def _tick(self, info: dict[str, Any]) -> None:
        pass

    def _move_forward(self) -> tuple[int, int] | None:
        state = self._require_state()
        if not self.passable(front := self.front_pos()):
            return None
        state.agent_pos = front
        return front

    def observe(self) -> Observation:
        state = self._require_state()
        row_off, col_off = _VIEW_OFFSETS[state.agent_dir]
        rows = state.agent_pos[0] + row_off
        cols = state.agent_pos[1] + col_off
        inside = (
            (rows >= 0)
            & (rows < self.height)
            & (cols >= 0)
            & (cols < self.width)
        )
        r = np.clip(rows, 0, self.height - 1)
        c = np.clip(cols, 0, self.width - 1)
        view = np.zeros((VIEW_SIZE, VIEW_SIZE, 3), dtype=np.int8)
        view[:, :, 0] = np.where(inside, state.kinds[r, c], ObjectKind.WALL)
        view[:, :, 1] = np.where(inside, state.doors[r, c], 0)
        view[:, :, 2] = np.where(inside, state.colors[r, c], 0)
        view[AGENT_VIEW_ROW, AGENT_VIEW_COL] = (ObjectKind.AGENT, 0, 0)
        vitals = None
        if state.health is not None and state.food is not None:
            vitals = (state.health, state.food)
        return Observation(
            view, tuple(int(n) for n in state.inventory), vitals
        )

    def full_grid(self) -> npt.NDArray[np.int8]:
        state = self._require_state()
        grid = state.kinds.copy()
        grid[state.agent_pos] = ObjectKind.AGENT
        return grid

    def layout_document(self) -> dict[str, Any]:
        state = self._require_state()
        return {
            "kind": self.kind.value,
            "layout_seed": self.layout_seed,
            "episode_seed": state.episode_seed,
            "fixed_layout": self.fixed_layout,
            "max_steps": self.max_steps,
            "height": self.height,
            "width": self.width,
            "grid": state.kinds.flatten().tolist(),
            "door_state": state.doors.flatten().tolist(),
            "color": state.colors.flatten().tolist(),
            "agent_pos": list(state.agent_pos),
            "agent_dir": int(state.agent_dir),
        }


def _blank_state(
    height: int, width: int, episode_seed: int, rng: np.random.Generator
) -> EnvState:
    return EnvState(
        kinds=np.zeros((height, width), dtype=np.int8),
        doors=np.zeros((height, width), dtype=np.int8),
        colors=np.zeros((height, width), dtype=np.int8),
        agent_pos=(0, 0),
        agent_dir=Direction(int(rng.integers(4))),
        episode_seed=episode_seed,
    )


class TwoRoomEnv(GridEnvironment):
    """Two rooms split by a wall with a single locked door."""

    height = 6
    width = 12
    split_col = 6
    has_goal = False

    def _generate(
        self, rng: np.random.Generator, episode_seed: int
    ) -> EnvState:
        state = _blank_state(self.height, self.width, episode_seed, rng)
        state.kinds[[0, -1], :] = ObjectKind.WALL
        state.kinds[:, [0, -1]] = ObjectKind.WALL
        state.kinds[:, self.split_col] = ObjectKind.WALL
        color = int(rng.integers(N_COLORS))
        door_row = int(rng.integers(1, self.height - 1))
        state.set_cell(
            (door_row, self.split_col),
            ObjectKind.DOOR,
            DoorState.LOCKED,
            color,
        )
        if self.has_goal:
            state.set_cell((self.height - 2, self.width - 2), ObjectKind.GOAL)
        left_room = [
            (r, c)
            for r in range(1, self.height - 1)
            for c in range(1, self.split_col)
        ]
        key_idx, agent_idx = rng.choice(len(left_room), size=2, replace=False)
        state.set_cell(left_room[key_idx], ObjectKind.KEY, color=color)
        state.agent_pos = left_room[agent_idx]
        return state

    def _interact(self, action: Action, info: dict[str, Any]) -> float:
        state = self._require_state()
        front = self.front_pos()
        front_kind = state.kinds[front] if self.in_bounds(front) else None
        if action is Action.FORWARD:
            if self._move_forward() and front_kind == ObjectKind.GOAL:
                state.done = True
                info["success"] = True
                return 1.0
        elif action is Action.PICKUP:
            if front_kind == ObjectKind.KEY and not state.inventory[Item.KEY]:
                state.carrying_color = int(state.colors[front]) - 1
                state.inventory[Item.KEY] = 1
                state.set_cell(front, ObjectKind.EMPTY)
        elif action is Action.TOGGLE and front_kind == ObjectKind.DOOR:
            return self._toggle_door(front, info)
        return 0.0

    def _toggle_door(
        self, pos: tuple[int, int], info: dict[str, Any]
    ) -> float:
        state = self._require_state()
        door = state.doors[pos]
        if door == DoorState.LOCKED:
            if state.carrying_color == int(state.colors[pos]) - 1:
                state.doors[pos] = DoorState.OPEN
                info["unlocked"] = True
                if not self.has_goal:
                    state.done = True
                    info["success"] = True
                    return 1.0
        elif door == DoorState.CLOSED:
            state.doors[pos] = DoorState.OPEN
        else:
            state.doors[pos] = DoorState.CLOSED
        return 0.0


class DoorKeyEnv(TwoRoomEnv):
    kind = EnvKind.DOORKEY
    has_goal = True


class UnlockEnv(TwoRoomEnv):
    kind = EnvKind.UNLOCK


class CraftWorldEnv(GridEnvironment):
    kind = EnvKind.CRAFTWORLD
    height = 12
    width = 12
    max_vital = 9
    hunger_interval = 25
    starve_interval = 10
    recover_interval = 10

    def default_max_steps(self) -> int:
        return 1000

    def _generate(
        self, rng: np.random.Generator, episode_seed: int
    ) -> EnvState:
        state = _blank_state(self.height, self.width, episode_seed, rng)
        cells = rng.permutation(self.height * self.width)
        counts = [
            (ObjectKind.RESOURCE_TREE, int(rng.integers(6, 11))),
            (ObjectKind.RESOURCE_STONE, int(rng.integers(8, 15))),
            (ObjectKind.RESOURCE_DIAMOND, int(rng.integers(1, 3))),
            (ObjectKind.RESOURCE_PLANT, int(rng.integers(2, 5))),
        ]
        cursor = 0
        for kind, n in counts:
            for idx in cells[cursor : cursor + n]:
                state.kinds[divmod(int(idx), self.width)] = kind
            cursor += n
        state.agent_pos = divmod(int(cells[cursor]), self.width)
        state.health = state.food = self.max_vital
        return state

    def passable(self, pos: tuple[int, int]) -> bool:
        if not self.in_bounds(pos):
            return False
        return bool(self._require_state().kinds[pos] == ObjectKind.EMPTY)

    def table_nearby(self) -> bool:
        state = self._require_state()
        r, c = state.agent_pos
        area = state.kinds[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2]
        return bool((area == ObjectKind.CRAFTING_TABLE).any())

    def _unlock(self, achievement: Achievement, info: dict[str, Any]) -> float:
        state = self._require_state()
        if achievement in state.achievements_unlocked:
            return 0.0
        state.achievements_unlocked.add(achievement)
        info["achievement"] = achievement.value
        if len(state.achievements_unlocked) == len(Achievement):
            info["success"] = True
        return 1.0

    def _interact(self, action: Action, info: dict[str, Any]) -> float:
        state = self._require_state()
        inv = state.inventory
        front = self.front_pos()
        front_kind = state.kinds[front] if self.in_bounds(front) else None
        if action is Action.FORWARD:
            self._move_forward()
        elif action is Action.PICKUP:
            if front_kind == ObjectKind.RESOURCE_PLANT:
                state.food = self.max_vital
                return 0.0
            if front_kind == ObjectKind.RESOURCE_TREE:
                inv[Item.WOOD] += 1
                return self._unlock(Achievement.COLLECT_WOOD, info)
            if (
                front_kind == ObjectKind.RESOURCE_STONE
                and inv[Item.WOOD_PICKAXE]
            ):
                inv[Item.STONE] += 1
                state.set_cell(front, ObjectKind.EMPTY)
                return self._unlock(Achievement.COLLECT_STONE, info)
            if (
                front_kind == ObjectKind.RESOURCE_DIAMOND
                and inv[Item.STONE_PICKAXE]
            ):
                inv[Item.DIAMOND] += 1
                state.set_cell(front, ObjectKind.EMPTY)
                return self._unlock(Achievement.COLLECT_DIAMOND, info)
        elif action is Action.CRAFT:
            return self._craft(front, info)
        return 0.0

    def _craft(self, front: tuple[int, int], info: dict[str, Any]) -> float:
        state = self._require_state()
        inv = state.inventory
        if self.table_nearby():
            if (
                inv[Item.WOOD_PICKAXE]
                and not inv[Item.STONE_PICKAXE]
                and inv[Item.WOOD] >= 1
                and inv[Item.STONE] >= 1
            ):
                inv[Item.WOOD] -= 1
                inv[Item.STONE] -= 1
                inv[Item.STONE_PICKAXE] += 1
                return self._unlock(Achievement.MAKE_STONE_PICKAXE, info)
            if not inv[Item.WOOD_PICKAXE] and inv[Item.WOOD] >= 1:
                inv[Item.WOOD] -= 1
                inv[Item.WOOD_PICKAXE] += 1
                return self._unlock(Achievement.MAKE_PICKAXE, info)
        elif inv[Item.WOOD] >= 1 and self.passable(front):
            inv[Item.WOOD] -= 1
            state.set_cell(front, ObjectKind.CRAFTING_TABLE)
            return self._unlock(Achievement.PLACE_TABLE, info)
        return 0.0

    def _tick(self, info: dict[str, Any]) -> None:
        state = self._require_state()
        assert state.health is not None and state.food is not None
        if state.step_count % self.hunger_interval == 0:
            state.food = max(state.food - 1, 0)
        if state.food == 0 and state.step_count % self.starve_interval == 0:
            state.health = max(state.health - 1, 0)
        elif state.food > 0 and state.step_count % self.recover_interval == 0:
            state.health = min(state.health + 1, self.max_vital)
        if state.health == 0:
            state.done = True
            info["died"] = True


ENVIRONMENTS: dict[EnvKind, type[GridEnvironment]] = {
    EnvKind.DOORKEY: DoorKeyEnv,
    EnvKind.UNLOCK: UnlockEnv,
    EnvKind.CRAFTWORLD: CraftWorldEnv,
}


def parse_env_kind(kind: EnvKind | str) -> EnvKind:
    try:
        return EnvKind(kind)
    except ValueError:
        choices = ", ".join(k.value for k in EnvKind)
        raise ConfigurationError(
            f"Unknown environment kind {kind!r} (choose from {choices})"
        ) from None


def make_env(
    kind: EnvKind | str,
    layout_seed: int,
    fixed_layout: bool = True,
    max_steps: int | None = None,
) -> GridEnvironment:
    return ENVIRONMENTS[parse_env_kind(kind)](
        layout_seed, fixed_layout=fixed_layout, max_steps=max_steps
    )


@dataclass(frozen=True)
class EnvSpec:
    kind: EnvKind
    layout_seed: int = 0
    fixed_layout: bool = False

    def make(self) -> GridEnvironment:
        return make_env(self.kind, self.layout_seed, self.fixed_layout)

    def as_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "layout_seed": self.layout_seed,
            "fixed_layout": self.fixed_layout,
        }


# Scripted solver


def plan_to_face(
    env: GridEnvironment, targets: Iterable[tuple[int, int]]
) -> list[Action] | None:
    """Shortest turn/forward sequence ending with a target cell in front."""
    state = env._require_state()
    goals = set(targets)
    if not goals:
        return None
    start = (state.agent_pos, state.agent_dir)
    parents: dict[Any, Any] = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        pos, d = node
        dr, dc = d.vector
        front = (pos[0] + dr, pos[1] + dc)
        if front in goals:
            actions: list[Action] = []
            while parents[node] is not None:
                node, action = parents[node]
                actions.append(action)
            return actions[::-1]
        moves = [(Action.TURN_LEFT, (pos, d.left()))]
        moves.append((Action.TURN_RIGHT, (pos, d.right())))
        if env.passable(front):
            moves.append((Action.FORWARD, (front, d)))
        for action, child in moves:
            if child not in parents:
                parents[child] = (node, action)
                queue.append(child)
    return None


def _cells_of(env: GridEnvironment, kind: ObjectKind) -> list[tuple[int, int]]:
    state = env._require_state()
    return [(int(r), int(c)) for r, c in np.argwhere(state.kinds == kind)]


def _empty_cells(env: GridEnvironment) -> list[tuple[int, int]]:
    return _cells_of(env, ObjectKind.EMPTY)


def _subgoals(
    env: GridEnvironment,
) -> Iterator[tuple[list[tuple[int, int]], list[Action]]]:
    """Yield (cells to face, actions to take once facing one)."""
    if isinstance(env, TwoRoomEnv):
        yield _cells_of(env, ObjectKind.KEY), [Action.PICKUP]
        yield _cells_of(env, ObjectKind.DOOR), [Action.TOGGLE]
        if env.has_goal:
            yield _cells_of(env, ObjectKind.GOAL), [Action.FORWARD]
        return
    yield _cells_of(env, ObjectKind.RESOURCE_TREE), [Action.PICKUP] * 3
    yield _empty_cells(env), [Action.CRAFT, Action.CRAFT]
    yield _cells_of(env, ObjectKind.RESOURCE_STONE), [Action.PICKUP]
    yield _cells_of(env, ObjectKind.CRAFTING_TABLE), [Action.CRAFT]
    yield _cells_of(env, ObjectKind.RESOURCE_DIAMOND), [Action.PICKUP]


def solve(env: GridEnvironment) -> list[Action] | None:
    """Plan a goal-reaching action sequence on a clone of ``env``.

    Returns ``None`` if the layout cannot be finished before the episode
    ends. Craftworld counts as finished once all achievements unlock.
    """
    sim = env.clone()
    plan: list[Action] = []
    # Subgoal targets depend on the grid as changed by earlier subgoals
    goals = _subgoals(sim)
    for targets, finish in goals:
        moves = plan_to_face(sim, targets)
        if moves is None:
            return None
        for action in moves + finish:
            if sim._require_state().done:
                return None
            plan.append(action)
            sim.step(action)
    return plan if sim.is_solved() else None


class SolverPolicy:
    """Evaluation policy that replays the scripted solver's plan."""

    def __init__(self) -> None:
        self._plan: list[Action] = []
        self._state: EnvState | None = None

    def choose(
        self,
        env: GridEnvironment,
        obs: Observation,
        rng: np.random.Generator,
    ) -> int:
        if env.state is not self._state:
            self._state = env.state
            self._plan = solve(env) or []
        return int(self._plan.pop(0)) if self._plan else int(Action.NOOP)


@dataclass
class Replay:
    kind: EnvKind
    layout_seed: int
    episode_seed: int
    fixed_layout: bool
    actions: list[int]
    rewards: list[float] = field(default_factory=list)
    layout: dict[str, Any] | None = None

    @classmethod
    def record(
        cls, env: GridEnvironment, actions: list[int], rewards: list[float]
    ) -> Replay:
        state = env._require_state()
        return cls(
            kind=env.kind,
            layout_seed=env.layout_seed,
            episode_seed=state.episode_seed,
            fixed_layout=env.fixed_layout,
            actions=list(actions),
            rewards=list(rewards),
        )

    def run(self) -> list[StepResult]:
        env = make_env(self.kind, self.layout_seed, self.fixed_layout)
        env.reset(self.episode_seed)
        self.layout = env.layout_document()
        results = []
        for action in self.actions:
            results.append(env.step(action))
            if results[-1].done:
                break
        return results

    def verify(self) -> bool:
        results = self.run()
        return len(results) == len(self.actions) and [
            r.extrinsic_reward for r in results
        ] == self.rewards

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind.value,
                "layout_seed": self.layout_seed,
                "episode_seed": self.episode_seed,
                "fixed_layout": self.fixed_layout,
                "layout": self.layout,
                "actions": self.actions,
                "rewards": self.rewards,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> Replay:
        data = json.loads(text)
        return cls(
            kind=parse_env_kind(data["kind"]),
            layout_seed=int(data["layout_seed"]),
            episode_seed=int(data["episode_seed"]),
            fixed_layout=bool(data["fixed_layout"]),
            actions=[int(a) for a in data["actions"]],
            rewards=[float(r) for r in data.get("rewards", [])],
            layout=data.get("layout"),
        )
