from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any

from django.conf import settings

from .agents import TrainHyper
from .collector import CorrectionConfig
from .errors import ConfigurationError
from .gridworlds import EnvKind, EnvSpec, parse_env_kind
from .novelty import CountStore, RewardMix, default_alpha
from .transfer import PhaseConfig, Schedule, TransferMode

GRID_STEP_BUDGET = 300_000
CRAFT_STEP_BUDGET = 200_000
ROLLING_WINDOW = 200_000
AGENT_FAMILIES = ("impala", "dreamer-like")


class Algorithm(str, Enum):
    BASELINE_AC = "baseline_ac"
    CBET_AC = "cbet_ac"
    CBET_TRANSFER_MODEL_FREE = "cbet_transfer_model_free"
    CBET_TRANSFER_WORLD_MODEL = "cbet_transfer_world_model"

    @property
    def is_transfer(self) -> bool:
        return self in {
            Algorithm.CBET_TRANSFER_MODEL_FREE,
            Algorithm.CBET_TRANSFER_WORLD_MODEL,
        }

    @property
    def transfer_mode(self) -> TransferMode:
        if self == Algorithm.CBET_TRANSFER_WORLD_MODEL:
            return TransferMode.WORLD_MODEL
        return TransferMode.MODEL_FREE


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def parser(value: str) -> Any:
        return None if value.lower() in {"", "none", "auto"} else parse(value)

    return parser


def _int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


_PARSERS: dict[str, Callable[[str], Any]] = {
    "str": str,
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "int | None": _optional(int),
    "float | None": _optional(float),
    "Path | None": _optional(Path),
    "EnvKind": parse_env_kind,
    "EnvKind | None": _optional(parse_env_kind),
    "Algorithm": Algorithm,
    "list[int]": _int_list,
}


@dataclass
class ExperimentConfig:
    """One experiment: environment, algorithm, seeds, budgets and hyper.

    Values left as None are resolved from the environment family and the
    algorithm when the config is built.
    """

    name: str = "cbet"
    output_dir: Path | None = None
    resume_from: Path | None = None
    algorithm: Algorithm = Algorithm.CBET_AC
    env_kind: EnvKind = EnvKind.DOORKEY
    exploration_env: EnvKind | None = None
    task_env: EnvKind | None = None
    layout_seed: int = 0
    fixed_layout: bool = False
    pretrain_fixed_layout: bool = False
    agent_family: str = "impala"
    alpha: float | None = None
    gamma_i: float = 0.99
    reset_probability: float | None = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    step_budget: int | None = None
    pretrain_steps: int | None = None
    eval_every: int = 10_000
    eval_episodes: int = 8
    rolling_window: int | None = None
    n_actors: int = 8
    unroll_length: int = 20
    actor_threads: int = 1
    off_policy_correction: bool = True
    rho_bar: float = 1.0
    c_bar: float = 1.0
    learning_rate: float = 0.01
    gamma: float = 0.99
    n_step: int = 5
    entropy_coeff: float = 0.01
    value_coeff: float = 0.5
    max_grad_norm: float | None = 40.0
    feature_width: int = 64
    init_scale: float = 0.1
    combine_scale: float = 1.0
    event_log: bool = True
    record_wall_time: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        self.algorithm = Algorithm(self.algorithm)
        self.env_kind = parse_env_kind(self.env_kind)
        if self.algorithm.is_transfer:
            self.exploration_env = parse_env_kind(
                self.exploration_env or EnvKind.DOORKEY
            )
            self.task_env = parse_env_kind(self.task_env or EnvKind.UNLOCK)
        else:
            self.task_env = self.env_kind
        self.output_dir = Path(self.output_dir or settings.CBET_OUTPUT_DIR)
        if self.resume_from is not None:
            self.resume_from = Path(self.resume_from)
        self._resolve()
        self._validate()

    def _resolve(self) -> None:
        assert self.task_env is not None
        if self.step_budget is None:
            self.step_budget = (
                CRAFT_STEP_BUDGET
                if self.task_env == EnvKind.CRAFTWORLD
                else GRID_STEP_BUDGET
            )
        if self.pretrain_steps is None:
            self.pretrain_steps = self.step_budget
        if self.rolling_window is None:
            self.rolling_window = min(ROLLING_WINDOW, self.step_budget)
        if self.algorithm == Algorithm.BASELINE_AC:
            self.alpha = 0.0
        elif self.alpha is None:
            family = self.agent_family
            if family not in AGENT_FAMILIES:
                family = AGENT_FAMILIES[0]
            self.alpha = default_alpha(family, self.task_env)

    def _validate(self) -> None:
        problems = []
        assert self.step_budget is not None
        assert self.rolling_window is not None
        if not self.seeds:
            problems.append("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            problems.append("seeds must be distinct")
        if any(s < 0 for s in self.seeds) or self.layout_seed < 0:
            problems.append("seeds must be nonnegative")
        if self.agent_family not in AGENT_FAMILIES:
            problems.append(f"agent_family must be one of {AGENT_FAMILIES}")
        if self.step_budget < 1:
            problems.append("step_budget must be positive")
        if self.pretrain_steps is not None and self.pretrain_steps < 1:
            problems.append("pretrain_steps must be positive")
        if not 1 <= self.eval_every <= self.step_budget:
            problems.append("eval_every must lie in [1, step_budget]")
        if not 1 <= self.rolling_window <= self.step_budget:
            problems.append("rolling_window must lie in [1, step_budget]")
        if self.alpha is not None and not self.alpha >= 0.0:
            problems.append("alpha must be nonnegative")
        if self.feature_width < 1:
            problems.append("feature_width must be positive")
        if self.workers < 1 or self.actor_threads < 1:
            problems.append("workers and actor_threads must be positive")
        if self.combine_scale not in (1.0, 0.5):
            problems.append("combine_scale must be 1.0 or 0.5")
        if problems:
            raise ConfigurationError(problems)
        # Component invariants, checked before any compute
        self.hyper()
        self.correction()
        self.schedule(self.step_budget)
        self.count_store()

    @classmethod
    def from_text(cls, text: str, **overrides: Any) -> ExperimentConfig:
        """Parse ``key value`` or ``key = value`` lines; ``#`` comments."""
        types = {f.name: str(f.type) for f in fields(cls)}
        values: dict[str, Any] = {}
        problems = []
        for number, raw in enumerate(text.splitlines(), start=1):
            if not (line := raw.split("#", 1)[0].strip()):
                continue
            if "=" in line:
                key, _, value = line.partition("=")
            else:
                key, _, value = line.partition(" ")
            key, value = key.strip().lower().replace("-", "_"), value.strip()
            if key not in types:
                problems.append(f"line {number}: unknown key {key!r}")
                continue
            try:
                values[key] = _PARSERS[types[key]](value)
            except ConfigurationError as e:
                problems.extend(
                    f"line {number}: {key}: {m}" for m in e.messages
                )
            except ValueError as e:
                problems.append(f"line {number}: {key}: {e}")
        if problems:
            raise ConfigurationError(problems)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path: Path, **overrides: Any) -> ExperimentConfig:
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigurationError(f"Cannot read config {path}: {e}") from e
        return cls.from_text(text, **overrides)

    @property
    def run_dir(self) -> Path:
        assert self.output_dir is not None
        return self.output_dir / self.name

    def as_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, Enum):
                data[key] = value.value
            elif isinstance(value, Path):
                data[key] = str(value)
        return data

    def hyper(self) -> TrainHyper:
        return TrainHyper(
            learning_rate=self.learning_rate,
            gamma=self.gamma,
            n_step=self.n_step,
            entropy_coeff=self.entropy_coeff,
            value_coeff=self.value_coeff,
            max_grad_norm=self.max_grad_norm,
        )

    def correction(self) -> CorrectionConfig | None:
        if not self.off_policy_correction:
            return None
        return CorrectionConfig(self.rho_bar, self.c_bar, self.unroll_length)

    def schedule(self, step_budget: int | None = None) -> Schedule:
        budget = step_budget or self.step_budget
        assert budget is not None
        return Schedule(
            step_budget=budget,
            eval_every=self.eval_every,
            eval_episodes=self.eval_episodes,
            n_actors=self.n_actors,
            unroll_length=self.unroll_length,
            actor_threads=self.actor_threads,
            record_wall_time=self.record_wall_time,
        )

    def count_store(self) -> CountStore:
        return CountStore(self.gamma_i, self.reset_probability)

    def mixcfg(self) -> RewardMix:
        return RewardMix(self.alpha or 0.0)

    def task_spec(self) -> EnvSpec:
        assert self.task_env is not None
        return EnvSpec(self.task_env, self.layout_seed, self.fixed_layout)

    def phases(self) -> PhaseConfig:
        assert self.exploration_env is not None
        assert self.pretrain_steps is not None and self.step_budget
        return PhaseConfig(
            pretrain_steps=self.pretrain_steps,
            finetune_steps=self.step_budget,
            exploration_env=EnvSpec(
                self.exploration_env,
                self.layout_seed,
                self.pretrain_fixed_layout,
            ),
            task_env=self.task_spec(),
        )
