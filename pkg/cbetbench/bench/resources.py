from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path
from typing import Any, ClassVar

import tablib

from .metrics import MetricsRow


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def _number(value: str | None) -> float | None:
    return float(value) if value else None


class Resource:
    headers: ClassVar[tuple[str, ...]] = ()

    def row(self, item: Any) -> Sequence[Any]:
        raise NotImplementedError

    def export(self, items: Sequence[Any]) -> tablib.Dataset:
        dataset = tablib.Dataset(headers=list(self.headers))
        for item in items:
            dataset.append([_cell(v) for v in self.row(item)])
        return dataset

    def write(self, items: Sequence[Any], path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.export(items).export("csv"), newline="")
        return path

    @staticmethod
    def load(path: Path) -> tablib.Dataset:
        with path.open(newline="") as f:
            return tablib.Dataset().load(f.read(), format="csv")


class MetricsResource(Resource):
    headers = (
        "step",
        "seed",
        "mean_eval_return",
        "se_eval_return",
        "mean_intrinsic",
        "episodes",
        "wall_seconds",
    )

    def row(self, item: MetricsRow) -> Sequence[Any]:
        return (
            item.global_step,
            item.seed,
            item.mean_eval_return,
            item.se_eval_return,
            item.mean_intrinsic,
            item.episodes_completed,
            item.wall_seconds,
        )

    @classmethod
    def read(cls, path: Path) -> list[dict[str, Any]]:
        return [
            {
                "step": int(r["step"]),
                "seed": int(r["seed"]),
                "mean_eval_return": float(r["mean_eval_return"]),
                "se_eval_return": _number(r["se_eval_return"]),
                "mean_intrinsic": _number(r["mean_intrinsic"]),
                "episodes": int(r["episodes"]),
                "wall_seconds": float(r["wall_seconds"]),
            }
            for r in cls.load(path).dict
        ]


class AggregateResource(Resource):
    """Mean and standard error across seeds at every evaluation step."""

    headers = MetricsResource.headers + ("n_seeds",)

    def row(self, item: dict[str, Any]) -> Sequence[Any]:
        return tuple(item[h] for h in self.headers)

    @classmethod
    def read(cls, path: Path) -> list[dict[str, Any]]:
        return [
            {
                "step": int(r["step"]),
                "seed": r["seed"],
                "mean_eval_return": float(r["mean_eval_return"]),
                "se_eval_return": _number(r["se_eval_return"]),
                "mean_intrinsic": _number(r["mean_intrinsic"]),
                "episodes": float(r["episodes"]),
                "wall_seconds": float(r["wall_seconds"]),
                "n_seeds": int(r["n_seeds"]),
            }
            for r in cls.load(path).dict
        ]


class RankingResource(Resource):
    headers = (
        "rank",
        "algorithm",
        "env",
        "agent_family",
        "alpha",
        "final_rolling_return",
        "se_final_rolling_return",
        "runs",
    )

    def row(self, item: dict[str, Any]) -> Sequence[Any]:
        return tuple(item[h] for h in self.headers)

    @classmethod
    def read(cls, path: Path) -> list[dict[str, Any]]:
        return [
            {
                "rank": int(r["rank"]),
                "algorithm": r["algorithm"],
                "env": r["env"],
                "agent_family": r["agent_family"],
                "alpha": float(r["alpha"]),
                "final_rolling_return": float(r["final_rolling_return"]),
                "se_final_rolling_return": _number(
                    r["se_final_rolling_return"]
                ),
                "runs": int(r["runs"]),
            }
            for r in cls.load(path).dict
        ]
