"""
Experiment orchestration.

A run fans out over seeds, writes one metrics CSV per seed and an
aggregate CSV with the mean and standard error across seeds, and records a
manifest linking every artifact it produced.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from django.conf import settings

from .. import version
from .agents import AgentStream, StreamRole
from .config import Algorithm, ExperimentConfig
from .errors import ConfigurationError
from .metrics import (
    EventLog,
    MetricsRow,
    read_events,
    rolling_average,
    standard_error,
)
from .resources import AggregateResource, MetricsResource, RankingResource
from .transfer import run_transfer, train_tabula_rasa
from .utils import INIT_STREAM, file_sha256, rng_stream

logger = logging.getLogger(__name__)


@dataclass
class SeedResult:
    seed: int
    seed_dir: Path
    rows: list[MetricsRow]
    artifacts: dict[str, Path] = field(default_factory=dict)


@dataclass
class RunResult:
    run_dir: Path
    seeds: list[SeedResult]
    aggregate_path: Path
    manifest_path: Path

    @property
    def metrics_paths(self) -> list[Path]:
        return [s.artifacts["metrics"] for s in self.seeds]


def _init_stream(
    config: ExperimentConfig, seed: int, role: StreamRole
) -> AgentStream:
    return AgentStream.initialize(
        role,
        rng_stream(seed, INIT_STREAM, role.code),
        width=config.feature_width,
        init_scale=config.init_scale,
    )


def _event_log_enabled(config: ExperimentConfig) -> bool:
    return config.event_log and bool(settings.CBET_EVENT_LOG)


def _resume_counts(
    config: ExperimentConfig, seed: int
) -> list[dict[str, Any]] | None:
    if config.resume_from is None:
        return None
    path = config.resume_from / f"seed_{seed}" / "counts.json"
    try:
        snapshots = json.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise ConfigurationError(
            f"Cannot resume counts from {path}: {e}"
        ) from e
    if not isinstance(snapshots, list):
        raise ConfigurationError(f"{path} does not hold count snapshots")
    logger.info("Resuming seed %d counts from %s", seed, path)
    return snapshots


def run_seed(config: ExperimentConfig, seed: int) -> SeedResult:
    """Execute the configured pipeline for one seed."""
    seed_dir = config.run_dir / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    result = SeedResult(seed, seed_dir, [])
    event_log = _event_log_enabled(config)
    resume_counts = _resume_counts(config, seed)
    if config.algorithm.is_transfer:
        transfer = run_transfer(
            config.phases(),
            config.algorithm.transfer_mode,
            _init_stream(config, seed, StreamRole.INTRINSIC),
            _init_stream(config, seed, StreamRole.EXTRINSIC),
            config.count_store(),
            config.hyper(),
            config.schedule(),
            seed=seed,
            run_dir=seed_dir,
            combine_scale=config.combine_scale,
            correction=config.correction(),
            event_log=event_log,
            resume_counts=resume_counts,
        )
        result.rows = transfer.finetune.rows
        result.artifacts["pretrain_metrics"] = MetricsResource().write(
            transfer.pretrain.rows, seed_dir / "pretrain_metrics.csv"
        )
        result.artifacts["transfer"] = seed_dir / "transfer.json"
        count_snapshots = transfer.pretrain.count_snapshots
        checkpoints = [
            transfer.pretrain.checkpoint,
            transfer.finetune.checkpoint,
        ]
    else:
        events_path = seed_dir / "events.jsonl" if event_log else None
        with EventLog(events_path) as events:
            phase = train_tabula_rasa(
                config.task_spec(),
                _init_stream(config, seed, StreamRole.EXTRINSIC),
                config.count_store(),
                config.mixcfg(),
                config.hyper(),
                config.schedule(),
                seed=seed,
                correction=config.correction(),
                events=events,
                checkpoint_path=seed_dir / "agent.ckpt",
                resume_counts=resume_counts,
            )
        result.rows = phase.rows
        count_snapshots = phase.count_snapshots
        checkpoints = [phase.checkpoint]
    for path in checkpoints:
        if path is not None:
            result.artifacts[path.stem] = path
    if event_log:
        result.artifacts["events"] = seed_dir / "events.jsonl"
    counts_path = seed_dir / "counts.json"
    counts_path.write_text(json.dumps(count_snapshots))
    result.artifacts["counts"] = counts_path
    result.artifacts["metrics"] = MetricsResource().write(
        result.rows, seed_dir / "metrics.csv"
    )
    return result


def aggregate(
    per_seed: Sequence[Sequence[MetricsRow]],
) -> list[dict[str, Any]]:
    """Across-seed mean and standard error at every evaluation step."""
    steps = [row.global_step for row in per_seed[0]]
    for rows in per_seed[1:]:
        if [row.global_step for row in rows] != steps:
            raise ConfigurationError("Seeds were evaluated at different steps")
    aggregated = []
    for i, step in enumerate(steps):
        column = [rows[i] for rows in per_seed]
        means = [r.mean_eval_return for r in column]
        intrinsic = [r.mean_intrinsic for r in column]
        aggregated.append(
            {
                "step": step,
                "seed": "all",
                "mean_eval_return": float(np.mean(means)),
                "se_eval_return": standard_error(means),
                "mean_intrinsic": (
                    None
                    if any(v is None for v in intrinsic)
                    else float(np.mean(intrinsic))
                ),
                "episodes": float(
                    np.mean([r.episodes_completed for r in column])
                ),
                "wall_seconds": float(
                    np.mean([r.wall_seconds for r in column])
                ),
                "n_seeds": len(column),
            }
        )
    return aggregated


def _artifact_entry(path: Path) -> dict[str, str]:
    return {"path": str(path), "sha256": file_sha256(path)}


def run(config: ExperimentConfig) -> RunResult:
    run_dir = config.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        "Starting %s run %s on %s with seeds %s",
        config.algorithm.value,
        config.name,
        config.task_env.value if config.task_env else "?",
        config.seeds,
    )
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            seeds = list(
                pool.map(
                    run_seed, [config] * len(config.seeds), config.seeds
                )
            )
    else:
        seeds = [run_seed(config, seed) for seed in config.seeds]
    aggregate_path = AggregateResource().write(
        aggregate([s.rows for s in seeds]), run_dir / "aggregate.csv"
    )
    manifest = {
        "version": version,
        "config": config.as_dict(),
        "seeds": {
            str(s.seed): {
                name: _artifact_entry(path)
                for name, path in sorted(s.artifacts.items())
            }
            for s in seeds
        },
        "aggregate": _artifact_entry(aggregate_path),
    }
    manifest_path = run_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    logger.info("Finished run %s in %s", config.name, run_dir)
    return RunResult(run_dir, seeds, aggregate_path, manifest_path)


def final_rolling_return(rows: Sequence[MetricsRow], window: int) -> float:
    series = [(r.global_step, r.mean_eval_return) for r in rows]
    smoothed = rolling_average(series, window)
    return smoothed[-1][1] if smoothed else 0.0


def grid_search(
    base: ExperimentConfig,
    alphas: Sequence[float],
    repeats: int | None = None,
) -> list[dict[str, Any]]:
    """Rank intrinsic strengths by the final rolling mean return.

    Ties go to the smaller alpha. ``repeats`` limits the runs per
    candidate to the first seeds of the base config.
    """
    if not alphas:
        raise ConfigurationError("alpha candidates must not be empty")
    if base.algorithm.is_transfer:
        raise ConfigurationError("Grid search tunes tabula rasa training")
    seeds = base.seeds[: repeats or len(base.seeds)]
    table = []
    for alpha in sorted(set(alphas)):
        result = run(
            replace(
                base,
                algorithm=Algorithm.CBET_AC,
                alpha=alpha,
                seeds=seeds,
                output_dir=base.run_dir,
                name=f"alpha_{alpha:g}",
            )
        )
        assert base.rolling_window is not None
        scores = [
            final_rolling_return(s.rows, base.rolling_window)
            for s in result.seeds
        ]
        table.append(
            {
                "algorithm": Algorithm.CBET_AC.value,
                "env": base.task_spec().kind.value,
                "agent_family": base.agent_family,
                "alpha": alpha,
                "final_rolling_return": float(np.mean(scores)),
                "se_final_rolling_return": standard_error(scores),
                "runs": len(scores),
            }
        )
    table.sort(key=lambda r: (-r["final_rolling_return"], r["alpha"]))
    for rank, entry in enumerate(table, start=1):
        entry["rank"] = rank
    RankingResource().write(table, base.run_dir / "grid_search.csv")
    logger.info(
        "Grid search %s: best alpha %g (final rolling return %.4f)",
        base.name,
        table[0]["alpha"],
        table[0]["final_rolling_return"],
    )
    return table


def audit_reward_mixing(
    event_log_path: Path, alpha: float, tolerance: float = 1e-12
) -> list[int]:
    """Line numbers where the logged r_t is not r_e + alpha * r_i."""
    violations = []
    for number, event in enumerate(read_events(event_log_path), start=1):
        if event.get("phase") != "tabula_rasa":
            continue
        expected = event["r_e"] + alpha * (event["r_i"] or 0.0)
        if not math.isclose(event["r_t"], expected, abs_tol=tolerance):
            violations.append(number)
    return violations


def first_step_reaching(
    rows: Sequence[MetricsRow], threshold: float
) -> int | None:
    for row in rows:
        if row.mean_eval_return >= threshold:
            return row.global_step
    return None


def directional_report(
    cbet: Sequence[Sequence[MetricsRow]],
    baseline: Sequence[Sequence[MetricsRow]],
    window: int,
    threshold: float = 0.5,
) -> dict[str, Any]:
    """Compare median final rolling returns and median first-reach steps.

    A seed that never reaches ``threshold`` counts as reaching it at
    infinity; the check requires the cbet runs to reach it at all.
    """

    def reach(runs: Sequence[Sequence[MetricsRow]]) -> float:
        steps = [first_step_reaching(rows, threshold) for rows in runs]
        return statistics.median(
            math.inf if s is None else float(s) for s in steps
        )

    cbet_final = statistics.median(
        final_rolling_return(rows, window) for rows in cbet
    )
    baseline_final = statistics.median(
        final_rolling_return(rows, window) for rows in baseline
    )
    cbet_reach, baseline_reach = reach(cbet), reach(baseline)
    returns_ok = cbet_final >= baseline_final
    reach_ok = math.isfinite(cbet_reach) and cbet_reach <= baseline_reach
    return {
        "threshold": threshold,
        "rolling_window": window,
        "cbet_median_final_return": cbet_final,
        "baseline_median_final_return": baseline_final,
        "cbet_median_first_step": (
            cbet_reach if math.isfinite(cbet_reach) else None
        ),
        "baseline_median_first_step": (
            baseline_reach if math.isfinite(baseline_reach) else None
        ),
        "returns_ok": returns_ok,
        "reach_ok": reach_ok,
        "passed": returns_ok and reach_ok,
    }


def directional_check(
    base: ExperimentConfig, threshold: float = 0.5
) -> dict[str, Any]:
    """Run cbet_ac and baseline_ac side by side and write the comparison."""
    cbet = run(
        replace(
            base,
            algorithm=Algorithm.CBET_AC,
            alpha=base.alpha if base.algorithm == Algorithm.CBET_AC else None,
            output_dir=base.run_dir,
            name="cbet_ac",
        )
    )
    baseline = run(
        replace(
            base,
            algorithm=Algorithm.BASELINE_AC,
            output_dir=base.run_dir,
            name="baseline_ac",
        )
    )
    assert base.rolling_window is not None
    report = directional_report(
        [s.rows for s in cbet.seeds],
        [s.rows for s in baseline.seeds],
        base.rolling_window,
        threshold,
    )
    (base.run_dir / "directional.json").write_text(
        json.dumps(report, indent=2)
    )
    if not report["passed"]:
        logger.warning("Directional check failed: %s", report)
    return report
