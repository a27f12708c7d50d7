import json
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from cbetbench.bench.agents import (
    BIAS_INDEX,
    N_INPUTS,
    AgentStream,
    StreamPolicy,
    StreamRole,
    TrainHyper,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from cbetbench.bench.errors import CheckpointError, ConfigurationError
from cbetbench.bench.gridworlds import EnvKind, EnvSpec, Observation
from cbetbench.bench.harness import audit_reward_mixing
from cbetbench.bench.metrics import EventLog, read_events
from cbetbench.bench.novelty import CountStore, RewardMix
from cbetbench.bench.transfer import (
    CombinedPolicy,
    FrozenCheckpoint,
    PhaseConfig,
    PhaseResult,
    Schedule,
    TransferMode,
    audit_phase_purity,
    check_compatible,
    combine,
    finetune_task,
    run_transfer,
    train_tabula_rasa,
)

DOORKEY = EnvSpec(EnvKind.DOORKEY)
UNLOCK = EnvSpec(EnvKind.UNLOCK)
TINY = Schedule(
    step_budget=40,
    eval_every=20,
    eval_episodes=1,
    n_actors=2,
    unroll_length=5,
    record_wall_time=False,
)


def constant_stream(logits: list[float]) -> AgentStream:
    """Stream whose logits ignore the observation."""
    encoder = np.zeros((N_INPUTS, 1))
    encoder[BIAS_INDEX, 0] = np.arctanh(0.5)
    return AgentStream(
        encoder=encoder,
        policy=2.0 * np.array(logits).reshape(-1, 1),
        value_head=np.zeros(1),
        role=StreamRole.INTRINSIC,
    )


@pytest.mark.parametrize(
    ["scale", "expected"],
    [
        pytest.param(1.0, [0.7310585786, 0.2689414214], id="sum"),
        pytest.param(0.5, [0.6224593312, 0.3775406688], id="half"),
    ],
)
def test_combine(
    doorkey_obs: list[Observation], scale: float, expected: list[float]
) -> None:
    policy = CombinedPolicy(
        constant_stream([2.0, 0.0]),
        constant_stream([0.0, 1.0]),
        TransferMode.WORLD_MODEL,
        scale,
    )
    np.testing.assert_allclose(
        combine(policy, doorkey_obs[0]), expected, atol=1e-9
    )


def top_margin(logits: np.ndarray) -> np.ndarray:
    ordered = np.sort(logits, axis=1)
    return ordered[:, -1] - ordered[:, -2]


def logit_range(logits: np.ndarray) -> np.ndarray:
    return logits.max(axis=1) - logits.min(axis=1)


def test_dominant_stream_decides_argmax() -> None:
    rng = np.random.default_rng(11)
    scales = np.exp(rng.uniform(-3.0, 3.0, size=(2, 100_000, 1)))
    first = rng.normal(size=(100_000, 7)) * scales[0]
    second = rng.normal(size=(100_000, 7)) * scales[1]
    combined = (first + second).argmax(axis=1)
    kept = 0
    for dominant, other in ((first, second), (second, first)):
        wins = top_margin(dominant) > logit_range(other)
        kept += int(wins.sum())
        assert (combined[wins] == dominant.argmax(axis=1)[wins]).all()
    assert kept > 1_000


@pytest.mark.parametrize("mode", list(TransferMode))
def test_zero_intrinsic_head(
    stream: AgentStream,
    doorkey_obs: list[Observation],
    mode: TransferMode,
) -> None:
    stream.policy[:] = np.random.default_rng(4).normal(
        size=stream.policy.shape
    )
    intrinsic = stream.copy(StreamRole.INTRINSIC)
    intrinsic.policy[:] = 0.0
    policy = CombinedPolicy(intrinsic, stream, mode)
    own = StreamPolicy(stream)
    for obs in doorkey_obs:
        np.testing.assert_allclose(
            combine(policy, obs), own.action_distribution(obs), atol=1e-12
        )


def test_modes_agree_on_shared_encoder(
    stream: AgentStream, doorkey_obs: list[Observation]
) -> None:
    rng = np.random.default_rng(5)
    intrinsic = stream.copy(StreamRole.INTRINSIC)
    intrinsic.policy[:] = rng.normal(size=intrinsic.policy.shape)
    stream.policy[:] = rng.normal(size=stream.policy.shape)
    model_free = CombinedPolicy(intrinsic, stream, TransferMode.MODEL_FREE)
    world_model = CombinedPolicy(intrinsic, stream, TransferMode.WORLD_MODEL)
    for obs in doorkey_obs:
        np.testing.assert_allclose(
            model_free.action_logits(obs),
            world_model.action_logits(obs),
            atol=1e-12,
        )


def test_model_free_reads_intrinsic_features(
    rng: np.random.Generator, doorkey_obs: list[Observation]
) -> None:
    intrinsic = AgentStream.initialize(StreamRole.INTRINSIC, rng, width=8)
    extrinsic = AgentStream.initialize(StreamRole.EXTRINSIC, rng, width=8)
    extrinsic.policy[:] = rng.normal(size=extrinsic.policy.shape)
    policy = CombinedPolicy(intrinsic, extrinsic, TransferMode.MODEL_FREE)
    sharing = extrinsic.copy()
    sharing.encoder = intrinsic.encoder.copy()
    np.testing.assert_allclose(
        policy.extrinsic_logits(doorkey_obs[0]),
        StreamPolicy(sharing).action_logits(doorkey_obs[0]),
    )


@pytest.mark.parametrize(
    ["intrinsic", "extrinsic", "mode", "scale"],
    [
        pytest.param(
            constant_stream([1.0, 2.0]),
            constant_stream([1.0, 2.0, 3.0]),
            TransferMode.WORLD_MODEL,
            1.0,
            id="actions",
        ),
        pytest.param(
            constant_stream([1.0, 2.0]),
            constant_stream([1.0, 2.0]),
            TransferMode.WORLD_MODEL,
            0.25,
            id="scale",
        ),
        pytest.param(
            constant_stream([1.0, 2.0]),
            AgentStream.initialize(
                StreamRole.EXTRINSIC,
                np.random.default_rng(0),
                width=4,
                n_actions=2,
            ),
            TransferMode.MODEL_FREE,
            1.0,
            id="width",
        ),
    ],
)
def test_combined_policy_rejects(
    intrinsic: AgentStream,
    extrinsic: AgentStream,
    mode: TransferMode,
    scale: float,
) -> None:
    with pytest.raises(ConfigurationError):
        CombinedPolicy(intrinsic, extrinsic, mode, scale)


@pytest.mark.parametrize(
    "overrides",
    [
        pytest.param({"step_budget": 0}, id="budget"),
        pytest.param({"eval_every": 0}, id="eval_every"),
        pytest.param({"eval_episodes": 0}, id="eval_episodes"),
        pytest.param({"n_actors": 0}, id="actors"),
    ],
)
def test_schedule_validation(overrides: dict[str, int]) -> None:
    values = {"step_budget": 100, **overrides}
    with pytest.raises(ConfigurationError):
        Schedule(**values)


def test_tabula_rasa_rows_and_mixing(
    stream: AgentStream, tmp_path: Path
) -> None:
    schedule = Schedule(
        step_budget=100,
        eval_every=30,
        eval_episodes=1,
        n_actors=2,
        unroll_length=10,
        record_wall_time=False,
    )
    events_path = tmp_path / "events.jsonl"
    with EventLog(events_path) as events:
        result = train_tabula_rasa(
            UNLOCK,
            stream,
            CountStore(),
            RewardMix(0.5),
            TrainHyper(),
            schedule,
            seed=3,
            events=events,
            checkpoint_path=tmp_path / "agent.ckpt",
        )
    assert [r.global_step for r in result.rows] == [0, 30, 60, 90]
    assert result.steps == 100
    assert result.rows[0].mean_intrinsic is None
    assert all(r.mean_intrinsic is not None for r in result.rows[1:])
    logged = read_events(events_path)
    assert sorted(e["step"] for e in logged) == list(range(1, 101))
    assert all(e["r_i"] is not None for e in logged)
    assert audit_reward_mixing(events_path, 0.5) == []
    assert len(result.count_snapshots) == 2
    assert load_checkpoint(tmp_path / "agent.ckpt").digest() == result.digest


@pytest.mark.parametrize(
    ["budget", "eval_every", "n_actors"],
    [
        pytest.param(100, 10, 8, id="eval_every_10"),
        pytest.param(100, 30, 8, id="eval_every_30"),
        pytest.param(37, 37, 3, id="single_eval"),
    ],
)
def test_budget_is_exact(
    stream: AgentStream,
    tmp_path: Path,
    budget: int,
    eval_every: int,
    n_actors: int,
) -> None:
    schedule = Schedule(
        step_budget=budget,
        eval_every=eval_every,
        eval_episodes=1,
        n_actors=n_actors,
        unroll_length=20,
        record_wall_time=False,
    )
    events_path = tmp_path / "events.jsonl"
    with EventLog(events_path) as events:
        result = train_tabula_rasa(
            DOORKEY,
            stream,
            CountStore(),
            RewardMix(0.5),
            TrainHyper(),
            schedule,
            seed=2,
            events=events,
        )
    assert result.steps == budget
    assert [r.global_step for r in result.rows] == schedule.eval_steps
    logged = read_events(events_path)
    assert len(logged) == budget
    assert sorted(e["step"] for e in logged) == list(range(1, budget + 1))


def short_run(
    stream: AgentStream, novelty: CountStore, **kwargs: Any
) -> PhaseResult:
    return train_tabula_rasa(
        UNLOCK,
        stream,
        novelty,
        RewardMix(0.5),
        TrainHyper(),
        Schedule(
            step_budget=20,
            eval_every=20,
            eval_episodes=1,
            n_actors=1,
            unroll_length=5,
            record_wall_time=False,
        ),
        seed=4,
        **kwargs,
    )


def visits(snapshot: dict[str, Any]) -> int:
    return sum(n for _, n in snapshot["state_counts"])


def test_store_counts_carry_into_actors(stream: AgentStream) -> None:
    novelty = CountStore(0.99, 0.0)
    novelty.state_counts[123] = 5
    result = short_run(stream, novelty)
    assert [123, 5] in map(list, result.count_snapshots[0]["state_counts"])
    assert visits(result.count_snapshots[0]) == 25
    assert novelty.state_counts == {123: 5}


def test_resume_continues_counts(stream: AgentStream) -> None:
    first = short_run(stream, CountStore(0.99, 0.0))
    assert visits(first.count_snapshots[0]) == 20
    saved = json.loads(json.dumps(first.count_snapshots))
    second = short_run(stream, CountStore(0.99, 0.0), resume_counts=saved)
    assert visits(second.count_snapshots[0]) == 40
    assert second.count_snapshots[0]["resets"] == 0


def test_resume_restores_reset_stream(stream: AgentStream) -> None:
    first = short_run(stream, CountStore())
    saved = json.loads(json.dumps(first.count_snapshots))
    second = short_run(stream, CountStore(), resume_counts=saved)
    _, replayed = CountStore.from_snapshot(saved[0])
    _, after = CountStore.from_snapshot(second.count_snapshots[0])
    assert replayed is not None and after is not None
    # One reset draw per step
    replayed.random(20)
    assert after.bit_generator.state == replayed.bit_generator.state


@pytest.mark.parametrize(
    ["novelty", "snapshots"],
    [
        pytest.param(CountStore(), [], id="count_mismatch"),
        pytest.param(None, [CountStore().snapshot()], id="no_novelty"),
    ],
)
def test_resume_rejects(
    stream: AgentStream,
    novelty: CountStore | None,
    snapshots: list[dict[str, Any]],
) -> None:
    with pytest.raises(ConfigurationError):
        train_tabula_rasa(
            UNLOCK,
            stream,
            novelty,
            RewardMix(0.5),
            TrainHyper(),
            TINY,
            seed=1,
            resume_counts=snapshots,
        )


def test_transfer_pipeline(rng: np.random.Generator, tmp_path: Path) -> None:
    intrinsic = AgentStream.initialize(StreamRole.INTRINSIC, rng, width=8)
    extrinsic = AgentStream.initialize(StreamRole.EXTRINSIC, rng, width=8)
    result = run_transfer(
        PhaseConfig(40, 40, DOORKEY, UNLOCK),
        TransferMode.MODEL_FREE,
        intrinsic,
        extrinsic,
        CountStore(),
        TrainHyper(),
        TINY,
        seed=7,
        run_dir=tmp_path,
    )
    events_path = tmp_path / "events.jsonl"
    logged = read_events(events_path)
    assert len(logged) == 80
    assert {e["phase"] for e in logged} == {"pretrain", "finetune"}
    assert audit_phase_purity(events_path) == []
    manifest = json.loads((tmp_path / "transfer.json").read_text())
    assert manifest["intrinsic_unchanged"] is True
    assert manifest["mode"] == "model_free"
    assert manifest["pretrain_steps"] == manifest["finetune_steps"] == 40
    frozen = FrozenCheckpoint.load(
        tmp_path / "intrinsic.ckpt", manifest["intrinsic_checkpoint"]["sha256"]
    )
    assert frozen.stream.digest() == result.pretrain.digest
    np.testing.assert_array_equal(
        result.finetune.stream.encoder, frozen.stream.encoder
    )
    assert result.finetune.stream.role == StreamRole.EXTRINSIC
    assert [r.global_step for r in result.finetune.rows] == [0, 20, 40]


def test_phase_purity_violations(tmp_path: Path) -> None:
    path = tmp_path / "events.jsonl"
    events = [
        {"phase": "pretrain", "r_e": None, "r_i": 0.5, "r_t": 0.5},
        {"phase": "pretrain", "r_e": 1.0, "r_i": 0.5, "r_t": 0.5},
        {"phase": "finetune", "r_e": 0.0, "r_i": None, "reset": None,
         "r_t": 0.0},
        {"phase": "finetune", "r_e": 0.0, "r_i": 0.5, "reset": False,
         "r_t": 0.0},
    ]
    path.write_text("".join(json.dumps(e) + "\n" for e in events))
    assert audit_phase_purity(path) == [2, 4]


def test_frozen_checkpoint_guards(stream: AgentStream, tmp_path: Path) -> None:
    path = tmp_path / "intrinsic.ckpt"
    digest = save_checkpoint(stream, path)
    with pytest.raises(CheckpointError):
        FrozenCheckpoint.load(path, "0" * 64)
    frozen = FrozenCheckpoint.load(path, digest)
    assert frozen.intact()
    save_checkpoint(constant_stream([0.0] * stream.n_actions), path)
    assert not frozen.intact()
    with pytest.raises(CheckpointError):
        finetune_task(
            UNLOCK,
            frozen,
            stream.copy(),
            TrainHyper(),
            TINY,
            TransferMode.WORLD_MODEL,
            seed=1,
        )


def test_incompatible_environments() -> None:
    with pytest.raises(ConfigurationError):
        check_compatible(DOORKEY, EnvSpec(EnvKind.CRAFTWORLD))
    check_compatible(DOORKEY, UNLOCK)


def test_zero_head_intrinsic_matches_tabula_rasa(
    stream: AgentStream, tmp_path: Path
) -> None:
    intrinsic = stream.copy(StreamRole.INTRINSIC)
    intrinsic.policy[:] = 0.0
    path = tmp_path / "intrinsic.ckpt"
    frozen = FrozenCheckpoint.load(path, save_checkpoint(intrinsic, path))
    alone = train_tabula_rasa(
        UNLOCK,
        stream.copy(),
        None,
        RewardMix(0.0),
        TrainHyper(),
        TINY,
        seed=5,
    )
    combined = finetune_task(
        UNLOCK,
        frozen,
        stream.copy(),
        TrainHyper(),
        TINY,
        TransferMode.WORLD_MODEL,
        seed=5,
    )
    for name, array in alone.stream.arrays().items():
        np.testing.assert_array_equal(array, combined.stream.arrays()[name])
    assert [r.returns for r in alone.rows] == [
        r.returns for r in combined.rows
    ]


def test_distribution_sums_to_one(
    stream: AgentStream, doorkey_obs: list[Observation]
) -> None:
    policy = CombinedPolicy(stream.copy(StreamRole.INTRINSIC), stream)
    for obs in doorkey_obs:
        dist = combine(policy, obs)
        assert dist.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(
            dist, softmax(policy.action_logits(obs)), atol=1e-15
        )
