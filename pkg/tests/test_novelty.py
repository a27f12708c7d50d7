import json
from collections import defaultdict

import numpy as np
import pytest

from cbetbench.bench.errors import ConfigurationError, UsageError
from cbetbench.bench.gridworlds import EnvKind, ObjectKind, Observation
from cbetbench.bench.novelty import (
    ALPHA_PRESETS,
    EMPTY_CHANGE_KEY,
    CountStore,
    NoveltyTracker,
    RewardMix,
    compute_change,
    default_alpha,
    hash_observation,
    mix,
)


def test_first_visit_reward() -> None:
    assert CountStore().observe_and_reward(1, 2) == 0.5


def test_intrinsic_decay() -> None:
    store = CountStore(reset_probability=0.0)
    rewards = [store.observe_and_reward(7, 9) for _ in range(100)]
    assert rewards == [1 / (2 * k) for k in range(1, 101)]
    assert rewards[2] == 1 / 6


def test_differing_pairings() -> None:
    store = CountStore()
    rewards = [store.observe_and_reward(5, c) for c in (10, 11, 12, 13)]
    assert rewards[-1] == 1 / 5


@pytest.mark.parametrize("stream_seed", range(10))
def test_matches_dictionary_reference(stream_seed: int) -> None:
    rng = np.random.default_rng(stream_seed)
    states = rng.integers(0, 50, size=10_000)
    changes = rng.integers(0, 20, size=10_000)
    store = CountStore()
    n_s: dict[int, int] = defaultdict(int)
    n_c: dict[int, int] = defaultdict(int)
    for s, c in zip(states.tolist(), changes.tolist()):
        n_s[s] += 1
        n_c[c] += 1
        assert store.observe_and_reward(s, c) == 1.0 / (n_s[s] + n_c[c])


def test_rewards_in_range() -> None:
    store = CountStore()
    rng = np.random.default_rng(0)
    for s, c in rng.integers(0, 5, size=(500, 2)).tolist():
        assert 0.0 < store.observe_and_reward(s, c) <= 0.5


@pytest.mark.parametrize(
    ["probability", "expected"],
    [
        pytest.param(0.0, 0, id="never"),
        pytest.param(1.0, 1000, id="always"),
    ],
)
def test_reset_extremes(probability: float, expected: int) -> None:
    store = CountStore(reset_probability=0.0)
    store.reset_probability = probability
    rng = np.random.default_rng(0)
    assert sum(store.maybe_reset(rng) for _ in range(1000)) == expected


def test_reset_rate() -> None:
    store = CountStore(gamma_i=0.99)
    assert store.reset_probability == pytest.approx(0.01)
    rng = np.random.default_rng(2024)
    resets = sum(store.maybe_reset(rng) for _ in range(100_000))
    assert 0.0091 <= resets / 100_000 <= 0.0109
    assert store.resets == resets


def test_reset_clears_both_tables() -> None:
    store = CountStore(reset_probability=0.0)
    store.observe_and_reward(1, 2)
    store.reset_probability = 1.0
    assert store.maybe_reset(np.random.default_rng(0))
    assert not store.state_counts
    assert not store.change_counts
    assert store.observe_and_reward(1, 2) == 0.5


@pytest.mark.parametrize(
    ["gamma_i", "reset_probability"],
    [
        pytest.param(0.99, 0.02, id="above_bound"),
        pytest.param(1.0, None, id="gamma_one"),
        pytest.param(0.9, -0.1, id="negative"),
    ],
)
def test_invalid_store(gamma_i: float, reset_probability: float) -> None:
    with pytest.raises(ConfigurationError):
        CountStore(gamma_i=gamma_i, reset_probability=reset_probability)


def test_unchanged_observation(doorkey_obs: list[Observation]) -> None:
    obs = doorkey_obs[0]
    assert compute_change(obs, obs) == EMPTY_CHANGE_KEY


def _with_cell(row: int, col: int, kind: int) -> Observation:
    view = np.zeros((7, 7, 3), dtype=np.int8)
    view[row, col, 0] = kind
    return Observation(view, (0,) * 6)


def test_change_depends_on_difference() -> None:
    base = _with_cell(0, 0, 0)
    wall, key = _with_cell(0, 0, 1), _with_cell(1, 1, 3)
    assert compute_change(base, wall) != EMPTY_CHANGE_KEY
    assert compute_change(base, wall) == compute_change(
        _with_cell(0, 0, 0), _with_cell(0, 0, 1)
    )
    assert compute_change(base, wall) != compute_change(wall, base)
    assert compute_change(base, wall) != compute_change(base, key)


def test_single_cell_changes_never_collide() -> None:
    empty = _with_cell(0, 0, ObjectKind.EMPTY)
    walls = [
        _with_cell(row, col, ObjectKind.WALL)
        for row in range(7)
        for col in range(7)
    ]
    appear = [compute_change(empty, wall) for wall in walls]
    vanish = [compute_change(wall, empty) for wall in walls]
    keys = set(appear) | set(vanish)
    assert len(keys) == 2 * len(walls)
    assert EMPTY_CHANGE_KEY not in keys
    for forward, backward in zip(appear, vanish):
        assert forward != backward
    states = {hash_observation(obs) for obs in [empty, *walls]}
    assert len(states) == len(walls) + 1


def test_inventory_change_registers() -> None:
    view = np.zeros((7, 7, 3), dtype=np.int8)
    before = Observation(view.copy(), (0, 1, 0, 0, 0, 0))
    after = Observation(view.copy(), (0, 0, 0, 0, 1, 0))
    assert before.view.tobytes() == after.view.tobytes()
    assert compute_change(before, after) != EMPTY_CHANGE_KEY


def test_vitals_mismatch() -> None:
    view = np.zeros((7, 7, 3), dtype=np.int8)
    with pytest.raises(UsageError):
        compute_change(
            Observation(view.copy(), (0,) * 6),
            Observation(view.copy(), (0,) * 6, (9, 9)),
        )


def test_hash_observation(doorkey_obs: list[Observation]) -> None:
    first, second = doorkey_obs[0], _with_cell(2, 2, 4)
    copy = Observation(first.view.copy(), first.inventory, first.vitals)
    assert hash_observation(first) == hash_observation(copy)
    assert hash_observation(first) != hash_observation(second)


@pytest.mark.parametrize(
    ["r_e", "r_i", "alpha", "expected"],
    [
        pytest.param(0.7, 0.5, 0.0, 0.7, id="alpha_zero"),
        pytest.param(1.0, 0.5, 0.005, 1.0025, id="crafter_preset"),
        pytest.param(0.0, 0.25, 0.0025, 0.000625, id="intrinsic_only"),
    ],
)
def test_mix(r_e: float, r_i: float, alpha: float, expected: float) -> None:
    assert mix(r_e, r_i, RewardMix(alpha)) == pytest.approx(
        expected, rel=1e-12
    )


def test_mix_linearity() -> None:
    rng = np.random.default_rng(3)
    for r_e, r_i, alpha in rng.random((100, 3)).tolist():
        cfg = RewardMix(alpha)
        assert mix(r_e, r_i, cfg) - mix(r_e, 0.0, cfg) == pytest.approx(
            alpha * r_i, rel=1e-12, abs=1e-15
        )


def test_negative_alpha() -> None:
    with pytest.raises(ConfigurationError):
        RewardMix(-0.1)


@pytest.mark.parametrize(
    ["family", "kind", "expected"],
    [
        pytest.param("impala", EnvKind.DOORKEY, 0.0025, id="impala_grid"),
        pytest.param("impala", EnvKind.CRAFTWORLD, 0.005, id="impala_craft"),
        pytest.param(
            "dreamer-like", EnvKind.UNLOCK, 0.0025, id="dreamer_grid"
        ),
        pytest.param(
            "dreamer-like", EnvKind.CRAFTWORLD, 0.001, id="dreamer_craft"
        ),
    ],
)
def test_default_alpha(family: str, kind: EnvKind, expected: float) -> None:
    assert default_alpha(family, kind) == expected
    assert ALPHA_PRESETS[(family, kind.family)] == expected


def test_default_alpha_unknown_family() -> None:
    with pytest.raises(ConfigurationError):
        default_alpha("muzero", EnvKind.DOORKEY)


def test_snapshot_round_trip() -> None:
    store = CountStore()
    rng = np.random.default_rng(5)
    for s, c in [(1, 2), (1, 3), (4, 2)]:
        store.observe_and_reward(s, c)
    rng.random()
    data = json.loads(json.dumps(store.snapshot(rng)))
    restored, restored_rng = CountStore.from_snapshot(data)
    assert restored.state_counts == {1: 2, 4: 1}
    assert restored.change_counts == {2: 2, 3: 1}
    assert restored_rng is not None
    assert restored_rng.random() == rng.random()
    assert restored.observe_and_reward(1, 2) == store.observe_and_reward(1, 2)


def test_tracker(doorkey_obs: list[Observation]) -> None:
    tracker = NoveltyTracker(
        CountStore(reset_probability=0.0), np.random.default_rng(0)
    )
    first, second = doorkey_obs[:2]
    assert tracker.step(first, second) == (0.5, False)
    assert tracker.step(first, second) == (0.25, False)
    assert tracker.snapshot()["rng_state"] is not None


def test_copy_is_independent() -> None:
    store = CountStore(reset_probability=0.0)
    store.observe_and_reward(1, 2)
    copy = store.copy()
    copy.observe_and_reward(1, 2)
    assert store.state_counts == {1: 1}
    assert copy.state_counts == {1: 2}
    assert copy.reset_probability == 0.0
