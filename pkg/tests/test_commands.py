import json
from io import StringIO
from pathlib import Path

import pytest
from django.core.management import call_command, get_commands
from django.core.management.base import CommandError

BASE_CONFIG = """
name = cli
env_kind = unlock
seeds = 1, 2
step_budget = 200
eval_every = 100
eval_episodes = 1
n_actors = 2
unroll_length = 10
feature_width = 8
record_wall_time = false
"""


def write_config(tmp_path: Path, extra: str = "") -> Path:
    path = tmp_path / "cli.conf"
    path.write_text(BASE_CONFIG + extra)
    return path


def command(*args: str) -> str:
    out = StringIO()
    call_command(*args, stdout=out)
    return out.getvalue()


def test_train(tmp_path: Path) -> None:
    config = write_config(tmp_path)
    output = command(
        "train", "-c", str(config), "-o", str(tmp_path / "out"), "-s", "5"
    )
    assert "Wrote aggregate" in output
    run_dir = tmp_path / "out" / "cli"
    assert (run_dir / "seed_5" / "metrics.csv").exists()
    assert not (run_dir / "seed_1").exists()


def test_train_baseline(tmp_path: Path) -> None:
    config = write_config(tmp_path, "algorithm = baseline_ac\n")
    output = command("train", "-c", str(config))
    assert "without intrinsic reward" in output


def test_train_resume(tmp_path: Path) -> None:
    config = write_config(tmp_path, "seeds = 1\n")
    first = tmp_path / "first"
    command("train", "-c", str(config), "-o", str(first))
    output = command(
        "train",
        "-c",
        str(config),
        "-o",
        str(tmp_path / "second"),
        "--resume-from",
        str(first / "cli"),
    )
    assert "Wrote aggregate" in output
    with pytest.raises(CommandError, match="Cannot resume counts"):
        command(
            "train",
            "-c",
            str(config),
            "--resume-from",
            str(tmp_path / "missing"),
        )


def test_grid_search_command_name() -> None:
    assert "grid-search" in get_commands()
    assert "_grid_search" not in get_commands()


@pytest.mark.parametrize(
    ["extra", "fragment"],
    [
        pytest.param("colour = red\n", "Invalid config", id="unknown_key"),
        pytest.param(
            "algorithm = cbet_transfer_model_free\n",
            "transfer command",
            id="transfer_algorithm",
        ),
    ],
)
def test_train_rejects(tmp_path: Path, extra: str, fragment: str) -> None:
    config = write_config(tmp_path, extra)
    with pytest.raises(CommandError, match=fragment):
        command("train", "-c", str(config))


@pytest.mark.parametrize("mode", ["model_free", "world_model"])
def test_transfer(tmp_path: Path, mode: str) -> None:
    config = write_config(tmp_path, "pretrain_steps = 100\n")
    output = command(
        "transfer", "-c", str(config), "-m", mode, "-o", str(tmp_path)
    )
    assert "Wrote aggregate" in output
    manifest = json.loads(
        (tmp_path / "cli" / "seed_1" / "transfer.json").read_text()
    )
    assert manifest["mode"] == mode
    assert manifest["pretrain_steps"] == 100


def test_grid_search(tmp_path: Path) -> None:
    config = write_config(tmp_path)
    output = command(
        "grid-search",
        "-c",
        str(config),
        "-o",
        str(tmp_path),
        "--alphas",
        "0.001,0.005",
        "--repeats",
        "1",
    )
    assert "Best alpha" in output
    assert (tmp_path / "cli" / "grid_search.csv").exists()


def test_eval_and_replay(tmp_path: Path) -> None:
    config = write_config(tmp_path)
    command("train", "-c", str(config), "-o", str(tmp_path), "-s", "3")
    trace = tmp_path / "trace.json"
    output = command(
        "eval",
        "--checkpoint",
        str(tmp_path / "cli" / "seed_3" / "agent.ckpt"),
        "--env",
        "unlock",
        "--episodes",
        "2",
        "--trace-out",
        str(trace),
    )
    assert "Episode 2" in output
    assert "Mean return" in output
    assert "Replay matches" in command("replay", "--trace", str(trace))


def test_eval_combined(tmp_path: Path) -> None:
    config = write_config(tmp_path, "pretrain_steps = 100\n")
    command("transfer", "-c", str(config), "-o", str(tmp_path))
    seed_dir = tmp_path / "cli" / "seed_2"
    output = command(
        "eval",
        "--checkpoint",
        str(seed_dir / "extrinsic.ckpt"),
        "--intrinsic-checkpoint",
        str(seed_dir / "intrinsic.ckpt"),
        "--env",
        "unlock",
        "--episodes",
        "1",
    )
    assert "Mean return" in output


def test_eval_missing_checkpoint(tmp_path: Path) -> None:
    with pytest.raises(CommandError, match="Cannot read checkpoint"):
        command(
            "eval",
            "--checkpoint",
            str(tmp_path / "missing.ckpt"),
            "--env",
            "doorkey",
        )


def test_replay_unreadable(tmp_path: Path) -> None:
    trace = tmp_path / "trace.json"
    trace.write_text("{}")
    with pytest.raises(CommandError, match="Unreadable trace"):
        command("replay", "--trace", str(trace))
