from argparse import ArgumentParser
from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from cbetbench.bench.agents import LogitPolicy, StreamPolicy, load_checkpoint
from cbetbench.bench.errors import CheckpointError, ConfigurationError
from cbetbench.bench.gridworlds import EnvKind, EnvSpec, Replay
from cbetbench.bench.metrics import evaluate, standard_error
from cbetbench.bench.transfer import CombinedPolicy, TransferMode


class Command(BaseCommand):
    help = "Evaluates a checkpoint on extrinsic reward only"

    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--checkpoint", type=Path, required=True)
        parser.add_argument(
            "--env", choices=[k.value for k in EnvKind], required=True
        )
        parser.add_argument("-n", "--episodes", type=int, default=8)
        parser.add_argument("-s", "--seed", type=int, default=0)
        parser.add_argument("--layout-seed", type=int, default=0)
        parser.add_argument("--fixed-layout", action="store_true")
        parser.add_argument(
            "--intrinsic-checkpoint",
            type=Path,
            help="Frozen intrinsic stream to combine with the checkpoint",
        )
        parser.add_argument(
            "--mode",
            choices=[m.value for m in TransferMode],
            default=TransferMode.MODEL_FREE.value,
        )
        parser.add_argument(
            "--combine-scale", type=float, choices=[1.0, 0.5], default=1.0
        )
        parser.add_argument(
            "--trace-out",
            type=Path,
            help="Write the first episode as a replay document",
        )

    def handle(self, *args: Any, **options: Any) -> None:
        if options["episodes"] < 1:
            raise CommandError("--episodes must be positive")
        if options["seed"] < 0 or options["layout_seed"] < 0:
            raise CommandError("Seeds must be nonnegative")
        try:
            policy = self.load_policy(options)
        except (CheckpointError, ConfigurationError) as e:
            raise CommandError(str(e)) from e
        spec = EnvSpec(
            EnvKind(options["env"]),
            options["layout_seed"],
            options["fixed_layout"],
        )
        traces: list[Replay] = []
        returns = evaluate(
            policy, spec, options["episodes"], options["seed"], traces
        )
        for number, value in enumerate(returns, start=1):
            self.stdout.write(f"Episode {number}: return {value:g}")
        if trace_out := options.get("trace_out"):
            trace_out.write_text(traces[0].to_json())
            self.stdout.write(f"Wrote {trace_out}")
        se = standard_error(returns)
        summary = f"Mean return {sum(returns) / len(returns):.4f}"
        if se is not None:
            summary += f" +/- {se:.4f}"
        self.stdout.write(self.style.SUCCESS(summary))

    def load_policy(self, options: dict[str, Any]) -> LogitPolicy:
        stream = load_checkpoint(options["checkpoint"])
        if not (intrinsic_path := options.get("intrinsic_checkpoint")):
            return StreamPolicy(stream)
        return CombinedPolicy(
            load_checkpoint(intrinsic_path),
            stream,
            TransferMode(options["mode"]),
            options["combine_scale"],
        )
