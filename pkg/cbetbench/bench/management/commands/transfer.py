from argparse import ArgumentParser
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from cbetbench.bench.config import Algorithm
from cbetbench.bench.errors import (
    CheckpointError,
    CollectionError,
    ConfigurationError,
    TrainingError,
)
from cbetbench.bench.harness import run
from cbetbench.bench.transfer import TransferMode, audit_phase_purity

from ._options import add_config_arguments, load_config

_ALGORITHMS = {
    TransferMode.MODEL_FREE.value: Algorithm.CBET_TRANSFER_MODEL_FREE,
    TransferMode.WORLD_MODEL.value: Algorithm.CBET_TRANSFER_WORLD_MODEL,
}


class Command(BaseCommand):
    help = "Pre-trains an explorer and fine-tunes it on the task environment"

    def add_arguments(self, parser: ArgumentParser) -> None:
        add_config_arguments(parser)
        parser.add_argument(
            "-m", "--mode", choices=sorted(_ALGORITHMS), default=None
        )

    def handle(self, *args: Any, **options: Any) -> None:
        overrides: dict[str, Any] = {}
        if mode := options.get("mode"):
            overrides["algorithm"] = _ALGORITHMS[mode]
        config = load_config(options, **overrides)
        if not config.algorithm.is_transfer:
            config = load_config(
                options, algorithm=Algorithm.CBET_TRANSFER_MODEL_FREE
            )
        try:
            result = run(config)
        except (
            CheckpointError,
            CollectionError,
            ConfigurationError,
            TrainingError,
        ) as e:
            raise CommandError(str(e)) from e
        clean = True
        for seed in result.seeds:
            self.stdout.write(f"Wrote {seed.artifacts['transfer']}")
            if events := seed.artifacts.get("events"):
                if violations := audit_phase_purity(events):
                    clean = False
                    self.stdout.write(
                        self.style.ERROR(
                            f"Seed {seed.seed}: {len(violations)} events mix"
                            " training signals across phases"
                        )
                    )
        if not clean:
            raise CommandError("Phase purity audit failed")
        self.stdout.write(
            self.style.SUCCESS(f"Wrote aggregate {result.aggregate_path}")
        )
