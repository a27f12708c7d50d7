from argparse import ArgumentParser
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from cbetbench.bench.config import Algorithm
from cbetbench.bench.errors import (
    CollectionError,
    ConfigurationError,
    TrainingError,
)
from cbetbench.bench.harness import run

from ._options import add_config_arguments, load_config


class Command(BaseCommand):
    help = "Trains tabula rasa agents for every configured seed"

    def add_arguments(self, parser: ArgumentParser) -> None:
        add_config_arguments(parser)
        parser.add_argument(
            "-s",
            "--seed-override",
            dest="seeds",
            metavar="seed",
            type=int,
            action="append",
            help="Run only these seeds (repeatable)",
        )

    def handle(self, *args: Any, **options: Any) -> None:
        overrides: dict[str, Any] = {}
        if seeds := options.get("seeds"):
            overrides["seeds"] = seeds
        config = load_config(options, **overrides)
        if config.algorithm.is_transfer:
            raise CommandError(
                f"{config.algorithm.value} is a transfer algorithm;"
                " use the transfer command"
            )
        try:
            result = run(config)
        except (TrainingError, CollectionError) as e:
            raise CommandError(str(e)) from e
        except ConfigurationError as e:
            raise CommandError("; ".join(e.messages)) from e
        for path in result.metrics_paths:
            self.stdout.write(f"Wrote {path}")
        self.stdout.write(
            self.style.SUCCESS(f"Wrote aggregate {result.aggregate_path}")
        )
        if config.algorithm == Algorithm.BASELINE_AC:
            self.stdout.write("Trained without intrinsic reward")
