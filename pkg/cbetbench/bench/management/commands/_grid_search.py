from argparse import ArgumentParser
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from cbetbench.bench.errors import ConfigurationError
from cbetbench.bench.harness import grid_search
from cbetbench.bench.novelty import ALPHA_CANDIDATES

from ._options import add_config_arguments, load_config


def _alphas(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v.strip()]


class Command(BaseCommand):
    help = "Searches the intrinsic reward strength alpha"

    def add_arguments(self, parser: ArgumentParser) -> None:
        add_config_arguments(parser)
        parser.add_argument(
            "-a",
            "--alphas",
            type=_alphas,
            default=list(ALPHA_CANDIDATES),
            help="Comma separated candidates",
        )
        parser.add_argument("-r", "--repeats", type=int, default=None)

    def handle(self, *args: Any, **options: Any) -> None:
        config = load_config(options)
        try:
            table = grid_search(config, options["alphas"], options["repeats"])
        except ConfigurationError as e:
            raise CommandError("; ".join(e.messages)) from e
        for entry in table:
            se = entry["se_final_rolling_return"]
            self.stdout.write(
                f"{entry['rank']:>3}  alpha={entry['alpha']:<8g}"
                f" return={entry['final_rolling_return']:.4f}"
                + ("" if se is None else f" +/- {se:.4f}")
            )
        self.stdout.write(
            self.style.SUCCESS(f"Best alpha: {table[0]['alpha']:g}")
        )
