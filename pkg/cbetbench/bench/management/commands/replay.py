import json
from argparse import ArgumentParser
from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from cbetbench.bench.errors import ConfigurationError, UsageError
from cbetbench.bench.gridworlds import Replay


class Command(BaseCommand):
    help = "Re-executes a recorded episode and checks its rewards"

    def add_arguments(self, parser: ArgumentParser) -> None:
        parser.add_argument("--trace", type=Path, required=True)

    def handle(self, *args: Any, **options: Any) -> None:
        try:
            replay = Replay.from_json(options["trace"].read_text())
            results = replay.run()
        except (OSError, KeyError, ValueError) as e:
            raise CommandError(f"Unreadable trace: {e}") from e
        except (ConfigurationError, UsageError) as e:
            raise CommandError(str(e)) from e
        total = sum(r.extrinsic_reward for r in results)
        self.stdout.write(
            f"{replay.kind.value}: {len(results)} steps, return {total:g}"
        )
        if replay.verify():
            self.stdout.write(self.style.SUCCESS("Replay matches the trace"))
        else:
            raise CommandError("Replay diverged from the recorded rewards")
        if options["verbosity"] > 1 and replay.layout is not None:
            self.stdout.write(json.dumps(replay.layout))
