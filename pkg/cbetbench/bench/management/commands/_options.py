from argparse import ArgumentParser
from pathlib import Path
from typing import Any

from django.core.management.base import CommandError

from cbetbench.bench.config import ExperimentConfig
from cbetbench.bench.errors import ConfigurationError


def add_config_arguments(parser: ArgumentParser) -> None:
    parser.add_argument("-c", "--config", type=Path, required=True)
    parser.add_argument(
        "-o",
        "--output-dir",
        dest="output_dir",
        type=Path,
        help="Directory for run outputs (default: CBET_OUTPUT_DIR)",
    )
    parser.add_argument(
        "--resume-from",
        dest="resume_from",
        type=Path,
        help="Earlier run directory whose count snapshots to continue",
    )


def load_config(options: dict[str, Any], **overrides: Any) -> ExperimentConfig:
    if options.get("output_dir"):
        overrides["output_dir"] = options["output_dir"]
    if options.get("resume_from"):
        overrides["resume_from"] = options["resume_from"]
    try:
        return ExperimentConfig.from_file(options["config"], **overrides)
    except ConfigurationError as e:
        raise CommandError(
            f"Invalid config {options['config']}: {'; '.join(e.messages)}"
        ) from e
