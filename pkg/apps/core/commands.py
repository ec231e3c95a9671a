"""Shared base for the pipeline management commands.

Option precedence is command-line flag, then the command's table in the
``--config`` TOML file, then ``defaults``. Every run gets a ``PipelineRun``
row and a ``provenance.toml`` beside its outputs.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import toml
import torch
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from django.utils import timezone

from .exceptions import (
    ConfigurationError,
    MissingInputError,
    NeuroAttitudeError,
)
from .models import PipelineRun
from .provenance import PROVENANCE_FILENAME, config_hash, version_string, write_provenance

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42

DJANGO_OPTIONS = {
    "verbosity",
    "settings",
    "pythonpath",
    "traceback",
    "no_color",
    "force_color",
    "skip_checks",
    "config",
}


def load_command_config(path: Path, command: str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Config file not found: {path}")
    try:
        data = toml.load(path)
    except toml.TomlDecodeError as exc:
        raise ConfigurationError(f"Invalid TOML in {path}: {exc}") from exc
    table = data.get(command, {})
    if not isinstance(table, dict):
        raise ConfigurationError(f"[{command}] in {path} must be a table")
    return {key.replace("-", "_"): value for key, value in table.items()}


def configure_threads() -> int:
    threads = max(1, int(settings.NEURO_ATTITUDE_THREADS))
    torch.set_num_threads(threads)
    return threads


class PipelineCommand(BaseCommand):
    command_name = ""
    default_out = "runs"
    defaults: Dict[str, Any] = {}
    input_options: Tuple[str, ...] = ()

    def add_arguments(self, parser):
        parser.add_argument("--seed", type=int, default=None, help="Root random seed (default 42)")
        parser.add_argument("--config", type=Path, default=None, help="TOML file with a table per command")
        parser.add_argument("--out", type=Path, default=None, help="Output directory")
        parser.add_argument(
            "--force", action="store_true", default=None, help="Overwrite a non-empty output directory"
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def run_pipeline(self, opts: Dict[str, Any], out_dir: Path) -> Tuple[List[Path], Dict[str, Any]]:
        raise NotImplementedError

    def resolve_options(self, options: Dict[str, Any]) -> Dict[str, Any]:
        resolved: Dict[str, Any] = {
            "seed": DEFAULT_SEED,
            "force": False,
            "out": self.default_out,
            **self.defaults,
        }
        if options.get("config"):
            file_values = load_command_config(options["config"], self.command_name)
            unknown = set(file_values) - set(options) - set(self.defaults)
            if unknown:
                raise ConfigurationError(
                    f"Unknown keys in [{self.command_name}]: {', '.join(sorted(unknown))}"
                )
            resolved.update(file_values)
        for key, value in options.items():
            if key in DJANGO_OPTIONS or value is None:
                continue
            resolved[key] = value
        seed = resolved["seed"]
        if not isinstance(seed, int) or seed < 0:
            raise ConfigurationError(f"--seed must be a non-negative integer, got {seed!r}")
        resolved["out"] = Path(resolved["out"])
        return resolved

    def check_inputs(self, opts: Dict[str, Any]):
        for key in self.input_options:
            value = opts.get(key)
            if value is None:
                raise ConfigurationError(f"--{key.replace('_', '-')} is required")
            if not Path(value).exists():
                raise MissingInputError(f"Input not found for --{key.replace('_', '-')}: {value}")

    def prepare_out(self, opts: Dict[str, Any]) -> Path:
        out_dir = Path(opts["out"])
        if out_dir.exists() and not out_dir.is_dir():
            raise ConfigurationError(f"--out must be a directory: {out_dir}")
        if out_dir.exists() and any(out_dir.iterdir()) and not opts["force"]:
            raise ConfigurationError(
                f"Output directory {out_dir} is not empty; pass --force to overwrite"
            )
        out_dir.mkdir(parents=True, exist_ok=True)
        return out_dir

    def start_run(self, opts: Dict[str, Any]) -> Optional[PipelineRun]:
        try:
            return PipelineRun.objects.create(
                command=self.command_name,
                status="processing",
                seed=opts["seed"],
                options={k: str(v) if isinstance(v, Path) else v for k, v in opts.items()},
                config_hash=config_hash(opts),
                version=version_string(),
                started_at=timezone.now(),
            )
        except DatabaseError as exc:
            logger.warning("Could not record %s run: %s", self.command_name, exc)
            return None

    def finish_run(self, run: Optional[PipelineRun], status: str, outputs=None, results=None, error=""):
        if run is None:
            return
        run.status = status
        run.completed_at = timezone.now()
        run.outputs = [str(p) for p in outputs or []]
        run.results = results or {}
        run.error_message = error
        try:
            run.save()
        except DatabaseError as exc:
            logger.warning("Could not update run %s: %s", run.id, exc)

    def validate_outputs(self, outputs: List[Path]):
        for path in outputs:
            path = Path(path)
            if not path.exists() or path.stat().st_size == 0:
                raise NeuroAttitudeError(f"Output missing or empty: {path}")
            try:
                if path.suffix == ".csv":
                    pd.read_csv(path, nrows=1)
                elif path.suffix == ".toml":
                    toml.load(path)
                elif path.suffix == ".npz":
                    with np.load(path, allow_pickle=False) as archive:
                        if not archive.files:
                            raise ValueError("empty archive")
            except (ValueError, OSError, toml.TomlDecodeError) as exc:
                raise NeuroAttitudeError(f"Output failed validation: {path} ({exc})") from exc

    def handle(self, *args, **options):
        try:
            opts = self.resolve_options(options)
            self.check_inputs(opts)
            out_dir = self.prepare_out(opts)
        except NeuroAttitudeError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

        threads = configure_threads()
        logger.info(
            "Starting %s (seed=%s, threads=%s, out=%s)", self.command_name, opts["seed"], threads, out_dir
        )
        run = self.start_run(opts)
        try:
            outputs, results = self.run_pipeline(opts, out_dir)
            self.validate_outputs(outputs)
            provenance = write_provenance(
                out_dir, self.command_name, opts["seed"], opts, outputs, results
            )
        except NeuroAttitudeError as exc:
            logger.error("%s failed: %s", self.command_name, exc)
            self.finish_run(run, "failed", error=str(exc))
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except Exception as exc:
            self.finish_run(run, "failed", error=str(exc))
            raise

        outputs = [*outputs, provenance]
        self.finish_run(run, "completed", outputs, results)
        for path in outputs:
            logger.info("Wrote %s", path)
        self.stdout.write(
            self.style.SUCCESS(f"{self.command_name}: wrote {len(outputs)} files to {out_dir}")
        )


__all__ = ["PipelineCommand", "DEFAULT_SEED", "PROVENANCE_FILENAME", "load_command_config"]
