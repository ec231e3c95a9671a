"""Flat ``key=value`` parameter files, one per filter.

The files use dotenv syntax and are read with django-environ into a private
mapping, so reading one never touches ``os.environ``.
"""

import logging
from dataclasses import fields
from pathlib import Path
from typing import Tuple

import environ
import numpy as np

from apps.core.exceptions import ConfigurationError, CorruptParameterFileError, MissingInputError

from .tuning import get_mapping

logger = logging.getLogger(__name__)

KIND_KEY = "filter"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    # positional notation; environ's float cast drops exponent markers
    return np.format_float_positional(float(value), trim="0")


def write_params(path: Path, kind: str, params) -> Path:
    path = Path(path)
    lines = [f"{KIND_KEY}={kind}"]
    lines += [f"{f.name}={_format(getattr(params, f.name))}" for f in fields(params)]
    path.write_text("\n".join(lines) + "\n")
    logger.debug("Wrote %s parameters to %s", kind, path)
    return path


def _load_env(path: Path) -> environ.Env:
    reader = type("ParamsFileEnv", (environ.Env,), {"ENVIRON": {}})
    try:
        reader.read_env(str(path), overwrite=True, parse_comments=True)
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptParameterFileError(f"{path}: {exc}") from exc
    return reader()


def read_params(path: Path, expected_kind: str = None) -> Tuple[str, object]:
    """Parse a parameter file into ``(kind, params)``."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Filter parameter file not found: {path}")

    env = _load_env(path)
    kind = env.str(KIND_KEY, default="").strip() or expected_kind
    if kind is None:
        raise CorruptParameterFileError(f"{path}: missing '{KIND_KEY}=' line")
    if expected_kind is not None and kind != expected_kind:
        raise CorruptParameterFileError(f"{path} holds {kind} parameters, expected {expected_kind}")
    try:
        mapping = get_mapping(kind)
    except ConfigurationError as exc:
        raise CorruptParameterFileError(f"{path}: {exc}") from None

    params_class = mapping.params_class
    known = {f.name: f.type for f in fields(params_class)}
    keys = set(env.ENVIRON) - {KIND_KEY}
    unknown = keys - set(known)
    if unknown:
        raise CorruptParameterFileError(f"{path}: unknown keys {', '.join(sorted(unknown))}")

    parsed = {}
    for key in sorted(keys):
        try:
            parsed[key] = env.bool(key) if known[key] in (bool, "bool") else env.float(key)
        except ValueError:
            raise CorruptParameterFileError(f"{path}: {key} has an unreadable value {env.str(key)!r}") from None
    if kind == "adaptive":
        parsed["adaptive"] = True
    try:
        return kind, params_class(**parsed)
    except ConfigurationError as exc:
        raise CorruptParameterFileError(f"{path}: {exc}") from exc
