import hashlib
import json
import logging
import subprocess
from pathlib import Path
from typing import Any, Dict, List, Optional

import toml
from django.conf import settings

logger = logging.getLogger(__name__)

PROVENANCE_FILENAME = "provenance.toml"


def git_short_hash() -> Optional[str]:
    try:
        completed = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=settings.BASE_DIR,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return completed.stdout.strip() or None


def version_string() -> str:
    short_hash = git_short_hash()
    if short_hash:
        return f"{settings.VERSION}+g{short_hash}"
    return settings.VERSION


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def config_hash(options: Dict[str, Any]) -> str:
    payload = json.dumps(_jsonable(options), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_provenance(
    out_dir: Path,
    command: str,
    seed: int,
    options: Dict[str, Any],
    outputs: List[Path],
    results: Optional[Dict[str, Any]] = None,
) -> Path:
    record = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash(options),
        "version": version_string(),
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
        "options": _jsonable(options),
    }
    if results:
        record["results"] = _jsonable(results)
    path = Path(out_dir) / PROVENANCE_FILENAME
    with open(path, "w", encoding="utf-8") as handle:
        toml.dump(record, handle)
    logger.debug("Wrote provenance record %s", path)
    return path


def read_provenance(out_dir: Path) -> Dict[str, Any]:
    return toml.load(Path(out_dir) / PROVENANCE_FILENAME)
