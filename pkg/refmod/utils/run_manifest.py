"""
Replay manifests written next to every CLI output.
"""

import hashlib
import platform
from importlib import metadata
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from refmod.config import RunConfig

TRACKED_PACKAGES = ("refmod", "numpy", "shapely", "networkx", "pydantic", "click", "python-dotenv")


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON dump of a run config."""
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_manifest(out_dir: Union[str, Path], command: str, config: RunConfig,
                   extra: Optional[Mapping[str, object]] = None) -> Path:
    """
    Write ``manifest.txt`` (key = value) with everything needed to replay a run.

    Args:
        out_dir: output directory of the run
        command: CLI subcommand name
        config: effective run configuration
        extra: additional entries (inputs, checkpoint paths, ...)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"command = {command}",
        f"config_sha256 = {config_hash(config)}",
        f"seed = {config.seed}",
        f"forest_seed = {config.forest.seed}",
        f"environment = {config.environment.value}",
        f"planner = {config.planner.value}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    for name, version in package_versions().items():
        lines.append(f"version_{name.replace('-', '_')} = {version}")
    lines.append(f"config = {config.model_dump_json()}")
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
