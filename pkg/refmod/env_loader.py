"""
Configuration loading for the refmod CLI.

A run config is a plain-text ``key = value`` file read with python-dotenv.
Keys are flat and routed to the section that owns them. ``REFMOD_<KEY>``
environment variables (optionally from a .env file) override the file, and
CLI flags override both. Handles development and PyInstaller bundles alike.
"""

import os
import sys
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values, load_dotenv

from refmod.config import SECTIONS, RunConfig, section_for_key
from refmod.errors import ValidationError

ENV_PREFIX = "REFMOD_"
DEFAULT_CONFIG = Path(__file__).parent / "data" / "default.conf"


def is_pyinstaller_bundle() -> bool:
    """Check if running in a PyInstaller bundle."""
    return getattr(sys, 'frozen', False)


def get_bundle_directory() -> Optional[str]:
    """Get the PyInstaller bundle directory if available."""
    if is_pyinstaller_bundle() and hasattr(sys, '_MEIPASS'):
        return sys._MEIPASS
    return None


def get_possible_env_paths() -> List[str]:
    """Get all possible paths where a .env file might be located."""
    possible_paths = [
        os.path.normpath(".env"),  # Current directory (development)
        os.path.normpath(os.path.join(os.path.dirname(__file__), "..", ".env")),  # Relative to module
    ]

    possible_paths.append(os.path.normpath(os.path.join(os.path.dirname(sys.executable), ".env")))

    bundle_dir = get_bundle_directory()
    if bundle_dir:
        possible_paths.insert(0, os.path.normpath(os.path.join(bundle_dir, ".env")))

    return possible_paths


def load_env_file() -> Optional[str]:
    """Load the first .env file found; returns its path or None."""
    for env_path in get_possible_env_paths():
        if os.path.exists(env_path):
            load_dotenv(env_path)
            return env_path
    return None


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """``REFMOD_<KEY>`` variables as lower-case flat config keys."""
    environ = os.environ if environ is None else environ
    return {
        key[len(ENV_PREFIX):].lower(): value
        for key, value in environ.items()
        if key.startswith(ENV_PREFIX) and value is not None
    }


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Flat key/value pairs of a config file; keys without a value are rejected."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    values = dotenv_values(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#") and "=" not in line:
            raise ValidationError(f"expected 'key = value', found '{line}'", line=lineno)
    return {key.strip().lower(): value for key, value in values.items() if value is not None}


def build_run_config(flat: Mapping[str, object]) -> RunConfig:
    """Route flat keys to their sections and validate with pydantic."""
    nested: Dict[str, Dict[str, object]] = {name: {} for name in SECTIONS}
    top: Dict[str, object] = {}
    unknown = []
    for key, value in flat.items():
        if value is None:
            continue
        section = section_for_key(key)
        if section is not None:
            nested[section][key] = value
        elif key in RunConfig.model_fields:
            top[key] = value
        else:
            unknown.append(key)
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return RunConfig(**top, **{name: values for name, values in nested.items() if values})


def read_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, object]] = None,
                    environ: Optional[Mapping[str, str]] = None) -> Tuple[RunConfig, Dict[str, str]]:
    """
    Effective run configuration.

    Precedence, lowest first: the bundled defaults, the config file,
    ``REFMOD_*`` environment variables, explicit overrides (CLI flags).

    Returns:
        (config, source of every key that was set)
    """
    flat: Dict[str, object] = {}
    sources: Dict[str, str] = {}

    def merge(values: Mapping[str, object], source: str):
        for key, value in values.items():
            if value is None:
                continue
            flat[key] = value
            sources[key] = source

    if DEFAULT_CONFIG.exists():
        merge(read_config_file(DEFAULT_CONFIG), "defaults")
    if path is not None:
        merge(read_config_file(path), str(path))
    merge(env_overrides(environ), "environment")
    merge(overrides or {}, "command line")
    return build_run_config(flat), sources


def get_environment_debug_info(config_path: Optional[str] = None) -> dict:
    """Get debug information about configuration loading."""
    info = {
        'current_working_directory': os.getcwd(),
        'executable_path': sys.executable,
        'module_path': __file__,
        'is_bundle': is_pyinstaller_bundle(),
        'bundle_directory': get_bundle_directory(),
        'possible_env_paths': get_possible_env_paths(),
        'env_file_exists': {},
        'default_config': str(DEFAULT_CONFIG),
        'config_path': config_path,
        'env_overrides': env_overrides(),
    }
    for path in info['possible_env_paths']:
        info['env_file_exists'][path] = os.path.exists(path)
    return info


def debug_config(config: RunConfig, sources: Mapping[str, str], config_path: Optional[str] = None):
    """
    Display where configuration came from and the effective values.

    Args:
        config: the effective run configuration
        sources: key -> origin mapping returned by ``read_run_config``
        config_path: the --config argument, if any
    """
    import click

    click.echo("🔍 Debugging configuration loading...")
    debug_info = get_environment_debug_info(config_path)

    click.echo(f"Current working directory: {debug_info['current_working_directory']}")
    click.echo(f"Executable path: {debug_info['executable_path']}")
    click.echo(f"Module path: {debug_info['module_path']}")

    if debug_info['is_bundle']:
        click.echo("✅ Running in PyInstaller bundle")
        if debug_info['bundle_directory']:
            click.echo(f"Bundle directory: {debug_info['bundle_directory']}")
    else:
        click.echo("📦 Running in development mode")

    click.echo("\n🔍 Checking for .env file:")
    for path in debug_info['possible_env_paths']:
        exists = debug_info['env_file_exists'][path]
        click.echo(f"  {path}: {'✅' if exists else '❌'}")

    click.echo(f"\n📄 Defaults: {debug_info['default_config']}")
    click.echo(f"📄 Config file: {config_path or '❌ Not given'}")
    for key, value in sorted(debug_info['env_overrides'].items()):
        click.echo(f"🔑 {ENV_PREFIX}{key.upper()} = {value}")

    click.echo("\n⚙️ Effective configuration:")
    dumped = config.model_dump(mode="json")
    for key, value in dumped.items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                click.echo(f"  {sub_key} = {sub_value}  [{sources.get(sub_key, 'default')}]")
        else:
            click.echo(f"  {key} = {value}  [{sources.get(key, 'default')}]")
