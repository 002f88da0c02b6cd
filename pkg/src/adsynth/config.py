"""Run configuration loading, output-directory locking, and run manifests.

A run config is one YAML (or JSON) document with a section per subcommand.
Relative paths are resolved against the config file's directory so a config
plus its inputs is a relocatable unit. Every command writes a manifest
(config snapshot, seeds, input digests, tool version) sufficient to re-run
bit-identically in replay mode.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Mapping

import yaml

from . import __version__


class ConfigError(ValueError):
    pass


class LockHeld(RuntimeError):
    pass


def load_config(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    data["_config_dir"] = str(path.parent.resolve())
    return data


def resolve_path(config: Mapping, value: str | None, must_exist: bool = True) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    if not path.is_absolute():
        path = Path(config.get("_config_dir", ".")) / path
    if must_exist and not path.exists():
        raise ConfigError(f"configured path does not exist: {path}")
    return path


def section(config: Mapping, name: str) -> dict:
    value = config.get(name)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return value


def require(config: Mapping, section_name: str, key: str):
    sect = section(config, section_name)
    if key not in sect:
        raise ConfigError(f"config is missing {section_name}.{key}")
    return sect[key]


def sha256_file(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(
    output_dir: Path,
    command: str,
    config: Mapping,
    inputs: list[Path],
    seeds: Mapping[str, int] | None = None,
    extra: Mapping | None = None,
) -> Path:
    """Persist the reproducibility manifest for a command run.

    Deliberately timestamp-free so repeated replay runs are byte-identical.
    """
    snapshot = {k: v for k, v in config.items() if not k.startswith("_")}
    manifest = {
        "tool": "adsynth",
        "version": __version__,
        "command": command,
        "config": snapshot,
        "seeds": dict(seeds or {}),
        "input_digests": {
            str(path): sha256_file(path) for path in sorted(set(inputs), key=str) if Path(path).is_file()
        },
    }
    if extra:
        manifest["extra"] = dict(extra)
    path = output_dir / f"manifest_{command}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return path


class OutputLock:
    """Advisory lock file guarding an output directory against concurrent
    commands."""

    def __init__(self, output_dir: Path):
        self.path = Path(output_dir) / ".adsynth.lock"
        self._fd: int | None = None

    def __enter__(self) -> "OutputLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeld(f"output directory is locked by another run: {self.path}") from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc_info) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        self.path.unlink(missing_ok=True)
