"""Utility functions for gripmat."""

from __future__ import annotations

import json
import platform
from importlib import resources
from pathlib import Path
from typing import Any

import platformdirs

from .errors import ManifestError


def get_config_dir() -> Path:
    """Get the per-user configuration directory for gripmat."""
    if platform.system() == "Windows":
        # Use %LOCALAPPDATA%\gripmat on Windows
        config_dir = platformdirs.user_config_dir("gripmat", "gripmat")
    else:
        # Use ~/.config/gripmat on POSIX systems
        config_dir = platformdirs.user_config_dir("gripmat")
    return Path(config_dir)


def get_default_config_path() -> Path:
    """Get the path of the optional user settings file."""
    return get_config_dir() / "config.json"


def normalize_line_endings(text: str) -> str:
    """Normalize line endings to Unix style."""
    return text.replace("\r\n", "\n").replace("\r", "\n")


def ensure_trailing_newline(text: str) -> str:
    """Ensure text ends with exactly one newline."""
    text = text.rstrip("\n")
    return text + "\n" if text else ""


def dump_json(data: Any) -> str:
    """Serialize to stable, byte-reproducible JSON text."""
    return ensure_trailing_newline(
        json.dumps(data, indent=2, sort_keys=True, allow_nan=True),
    )


def safe_write_file(path: Path, content: str) -> None:
    """Write content to a file with LF endings, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(content)


def read_json(path: Path) -> Any:
    """Read a JSON document, reporting failures with the file location."""
    if not path.exists():
        raise ManifestError("file not found", path)
    try:
        with path.open(encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"invalid JSON: {e.msg}", path, e.lineno) from e
    except (OSError, UnicodeDecodeError) as e:
        raise ManifestError(f"cannot read file: {e}", path) from e


def shipped_names(kind: str) -> list[str]:
    """Names of the JSON documents shipped under ``gripmat/data/<kind>``."""
    folder = resources.files("gripmat") / "data" / kind
    return sorted(
        entry.name.removesuffix(".json")
        for entry in folder.iterdir()
        if entry.name.endswith(".json")
    )


def read_shipped(kind: str, name: str) -> Any:
    """Load a shipped JSON document by name (``.json`` suffix optional)."""
    name = name.removesuffix(".json")
    resource = resources.files("gripmat") / "data" / kind / f"{name}.json"
    if not resource.is_file():
        raise ManifestError(f"no shipped {kind} named '{name}'", Path(kind) / name)
    return json.loads(resource.read_text(encoding="utf-8"))
