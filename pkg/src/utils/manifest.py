"""
Run manifests: everything needed to replay a CLI run.
"""
import json
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import scipy

from src import __version__
from src.core.exceptions import DataError, ValidationError
from src.utils.helpers import atomic_write_text, calculate_file_hash, format_timestamp, to_jsonable

PathLike = Union[str, Path]
MANIFEST_SUFFIX = ".manifest.json"


@dataclass
class RunManifest:
    argv: List[str]
    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)  # path -> sha256
    artifacts: List[str] = field(default_factory=list)
    started_at: str = field(default_factory=format_timestamp)
    wall_clock_seconds: float = 0.0
    version: str = __version__
    environment: Dict[str, str] = field(default_factory=lambda: {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    })

    def add_input(self, path: PathLike) -> None:
        path = Path(path)
        if not path.exists():
            raise DataError(f"input not found: {path}")
        files = sorted(p for p in path.iterdir() if p.is_file()) if path.is_dir() else [path]
        for f in files:
            self.inputs[str(f)] = calculate_file_hash(f)

    def add_artifact(self, path: PathLike) -> None:
        self.artifacts.append(str(path))

    def write(self, path: PathLike) -> Path:
        path = Path(path)
        atomic_write_text(path, json.dumps(to_jsonable(asdict(self)), indent=2, sort_keys=True))
        return path


def load_manifest(path: PathLike) -> RunManifest:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    try:
        return RunManifest(**data)
    except TypeError as e:
        raise ValidationError(f"malformed manifest {path}: {e}")


def manifest_path_for(out: Optional[PathLike], command: str) -> Path:
    """Manifest location for an output: `<command>.manifest.json` inside a directory, or next to a file."""
    if out is None:
        return Path.cwd() / f"{command}{MANIFEST_SUFFIX}"
    out = Path(out)
    if out.is_dir() or not out.suffix:
        return out / f"{command}{MANIFEST_SUFFIX}"
    return out.with_name(out.name + MANIFEST_SUFFIX)
