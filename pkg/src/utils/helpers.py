"""
Helper utility functions
"""
import hashlib
import json
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Optional, Union

import pytz

PathLike = Union[str, Path]


def format_timestamp(dt: Optional[datetime] = None) -> str:
    """Format a UTC timestamp for manifests and reports"""
    if dt is None:
        dt = datetime.now(pytz.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def calculate_file_hash(path: PathLike, chunk_size: int = 1 << 20) -> str:
    """Calculate SHA256 hash of a file's content"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_jsonl(path: PathLike, records) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_jsonl(path: PathLike) -> list:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def format_hours(hours: float) -> str:
    """Human-readable duration, e.g. 0.25 -> '15.0 min'"""
    if hours < 1.0:
        return f"{hours * 60.0:.1f} min"
    if hours < 48.0:
        return f"{hours:.2f} h"
    return f"{hours / 24.0:.2f} d"


def to_jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    return value
