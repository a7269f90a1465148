"""
File operations for QRobust.
Atomic writes for run artifacts, JSON helpers and content digests.
"""
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, Union

import numpy as np

from qr_errors import FileOperationError

PathLike = Union[str, Path]


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def ensure_directory(dirpath: PathLike) -> Path:
    """Create a directory (and parents) if needed and return it."""
    path = Path(dirpath)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FileOperationError(
            f"Cannot create directory {path}: {e}", file_path=str(path), operation="mkdir"
        )
    return path


def atomic_write(filepath: PathLike, writer: Callable[[str], None]) -> Path:
    """
    Run ``writer(temp_path)`` and move the result over ``filepath``.

    The destination is either the previous file or the complete new one, never
    a partial write.
    """
    path = Path(filepath)
    ensure_directory(path.parent)
    fd, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    os.close(fd)
    try:
        writer(temp_name)
        os.replace(temp_name, path)
    except Exception as e:
        if os.path.exists(temp_name):
            try:
                os.remove(temp_name)
            except OSError:
                pass
        raise FileOperationError(
            f"Failed to write {path}: {e}", file_path=str(path), operation="write"
        ) from e
    return path


def write_text(filepath: PathLike, content: str, encoding: str = "utf-8") -> Path:
    def _writer(temp_name: str) -> None:
        with open(temp_name, "w", encoding=encoding, newline="\n") as f:
            f.write(content)

    return atomic_write(filepath, _writer)


def write_json(filepath: PathLike, data: Any, encoding: str = "utf-8") -> Path:
    """
    Write JSON data atomically with stable key order.

    Args:
        filepath: Path to the file
        data: Data to serialize; numpy scalars and arrays are converted
        encoding: File encoding (default: utf-8)
    """
    content = json.dumps(data, indent=2, sort_keys=True, default=_json_default)
    return write_text(filepath, content + "\n", encoding)


def read_text(filepath: PathLike, encoding: str = "utf-8") -> str:
    path = Path(filepath)
    if not path.is_file():
        raise FileOperationError(
            f"File not found: {path}", file_path=str(path), operation="read"
        )
    try:
        return path.read_text(encoding=encoding)
    except OSError as e:
        raise FileOperationError(
            f"Cannot read {path}: {e}", file_path=str(path), operation="read"
        )


def read_json(filepath: PathLike, encoding: str = "utf-8") -> Dict[str, Any]:
    """Read a JSON document; missing or malformed files raise FileOperationError."""
    content = read_text(filepath, encoding)
    try:
        return json.loads(content)
    except json.JSONDecodeError as e:
        raise FileOperationError(
            f"Malformed JSON in {filepath}: {e}", file_path=str(filepath), operation="parse"
        )


def file_digest(filepath: PathLike, chunk_size: int = 1 << 20) -> str:
    """SHA-256 hex digest of a file's contents."""
    path = Path(filepath)
    sha = hashlib.sha256()
    try:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(chunk_size), b""):
                sha.update(chunk)
    except OSError as e:
        raise FileOperationError(
            f"Cannot digest {path}: {e}", file_path=str(path), operation="digest"
        )
    return sha.hexdigest()


def array_digest(*arrays: np.ndarray) -> str:
    """SHA-256 over the raw bytes, dtypes and shapes of numpy arrays."""
    sha = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        sha.update(str(a.dtype).encode())
        sha.update(str(a.shape).encode())
        sha.update(a.tobytes())
    return sha.hexdigest()
