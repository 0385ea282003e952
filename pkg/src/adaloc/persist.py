"""On-disk formats: JSON manifests plus raw little-endian float32 blobs.

Every blob is row-major ``<f4`` with its shape recorded only in the
manifest, next to a SHA-256 digest checked on load. Files are written to a
temporary name and renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DigestError, FormatVersionError

FORMAT_VERSION = "1.0"
BLOB_DTYPE = "<f4"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_manifest(directory: Path, manifest: dict) -> None:
    atomic_write_text(Path(directory) / "manifest.json", dumps(manifest))


def read_manifest(directory: Path, kind: str | None = None) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"missing manifest: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt manifest {path}: {exc}") from exc
    check_version(manifest.get("format_version"), path)
    if kind is not None and manifest.get("kind") != kind:
        raise ConfigError(f"{path} holds a {manifest.get('kind')!r}, expected {kind!r}")
    return manifest


def check_version(version, where) -> None:
    major = str(version).split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise FormatVersionError(
            f"{where}: format version {version!r} is not supported (expected {FORMAT_VERSION}.x); "
            "regenerate or migrate the file with a matching adaloc release")


def blob_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=BLOB_DTYPE).tobytes()


def write_blob(directory: Path, filename: str, array: np.ndarray) -> dict:
    """Write ``array`` as float32 and return its manifest entry."""
    data = blob_bytes(array)
    atomic_write_bytes(Path(directory) / filename, data)
    return {"file": filename, "shape": list(np.shape(array)), "dtype": BLOB_DTYPE,
            "sha256": hashlib.sha256(data).hexdigest()}


def read_blob(directory: Path, entry: dict) -> np.ndarray:
    path = Path(directory) / entry["file"]
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"missing blob {path}") from exc
    digest = hashlib.sha256(data).hexdigest()
    if digest != entry["sha256"]:
        raise DigestError(f"digest mismatch for {path}: blob is corrupt or was modified")
    shape = tuple(entry["shape"])
    if len(data) != 4 * int(np.prod(shape, dtype=np.int64)):
        raise DataError(f"{path}: size does not match shape {shape}")
    return np.frombuffer(data, dtype=entry.get("dtype", BLOB_DTYPE)).reshape(shape).astype(np.float32)


def f32_list(array) -> list:
    """JSON-safe list of float32 values (exact round trip through float64 repr)."""
    return np.asarray(array, dtype=np.float32).astype(np.float64).tolist()
