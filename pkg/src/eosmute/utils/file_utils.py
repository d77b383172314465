import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

RAW_SUFFIX = ".f32"
SIDECAR_SUFFIX = ".json"


def sidecar_path(path: PathLike) -> Path:
    """JSON sidecar that sits next to a raw sample file"""
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def samples_digest(samples: np.ndarray) -> str:
    """sha256 of the samples as raw little-endian float32, i.e. of the .f32 file"""
    return hashlib.sha256(np.asarray(samples, dtype="<f4").tobytes()).hexdigest()


def file_digest(path: PathLike, chunk_size: int = 1 << 20) -> str:
    sha256 = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            sha256.update(chunk)
    return sha256.hexdigest()


def canonical_hash(payload: Any, length: int = 16) -> str:
    """Stable hash of a JSON-serialisable payload (sorted keys)"""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:length]


def write_raw_samples(path: PathLike, samples: np.ndarray, sidecar: Dict[str, Any]) -> Tuple[Path, str]:
    """Write samples as raw little-endian float32 plus a JSON sidecar.

    Returns (path, sha256 of the raw file).
    """
    path = Path(path).with_suffix(RAW_SUFFIX)
    path.parent.mkdir(parents=True, exist_ok=True)

    raw = np.asarray(samples, dtype="<f4").tobytes()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(raw)
    os.replace(tmp, path)

    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)

    digest = hashlib.sha256(raw).hexdigest()
    logger.info(f"Samples saved: {path.name}, count: {len(raw) // 4}, hash: {digest[:12]}")
    return path, digest


def read_raw_samples(path: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Read a raw float32 file and its sidecar; samples come back as float64"""
    path = Path(path).with_suffix(RAW_SUFFIX)
    samples = np.fromfile(path, dtype="<f4").astype(np.float64)
    with open(sidecar_path(path), "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    return samples, sidecar
