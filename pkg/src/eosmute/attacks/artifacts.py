"""Snippet artifact files: raw little-endian float32 samples + JSON sidecar."""
import logging
from pathlib import Path
from typing import Tuple, Union

from ..errors import ConfigurationError
from ..schema.attack import AttackSnippet, IterationRecord, TrainConfig
from ..schema.audio import SnippetParams
from ..schema.harness import Provenance
from ..utils.file_utils import RAW_SUFFIX, canonical_hash, file_digest, read_raw_samples, write_raw_samples

logger = logging.getLogger(__name__)


def save_snippet(snippet: AttackSnippet, path: Union[str, Path]) -> Tuple[Path, str]:
    """Returns (path of the .f32 file, its sha256)"""
    return write_raw_samples(path, snippet.samples, snippet.metadata())


def load_snippet(path: Union[str, Path]) -> AttackSnippet:
    try:
        samples, meta = read_raw_samples(path)
    except FileNotFoundError as e:
        raise ConfigurationError(f"snippet artifact {path} not found") from e

    try:
        return AttackSnippet(
            samples=samples,
            params=SnippetParams(
                epsilon=meta["epsilon"],
                length_seconds=meta["length_seconds"],
                position_seconds=meta["position_seconds"],
            ),
            sample_rate=meta.get("sample_rate", 16000),
            objective=meta.get("objective"),
            delta_horizon=meta.get("delta_horizon"),
            trained_on=meta.get("model_identity"),
            seed=meta.get("seed"),
            config=TrainConfig(**meta["config"]) if meta.get("config") else None,
            history=[IterationRecord(**h) for h in meta.get("history", [])],
        )
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"snippet artifact {path} has an invalid sidecar: {e}") from e


def snippet_provenance(path: Union[str, Path], snippet: AttackSnippet) -> Provenance:
    """Provenance for a snippet loaded from disk: sha256 of its .f32 file plus a hash of what produced it"""
    raw = Path(path).with_suffix(RAW_SUFFIX)
    origin = {
        "model": snippet.trained_on,
        "params": snippet.params.model_dump(),
        "config": snippet.config.model_dump() if snippet.config else None,
        "objective": snippet.objective,
    }
    return Provenance(seed=snippet.seed, config_hash=canonical_hash(origin),
                      snippet_file=str(raw), snippet_digest=file_digest(raw))
