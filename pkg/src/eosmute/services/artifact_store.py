"""On-disk cache of trained snippets and pre-trained checkpoints, keyed by config hash."""
import logging
import threading
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple, Union

from ..attacks.artifacts import load_snippet, save_snippet
from ..config.settings import settings
from ..errors import ConfigurationError
from ..schema.attack import AttackSnippet
from ..utils.file_utils import RAW_SUFFIX, file_digest

logger = logging.getLogger(__name__)


class ArtifactStore:
    def __init__(self, cache_dir: Union[str, Path]):
        self.cache_dir = Path(cache_dir)
        self._lock = threading.Lock()

    @property
    def snippet_dir(self) -> Path:
        return self.cache_dir / "snippets"

    @property
    def checkpoint_dir(self) -> Path:
        return self.cache_dir / "checkpoints"

    @property
    def corpus_dir(self) -> Path:
        return self.cache_dir / "corpora"

    def snippet_path(self, key: str) -> Path:
        return self.snippet_dir / f"{key}{RAW_SUFFIX}"

    def checkpoint_path(self, key: str) -> Path:
        return self.checkpoint_dir / f"{key}.ckpt"

    def get_snippet(self, key: str) -> Optional[Tuple[AttackSnippet, Path, str]]:
        """Cached (snippet, path, sha256) or None"""
        path = self.snippet_path(key)
        if not path.is_file():
            return None
        try:
            snippet = load_snippet(path)
        except ConfigurationError as e:
            logger.warning(f"Ignoring unreadable cached snippet {path}: {e}")
            return None
        logger.info(f"Snippet cache hit: {key}")
        return snippet, path, file_digest(path)

    def put_snippet(self, key: str, snippet: AttackSnippet) -> Tuple[Path, str]:
        with self._lock:
            return save_snippet(snippet, self.snippet_path(key))

    def has_checkpoint(self, key: str) -> bool:
        return self.checkpoint_path(key).is_file()


@lru_cache
def get_artifact_store(cache_dir: Optional[str] = None) -> ArtifactStore:
    """Get the artifact store for cache_dir (default: settings.CACHE)"""
    return ArtifactStore(cache_dir or settings.CACHE)
