import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import ValidationError

from ..audio.core import load_waveform
from ..errors import ConfigurationError, ManifestError
from ..schema.audio import DEFAULT_SAMPLE_RATE
from ..schema.harness import SPLITS, DatasetManifest, Example, ManifestEntry
from ..utils.file_utils import canonical_hash, samples_digest

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("audio", "text", "split")


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Parse a JSON-lines manifest {audio, text, split}; relative audio paths resolve next to it"""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} not found", [{"line": None, "reason": f"missing file {path}"}])

    root = path.parent.resolve()
    entries: List[ManifestEntry] = []
    offending: List[Dict[str, Any]] = []

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                offending.append({"line": lineno, "reason": f"invalid JSON ({e.msg})"})
                continue
            if not isinstance(raw, dict):
                offending.append({"line": lineno, "reason": "entry is not an object"})
                continue

            missing = [k for k in REQUIRED_FIELDS if k not in raw]
            if missing:
                offending.append({"line": lineno, "reason": f"missing field(s) {', '.join(missing)}"})
                continue
            try:
                entry = ManifestEntry(**{k: raw[k] for k in REQUIRED_FIELDS})
            except ValidationError as e:
                offending.append({"line": lineno, "reason": f"invalid entry: {e.errors()[0]['msg']}"})
                continue

            audio_path = Path(entry.audio)
            if not audio_path.is_absolute():
                audio_path = root / audio_path
            if not audio_path.is_file():
                offending.append({"line": lineno, "reason": f"audio file not found: {audio_path}",
                                  "path": str(audio_path)})
                continue
            entries.append(entry)

    if offending:
        raise ManifestError(f"invalid manifest {path}", offending)

    manifest = DatasetManifest(entries=entries, root=str(root))
    logger.info(f"Loaded manifest {path}: {manifest.split_counts()}")
    return manifest


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in manifest.entries:
            f.write(json.dumps(entry.model_dump()) + "\n")
    return path


def load_examples(manifest: DatasetManifest, split: str, limit: Optional[int] = None,
                  sample_rate: int = DEFAULT_SAMPLE_RATE) -> List[Example]:
    """Decode the audio of one split, in manifest order"""
    entries = manifest.entries_for(split)
    if limit is not None:
        entries = entries[:limit]
    if not entries:
        raise ConfigurationError(f"manifest has no '{split}' examples")
    return [
        Example(
            waveform=load_waveform(manifest.resolve(e), sample_rate),
            text=e.text,
            split=e.split,
            audio=e.audio,
        )
        for e in entries
    ]


class ExperimentData:
    """Loaded train / validation / test examples plus a content fingerprint"""

    def __init__(self, train: List[Example], validation: List[Example], test: List[Example]):
        self.train = list(train)
        self.validation = list(validation)
        self.test = list(test)
        self._fingerprint: Optional[str] = None

    @classmethod
    def from_examples(cls, examples: List[Example]) -> "ExperimentData":
        return cls(
            [e for e in examples if e.split == "train"],
            [e for e in examples if e.split == "validation"],
            [e for e in examples if e.split == "test"],
        )

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, limits: Optional[Dict[str, int]] = None) -> "ExperimentData":
        limits = limits or {}
        return cls(*(load_examples(manifest, split, limits.get(split)) for split in SPLITS))

    def fingerprint(self) -> str:
        if self._fingerprint is None:
            self._fingerprint = canonical_hash([
                [e.split, e.text, e.waveform.sample_rate, samples_digest(e.waveform.samples)]
                for e in self.train + self.validation + self.test
            ])
        return self._fingerprint

    def sizes(self) -> Dict[str, int]:
        return {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)}
