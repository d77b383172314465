from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .attack import ObjectiveKind, TrainConfig
from .audio import SnippetParams, Waveform
from .metrics import DefenceReport, MetricBundle

SCHEMA_VERSION = 1

Split = Literal["train", "validation", "test"]
SPLITS = ("train", "validation", "test")
SweepParameter = Literal["epsilon", "length", "position", "cutoff_hz"]


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    audio: str
    text: str
    split: Split


class DatasetManifest(BaseModel):
    entries: List[ManifestEntry] = Field(default_factory=list)
    root: Optional[str] = None  # directory relative audio paths resolve against

    def split_counts(self) -> Dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for entry in self.entries:
            counts[entry.split] += 1
        return counts

    def entries_for(self, split: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.audio)
        if not path.is_absolute() and self.root:
            path = Path(self.root) / path
        return path


class Example(BaseModel):
    """One loaded utterance"""

    model_config = ConfigDict(frozen=True)

    waveform: Waveform
    text: str
    split: Split = "test"
    audio: Optional[str] = None


class SweepSpec(BaseModel):
    parameter: SweepParameter
    values: List[float]
    params: SnippetParams = SnippetParams()
    train: TrainConfig = TrainConfig()
    objective: ObjectiveKind = "complete"
    models: List[str] = Field(default_factory=lambda: ["toy:42"])
    order: int = Field(default=5, ge=1)  # Butterworth order for cutoff_hz sweeps
    baseline: bool = True
    baseline_seed: int = 0
    max_tokens: int = Field(default=224, ge=1)

    @field_validator("values")
    @classmethod
    def _check_values(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("sweep values must be non-empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sweep values must be strictly increasing")
        return v


class Provenance(BaseModel):
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    snippet_file: Optional[str] = None
    snippet_digest: Optional[str] = None
    error: Optional[str] = None


class SweepCell(BaseModel):
    series: str  # "<model>" or "baseline <model>"
    model: str
    column: int  # position in values; duplicates are positional
    value: float
    metrics: Optional[MetricBundle] = None
    provenance: Provenance = Provenance()


class SweepReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    parameter: str
    values: List[float]
    cells: List[SweepCell] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    def series(self) -> List[str]:
        seen: List[str] = []
        for cell in self.cells:
            if cell.series not in seen:
                seen.append(cell.series)
        return seen

    def cell(self, series: str, column: int) -> Optional[SweepCell]:
        for c in self.cells:
            if c.series == series and c.column == column:
                return c
        return None


class TransferCell(BaseModel):
    attack: str  # "no_attack" or the objective
    surrogate: str
    victim: str
    metrics: Optional[MetricBundle] = None
    provenance: Provenance = Provenance()


class TransferReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    surrogates: List[str]
    victims: List[str]
    objective: str = "complete"
    cells: List[TransferCell] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    def cell(self, attack: str, surrogate: str, victim: str) -> Optional[TransferCell]:
        for c in self.cells:
            if (c.attack, c.surrogate, c.victim) == (attack, surrogate, victim):
                return c
        return None


class DefenceTable(BaseModel):
    schema_version: int = SCHEMA_VERSION
    model: Optional[str] = None
    reports: List[DefenceReport] = Field(default_factory=list)
    provenance: Provenance = Provenance()
    notes: List[str] = Field(default_factory=list)

    def report(self, defence: str) -> Optional[DefenceReport]:
        for r in self.reports:
            if r.defence == defence:
                return r
        return None
