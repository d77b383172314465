from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .victim import TranscriptionResult

METRIC_NAMES = ("empty_rate", "asl", "bleu", "wer")


class EvalRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    transcription: TranscriptionResult
    reference: str


class MetricBundle(BaseModel):
    """Dataset means of ∅, ASL, BLEU′ and WER.

    bleu/wer are optional so tables that only report ∅ and ASL still parse.
    """

    model_config = ConfigDict(frozen=True)

    empty_rate: float = Field(ge=0, le=1)
    asl: float = Field(ge=0)
    bleu: Optional[float] = Field(default=None, ge=0, le=1)
    wer: Optional[float] = Field(default=None, ge=0)
    n_examples: Optional[int] = None

    @model_validator(mode="after")
    def _check_empty(self):
        if self.empty_rate == 1.0 and self.asl != 0.0:
            raise ValueError("empty_rate 1 requires asl 0")
        return self

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


class MetricDelta(BaseModel):
    """attacked - clean per metric (α)"""

    model_config = ConfigDict(frozen=True)

    empty_rate: float
    asl: float
    bleu: Optional[float] = None
    wer: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


class DefenceReport(BaseModel):
    """Retained attack power of one defence chain"""

    model_config = ConfigDict(frozen=True)

    defence: str
    attacked: Optional[MetricBundle] = None
    clean: Optional[MetricBundle] = None
    alpha_base: Optional[MetricDelta] = None
    alpha_d: Optional[MetricDelta] = None
    # None marks an undefined percentage (|α_base| below 1e-12)
    alpha_pct: Dict[str, Optional[float]] = Field(default_factory=dict)
    description: Dict = Field(default_factory=dict)
    error: Optional[str] = None
    notes: List[str] = Field(default_factory=list)
