from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .audio import DEFAULT_SAMPLE_RATE, SnippetParams, _frozen_array

ObjectiveKind = Literal["complete", "partial"]
InitScheme = Literal["zeros", "uniform"]
PrefixMode = Literal["model", "reference"]


class TrainConfig(BaseModel):
    """Optimizer and stopping configuration for snippet training"""

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=1e-3, gt=0)
    patience: int = Field(default=5, ge=1)
    min_delta: float = Field(default=1e-4, ge=0)
    max_iterations: int = Field(default=30, ge=0)
    time_limit_seconds: float = Field(default=2700.0, gt=0)  # 45 minutes
    batch_size: int = Field(default=1, ge=1)
    delta_horizon: int = Field(default=10, ge=1)
    seed: int = 0
    weight_decay: float = Field(default=0.0, ge=0)
    init_scheme: InitScheme = "uniform"
    prefix_mode: PrefixMode = "model"


class IterationRecord(BaseModel):
    """One full pass over the training set. val_loss is None for a pass cut short by the time limit."""

    model_config = ConfigDict(frozen=True)

    iteration: int
    train_loss: float
    val_loss: Optional[float] = None
    patience_left: int
    improved: bool = False


class AttackSnippet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    params: SnippetParams
    sample_rate: int = Field(default=DEFAULT_SAMPLE_RATE, gt=0)
    objective: Optional[ObjectiveKind] = None
    delta_horizon: Optional[int] = None
    trained_on: Optional[str] = None
    seed: Optional[int] = None
    config: Optional[TrainConfig] = None
    history: List[IterationRecord] = Field(default_factory=list)

    @field_validator("samples", mode="before")
    @classmethod
    def _validate_samples(cls, v):
        return _frozen_array(v, "samples")

    @model_validator(mode="after")
    def _check_length(self):
        expected = int(round(self.params.length_seconds * self.sample_rate))
        if self.samples.shape[0] != expected:
            raise ValueError(
                f"snippet has {self.samples.shape[0]} samples, "
                f"length {self.params.length_seconds}s needs {expected}"
            )
        return self

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0

    def within_bound(self) -> bool:
        return self.linf <= self.params.epsilon

    def metadata(self) -> Dict[str, Any]:
        """Sidecar payload for the snippet artifact"""
        return {
            "epsilon": self.params.epsilon,
            "length_seconds": self.params.length_seconds,
            "position_seconds": self.params.position_seconds,
            "sample_rate": self.sample_rate,
            "objective": self.objective,
            "delta_horizon": self.delta_horizon,
            "model_identity": self.trained_on,
            "seed": self.seed,
            "config": self.config.model_dump() if self.config else None,
            "history": [h.model_dump() for h in self.history],
        }
