import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_SAMPLE_RATE = 16000


def _frozen_array(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


class Waveform(BaseModel):
    """Mono audio. Loaders keep samples in [-1, 1]; splicing may overflow it."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    sample_rate: int = Field(default=DEFAULT_SAMPLE_RATE, gt=0)

    @field_validator("samples", mode="before")
    @classmethod
    def _validate_samples(cls, v):
        return _frozen_array(v, "samples")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate

    def in_range(self) -> bool:
        return bool(np.all(np.abs(self.samples) <= 1.0))


class MelSpectrogram(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: np.ndarray  # (n_mels, n_frames)
    n_mels: int = Field(gt=0)
    hop_seconds: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_frames(self):
        if self.frames.ndim != 2 or self.frames.shape[0] != self.n_mels:
            raise ValueError(f"frames must have shape (n_mels, n_frames), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("log-Mel frames must be finite")
        return self

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[1])


class SnippetParams(BaseModel):
    """ε (l∞ bound), L (seconds) and T (insert position, seconds)"""

    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(default=0.02, gt=0)
    length_seconds: float = Field(default=0.64, gt=0)
    position_seconds: float = Field(default=0.0, ge=0, le=1)


class FrontendConfig(BaseModel):
    """Log-Mel frontend shared by the victim models"""

    model_config = ConfigDict(frozen=True)

    sample_rate: int = Field(default=DEFAULT_SAMPLE_RATE, gt=0)
    n_mels: int = Field(default=80, gt=0)
    window: int = Field(default=400, gt=0)  # 25 ms at 16 kHz
    hop: int = Field(default=160, gt=0)  # 10 ms at 16 kHz
    log_floor: float = Field(default=1e-10, gt=0)
    chunk_seconds: float = Field(default=30.0, gt=0)

    @model_validator(mode="after")
    def _check_window(self):
        if self.window < self.hop:
            raise ValueError("window must be >= hop")
        return self

    @property
    def chunk_samples(self) -> int:
        return int(round(self.chunk_seconds * self.sample_rate))

    @property
    def chunk_frames(self) -> int:
        return -(-self.chunk_samples // self.hop)
