from pydantic import BaseModel, ConfigDict, Field


class MuLawParams(BaseModel):
    """mu = 255 simulates 16-bit to 8-bit telephony companding"""

    model_config = ConfigDict(frozen=True)

    mu: float = Field(default=255.0, gt=0)
    quantize: bool = False
    bits: int = Field(default=8, ge=1, le=16)


class LowPassParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    cutoff_hz: float = Field(gt=0)
    order: int = Field(default=5, ge=1)
