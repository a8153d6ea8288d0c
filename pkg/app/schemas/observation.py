"""
Observation archive schemas
"""

from datetime import datetime
from typing import List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator


ARCHIVE_SCHEMA_VERSION = 1

Phase = Literal["warm-start", "optimized"]


class Observation(BaseModel):
    """One evaluated weight vector, as stored in the archive file"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    version: int = ARCHIVE_SCHEMA_VERSION
    iteration: int = Field(ge=0)
    phase: Phase
    weights: List[float]
    objectives_raw: List[float]
    orientation: List[Literal["maximize", "minimize"]]
    eval_wall_seconds: float = Field(ge=0.0)
    fit_wall_seconds: float = Field(ge=0.0)
    propose_wall_seconds: float = Field(ge=0.0)
    seed: int
    reference: Optional[List[float]] = None

    @field_validator("version")
    @classmethod
    def check_version(cls, v: int) -> int:
        if v != ARCHIVE_SCHEMA_VERSION:
            raise ValueError(f"unsupported archive schema version {v}")
        return v

    @field_validator("objectives_raw")
    @classmethod
    def check_finite(cls, v: List[float]) -> List[float]:
        if any(x != x or x in (float("inf"), float("-inf")) for x in v):
            raise ValueError("objectives must be finite")
        return v

    def canonical(self) -> List[float]:
        """Objectives in maximize-all orientation"""
        return [
            value if sense == "maximize" else -value
            for value, sense in zip(self.objectives_raw, self.orientation)
        ]


class RunManifest(BaseModel):
    """Sidecar describing which config produced an archive"""
    model_config = ConfigDict(extra="forbid")

    config_path: str
    archive_path: str
    created_at: datetime
    engine_version: str
