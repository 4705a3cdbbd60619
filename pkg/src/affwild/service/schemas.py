"""Request/response models for the annotation capture service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..annotations import DIMENSIONS


class VideoEntry(BaseModel):
    video_id: str
    uri: str
    frame_rate: float = Field(gt=0)
    duration: float = Field(gt=0)


class OpenSessionRequest(BaseModel):
    annotator_id: str = Field(min_length=1)
    video_id: str
    dimension: str

    def validated_dimension(self) -> str:
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"dimension must be one of {DIMENSIONS}")
        return self.dimension


class OpenSessionResponse(BaseModel):
    session_id: str


class Sample(BaseModel):
    timestamp: float
    value: float


class PushSamplesRequest(BaseModel):
    samples: list[Sample]


class RejectedSample(BaseModel):
    index: int
    reason: str


class PushSamplesResponse(BaseModel):
    accepted: int
    rejected: list[RejectedSample]


class CloseSessionResponse(BaseModel):
    trace_path: str


class ReviewResponse(BaseModel):
    session_id: str
    annotator_id: str
    video_id: str
    dimension: str
    samples: list[Sample]
    video: VideoEntry
