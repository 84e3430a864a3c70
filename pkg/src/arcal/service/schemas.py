"""Request/response models for the calibration service."""

from __future__ import annotations

from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..boxes import OrientedBox
from ..clouds import RigidTransform


class LabelSchema(BaseModel):
    """One oriented-box label: the wire format shared with the annotation UI."""

    model_config = ConfigDict(populate_by_name=True)

    cloud_id: str
    object_class: str = Field(alias="class", default="robot")
    center: List[float]
    size: List[float]
    yaw: float

    @field_validator("center", "size")
    @classmethod
    def three_components(cls, v, info):
        if len(v) != 3:
            raise ValueError(f"{info.field_name} must have exactly 3 components")
        return v

    @field_validator("size")
    @classmethod
    def positive_size(cls, v):
        if any(c <= 0 for c in v):
            raise ValueError("all size components must be > 0")
        return v

    @field_validator("object_class")
    @classmethod
    def known_class(cls, v):
        if v != "robot":
            raise ValueError("class must be 'robot'")
        return v

    def to_box(self):
        return OrientedBox(np.array(self.center), np.array(self.size), self.yaw)

    @staticmethod
    def from_box(box, cloud_id):
        return LabelSchema(cloud_id=cloud_id, center=[float(v) for v in box.center],
                           size=[float(v) for v in box.size], yaw=float(box.yaw))


class TransformSchema(BaseModel):
    """Row-major rotation matrix plus translation vector."""

    rotation: List[List[float]]
    translation: List[float]

    @field_validator("rotation")
    @classmethod
    def three_by_three(cls, v):
        if len(v) != 3 or any(len(row) != 3 for row in v):
            raise ValueError("rotation must be a 3x3 matrix")
        return v

    @field_validator("translation")
    @classmethod
    def three_components(cls, v):
        if len(v) != 3:
            raise ValueError("translation must have exactly 3 components")
        return v

    def to_transform(self):
        return RigidTransform(np.array(self.rotation), np.array(self.translation))

    @staticmethod
    def from_transform(t):
        return TransformSchema(rotation=[[float(v) for v in row] for row in t.rotation],
                               translation=[float(v) for v in t.translation])


class CloudRecordSchema(BaseModel):
    cloud_id: str
    point_count: int
    uploaded_at: float
    labeled: bool


class UploadResponse(BaseModel):
    cloud_id: str
    point_count: int


class CloudPointsResponse(BaseModel):
    cloud_id: str
    point_count: int
    points: List[List[float]]


class DetectRequest(BaseModel):
    cloud_id: str


class DetectResponse(BaseModel):
    box: LabelSchema
    score: float
    inference_ms: float


class AnnotateRequest(BaseModel):
    cloud_id: str
    corners: List[List[float]]
    height_threshold: float = 1.0

    @field_validator("corners")
    @classmethod
    def three_corners(cls, v):
        if len(v) != 3 or any(len(c) != 3 for c in v):
            raise ValueError("corners must be three 3D points")
        return v


class AnnotateResponse(BaseModel):
    box: LabelSchema


class CalibrateRequest(BaseModel):
    robot_in_map: TransformSchema
    cloud_id: str


class CalibrateResponse(BaseModel):
    ar_to_map: TransformSchema
    detection: DetectResponse
