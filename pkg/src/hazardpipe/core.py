"""Shared domain types and the pipeline stage vocabulary.

Everything here is an immutable value object: safe to share across worker
threads. State changes happen by constructing new values, owned by the
orchestrator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Optional


class HazardPipeError(Exception):
    """Base class for all pipeline errors."""


class NotFinite(HazardPipeError):
    """A coordinate or measure was NaN or infinite."""


class OutOfRange(HazardPipeError):
    """A value fell outside its documented bounds."""

    def __init__(self, axis: str, value: float):
        self.axis = axis
        self.value = value
        super().__init__(f"{axis}={value!r} out of range")


def utc_now() -> datetime:
    """Current UTC time truncated to millisecond precision."""
    return truncate_ms(datetime.now(timezone.utc))


def truncate_ms(ts: datetime) -> datetime:
    """Truncate a datetime to millisecond precision, forcing UTC."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=(ts.microsecond // 1000) * 1000)


def format_ts(ts: datetime) -> str:
    """Canonical timestamp string: UTC ISO-8601 with milliseconds and Z suffix."""
    ts = truncate_ms(ts)
    return ts.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ts.microsecond // 1000:03d}Z"


def parse_ts(raw: str) -> datetime:
    return datetime.strptime(raw, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)


class PipelineStage(str, Enum):
    """Stages a report moves through, from upload to publication."""

    SUBMITTED = "submitted"
    DETECTED = "detected"
    IN_VALIDATION = "in_validation"
    ESCALATED = "escalated"
    VALIDATED = "validated"
    REJECTED = "rejected"
    REPORTED = "reported"
    PUBLISHED = "published"


class HazardClass(str, Enum):
    """Closed registry of hazard categories. Extending it is a config non-goal."""

    PLASTIC_FOIL = "plastic_foil"
    RUBBER_WASTE = "rubber_waste"
    METAL_CAN = "metal_can"
    MIXED_WASTE = "mixed_waste"
    OTHER = "other"


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate. Bounds are enforced at construction."""

    lat: float
    lon: float

    def __post_init__(self):
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))
        for axis, value, bound in (("lat", self.lat, 90.0), ("lon", self.lon, 180.0)):
            if not math.isfinite(value):
                raise NotFinite(f"{axis}={value!r}")
            if not -bound <= value <= bound:
                raise OutOfRange(axis, value)

    def to_json_dict(self) -> dict:
        return {"lat": self.lat, "lon": self.lon}

    @classmethod
    def from_json_dict(cls, data: dict) -> "GeoPoint":
        return cls(lat=float(data["lat"]), lon=float(data["lon"]))


def make_geopoint(lat: float, lon: float) -> GeoPoint:
    """Validating constructor; raises NotFinite / OutOfRange on bad input."""
    return GeoPoint(float(lat), float(lon))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, origin top-left, exclusive of degenerate extents."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise NotFinite(f"box coordinates {coords!r}")
        if any(c < 0 for c in coords):
            raise OutOfRange("box", min(coords))
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise OutOfRange("box", 0.0)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def to_json_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "BoundingBox":
        return cls(
            x_min=float(data["x_min"]),
            y_min=float(data["y_min"]),
            x_max=float(data["x_max"]),
            y_max=float(data["y_max"]),
        )


def _check_unit(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise NotFinite(f"{name}={value!r}")
    if not 0.0 <= value <= 1.0:
        raise OutOfRange(name, value)


@dataclass(frozen=True)
class Detection:
    """One detected hazard box with its scores and explainability artifact refs."""

    id: str
    box: BoundingBox
    hazard_class: HazardClass
    confidence: float
    uncertainty: float
    cam_ref: Optional[str] = None
    lime_ref: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "uncertainty", float(self.uncertainty))
        _check_unit("confidence", self.confidence)
        _check_unit("uncertainty", self.uncertainty)

    def with_refs(self, cam_ref: Optional[str] = None, lime_ref: Optional[str] = None) -> "Detection":
        updates = {}
        if cam_ref is not None:
            updates["cam_ref"] = cam_ref
        if lime_ref is not None:
            updates["lime_ref"] = lime_ref
        return replace(self, **updates)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "box": self.box.to_json_dict(),
            "class": self.hazard_class.value,
            "confidence": self.confidence,
            "uncertainty": self.uncertainty,
            "cam_ref": self.cam_ref,
            "lime_ref": self.lime_ref,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Detection":
        return cls(
            id=data["id"],
            box=BoundingBox.from_json_dict(data["box"]),
            hazard_class=HazardClass(data["class"]),
            confidence=float(data["confidence"]),
            uncertainty=float(data["uncertainty"]),
            cam_ref=data.get("cam_ref"),
            lime_ref=data.get("lime_ref"),
        )


@dataclass(frozen=True)
class Report:
    """One citizen submission as it traverses the pipeline.

    ``stage_history`` is append-only with strictly increasing timestamps and
    its last entry always equals ``stage``. Only the orchestrator may produce
    successor values via ``with_stage``.
    """

    id: str
    submitter: str
    geo: GeoPoint
    captured_at: datetime
    image_ref: str
    detections: tuple[Detection, ...] = ()
    stage: PipelineStage = PipelineStage.SUBMITTED
    stage_history: tuple[tuple[PipelineStage, datetime], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "captured_at", truncate_ms(self.captured_at))
        object.__setattr__(self, "detections", tuple(self.detections))
        history = tuple((stage, truncate_ms(at)) for stage, at in self.stage_history)
        if not history:
            history = ((self.stage, self.captured_at),)
        object.__setattr__(self, "stage_history", history)
        if history[-1][0] != self.stage:
            raise HazardPipeError(
                f"report {self.id}: stage {self.stage} does not match history tail {history[-1][0]}"
            )
        times = [at for _, at in history]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise HazardPipeError(f"report {self.id}: stage_history timestamps not strictly increasing")

    def with_stage(self, stage: PipelineStage, at: datetime) -> "Report":
        """Successor report at a new stage. Legality of the edge is the orchestrator's check."""
        at = truncate_ms(at)
        last = self.stage_history[-1][1]
        if at <= last:
            # Same-millisecond events keep history strictly increasing.
            at = last.fromtimestamp(last.timestamp() + 0.001, tz=timezone.utc)
        return replace(self, stage=stage, stage_history=self.stage_history + ((stage, at),))

    def with_detections(self, detections: tuple[Detection, ...]) -> "Report":
        return replace(self, detections=tuple(detections))

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "submitter": self.submitter,
            "geo": self.geo.to_json_dict(),
            "captured_at": format_ts(self.captured_at),
            "image_ref": self.image_ref,
            "detections": [d.to_json_dict() for d in self.detections],
            "stage": self.stage.value,
            "stage_history": [[stage.value, format_ts(at)] for stage, at in self.stage_history],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Report":
        return cls(
            id=data["id"],
            submitter=data["submitter"],
            geo=GeoPoint.from_json_dict(data["geo"]),
            captured_at=parse_ts(data["captured_at"]),
            image_ref=data["image_ref"],
            detections=tuple(Detection.from_json_dict(d) for d in data["detections"]),
            stage=PipelineStage(data["stage"]),
            stage_history=tuple(
                (PipelineStage(stage), parse_ts(at)) for stage, at in data["stage_history"]
            ),
        )
