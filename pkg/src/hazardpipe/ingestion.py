"""Citizen submission intake: validate, geolocate, anonymize, dedupe, persist."""
from __future__ import annotations

import hashlib
import io
import uuid
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Optional

from PIL import Image

from .blobstore import BlobStore
from .config import IngestionConfig
from .core import GeoPoint, PipelineStage, Report, utc_now
from .geo import haversine
from .imagemeta import MalformedImage, anonymize, extract_geotag, sniff_format


class IngestStatus(str, Enum):
    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"
    REJECTED = "rejected"


class RejectReason(str, Enum):
    NO_GEOTAG = "no_geotag"
    TOO_LARGE = "too_large"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class RawSubmission:
    image_bytes: bytes
    submitter_token: str
    declared_geo: Optional[GeoPoint] = None
    device_time: Optional[datetime] = None


@dataclass(frozen=True)
class IngestOutcome:
    status: IngestStatus
    report_id: Optional[str] = None
    reject_reason: Optional[RejectReason] = None
    quality_flags: tuple[str, ...] = ()

    def __post_init__(self):
        if (self.report_id is not None) != (self.status == IngestStatus.ACCEPTED):
            raise ValueError("report_id present iff accepted")


def dedup_key(image_bytes: bytes) -> int:
    """64-bit difference hash over the 9x8 grayscale downsample.

    Robust to re-encoding; blind to gradient-free images (all-black and
    all-white collide by construction).
    """
    try:
        img = Image.open(io.BytesIO(image_bytes))
        small = img.convert("L").resize((9, 8), Image.LANCZOS)
    except Exception as err:
        raise MalformedImage(str(err)) from err
    pixels = small.tobytes()  # mode L: one byte per pixel, row-major
    bits = 0
    for row in range(8):
        for col in range(8):
            left = pixels[row * 9 + col]
            right = pixels[row * 9 + col + 1]
            bits = (bits << 1) | (1 if left > right else 0)
    return bits


def hamming(a: int, b: int) -> int:
    return bin(a ^ b).count("1")


def anonymous_submitter_id(token: str, salt: str) -> str:
    return hashlib.sha256((salt + ":" + token).encode("utf-8")).hexdigest()[:32]


class IngestService:
    """Concurrent-safe intake; the dedup check-and-claim is atomic per key."""

    def __init__(self, store, blobs: BlobStore, config: IngestionConfig):
        self.store = store
        self.blobs = blobs
        self.config = config

    def ingest(self, submission: RawSubmission, now: Optional[datetime] = None) -> IngestOutcome:
        data = submission.image_bytes
        if not data or sniff_format(data) is None:
            return IngestOutcome(IngestStatus.REJECTED, reject_reason=RejectReason.MALFORMED)
        if len(data) > self.config.max_payload_mb * 1024 * 1024:
            return IngestOutcome(IngestStatus.REJECTED, reject_reason=RejectReason.TOO_LARGE)

        try:
            exif_geo = extract_geotag(data)
        except MalformedImage:
            return IngestOutcome(IngestStatus.REJECTED, reject_reason=RejectReason.MALFORMED)

        flags: list[str] = []
        geo = exif_geo or submission.declared_geo
        if geo is None:
            return IngestOutcome(IngestStatus.REJECTED, reject_reason=RejectReason.NO_GEOTAG)
        if exif_geo is not None and submission.declared_geo is not None:
            disagreement_m = haversine(exif_geo, submission.declared_geo)
            if disagreement_m > self.config.geo_disagreement_km * 1000:
                # Device sensor data outranks the self-declared location.
                geo = exif_geo
                flags.append(f"geo_disagreement:{disagreement_m:.0f}m")

        report_id = f"r-{uuid.uuid4().hex[:12]}"
        key = dedup_key(data)
        threshold = self.config.dedup_threshold
        existing = self.store.claim_dedup_key(
            key, report_id, lambda a, b: hamming(a, b) <= threshold
        )
        if existing is not None:
            return IngestOutcome(IngestStatus.DUPLICATE)

        clean = anonymize(data)
        image_ref = self.blobs.put(clean)
        captured_at = submission.device_time or now or utc_now()
        report = Report(
            id=report_id,
            submitter=anonymous_submitter_id(submission.submitter_token, self.config.salt),
            geo=geo,
            captured_at=captured_at,
            image_ref=image_ref,
            stage=PipelineStage.SUBMITTED,
        )
        self.store.put_report(report)
        for flag in flags:
            self.store.add_quality_flag(report.id, flag)
        return IngestOutcome(
            IngestStatus.ACCEPTED, report_id=report.id, quality_flags=tuple(flags)
        )
