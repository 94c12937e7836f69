"""Draft report assembly: deterministic templates with an optional narrative
backend that can never block the pipeline (failures fall back to the
template).
"""
from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Optional, Sequence

import httpx

from .config import ReportingConfig
from .core import GeoPoint, HazardClass, HazardPipeError, format_ts, utc_now
from .geo import HotspotSite


class EmptySummary(HazardPipeError):
    """Severity or narrative requested for a report with no hazards."""


class NoConfirmedEvidence(HazardPipeError):
    """Report generation needs at least one consensus-confirmed detection."""


class ReviewState(str, Enum):
    DRAFT = "draft"
    HUMAN_APPROVED = "human_approved"
    PUBLISHED = "published"


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class DraftReport:
    id: str
    report_ids: tuple[str, ...]
    hazard_summary: dict[str, int]
    severity: Severity
    narrative: str
    generated_at: datetime
    site_id: Optional[str] = None
    site_centroid: Optional[GeoPoint] = None
    site_total_count: int = 0
    review_state: ReviewState = ReviewState.DRAFT
    degraded: bool = False  # narrative backend failed; template used
    language: str = "en"

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "report_ids": list(self.report_ids),
            "hazard_summary": dict(self.hazard_summary),
            "severity": self.severity.value,
            "narrative": self.narrative,
            "generated_at": format_ts(self.generated_at),
            "site_id": self.site_id,
            "site_centroid": self.site_centroid.to_json_dict() if self.site_centroid else None,
            "site_total_count": self.site_total_count,
            "review_state": self.review_state.value,
            "degraded": self.degraded,
            "language": self.language,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DraftReport":
        from .core import parse_ts

        centroid = data.get("site_centroid")
        return cls(
            id=data["id"],
            report_ids=tuple(data["report_ids"]),
            hazard_summary={k: int(v) for k, v in data["hazard_summary"].items()},
            severity=Severity(data["severity"]),
            narrative=data["narrative"],
            generated_at=parse_ts(data["generated_at"]),
            site_id=data.get("site_id"),
            site_centroid=GeoPoint.from_json_dict(centroid) if centroid else None,
            site_total_count=data.get("site_total_count", 0),
            review_state=ReviewState(data["review_state"]),
            degraded=data.get("degraded", False),
            language=data.get("language", "en"),
        )


def approve_draft(draft: DraftReport) -> DraftReport:
    if draft.review_state != ReviewState.DRAFT:
        raise HazardPipeError(f"cannot approve from {draft.review_state.value}")
    return replace(draft, review_state=ReviewState.HUMAN_APPROVED)


def publish_draft(draft: DraftReport) -> DraftReport:
    # Publication is gated on a human having approved the text first.
    if draft.review_state != ReviewState.HUMAN_APPROVED:
        raise HazardPipeError(f"cannot publish from {draft.review_state.value}")
    return replace(draft, review_state=ReviewState.PUBLISHED)


def severity(
    hazard_summary: dict[str, int],
    site: Optional[HotspotSite] = None,
    high_threshold: int = 10,
    medium_threshold: int = 3,
) -> Severity:
    """Rule-based severity from validated counts and hotspot context."""
    if not hazard_summary or all(v == 0 for v in hazard_summary.values()):
        raise EmptySummary("severity needs at least one validated hazard")
    total = sum(hazard_summary.values())
    if site is not None and site.total_count >= high_threshold:
        return Severity.HIGH
    if any(v >= high_threshold for v in hazard_summary.values()):
        return Severity.HIGH
    if total >= medium_threshold:
        return Severity.MEDIUM
    return Severity.LOW


# Stub gazetteer: named zones for the pilot region, sector fallback elsewhere.
GAZETTEER_ZONES = (
    ((39.45, 39.65, 2.55, 2.80), "Palma coastal strip"),
    ((39.65, 39.95, 2.80, 3.25), "Serra de Tramuntana foothills"),
    ((39.25, 39.55, 2.90, 3.50), "Llevant plain"),
)


def gazetteer_name(point: GeoPoint) -> str:
    for (lat0, lat1, lon0, lon1), name in GAZETTEER_ZONES:
        if lat0 <= point.lat < lat1 and lon0 <= point.lon < lon1:
            return name
    return f"sector {point.lat:.2f}N {point.lon:.2f}E"


_CLOSINGS = {
    Severity.LOW: "Severity is rated low; routine cleanup is recommended.",
    Severity.MEDIUM: "Severity is rated medium; municipal follow-up is advised.",
    Severity.HIGH: "Severity is rated high; immediate remediation and press attention are warranted.",
}


def _label(class_value: str) -> str:
    return class_value.replace("_", " ")


def build_facts(
    report_ids: Sequence[str],
    hazard_summary: dict[str, int],
    site: Optional[HotspotSite],
    location: GeoPoint,
    level: Severity,
    generated_at: datetime,
    language: str = "en",
) -> dict:
    """Canonical facts document handed to narrative backends (schema in docs/)."""
    return {
        "report_ids": sorted(report_ids),
        "hazard_summary": {k: hazard_summary[k] for k in sorted(hazard_summary)},
        "site": (
            {
                "id": site.id,
                "centroid": site.centroid.to_json_dict(),
                "total_count": site.total_count,
            }
            if site
            else None
        ),
        "location": location.to_json_dict(),
        "location_name": gazetteer_name(location),
        "severity": level.value,
        "generated_at": format_ts(generated_at),
        "language": language,
    }


def render_template(facts: dict) -> str:
    """Deterministic narrative. Identical facts produce identical bytes."""
    summary = facts["hazard_summary"]
    if not summary:
        raise EmptySummary("template needs hazard counts")
    dominant = max(sorted(summary), key=lambda k: summary[k])
    loc = facts["location"]
    lines = [
        f"Confirmed {facts['severity']} hazard report: {_label(dominant)} at {facts['location_name']}.",
        f"Location: {facts['location_name']} ({loc['lat']:.5f}, {loc['lon']:.5f}).",
    ]
    counted = ", ".join(
        f"{summary[k]} {_label(k)} finding(s)" for k in sorted(summary)
    )
    lines.append(f"Validated findings: {counted}.")
    if facts["site"] is not None:
        lines.append(
            f"The evidence clusters into hotspot {facts['site']['id']} "
            f"with {facts['site']['total_count']} validated detections."
        )
    lines.append(
        f"All findings above passed community validation across "
        f"{len(facts['report_ids'])} citizen report(s)."
    )
    lines.append(_CLOSINGS[Severity(facts["severity"])])
    return "\n".join(lines)


class NarrativeBackend:
    """External language-model boundary. Implementations must be cheap to fail."""

    def generate(self, facts: dict, tone: str, language: str) -> str:
        raise NotImplementedError


class HttpNarrativeBackend(NarrativeBackend):
    """POSTs the facts document and expects plain text back within the timeout."""

    def __init__(self, url: str, timeout_s: float = 10.0):
        self.url = url
        self.timeout_s = timeout_s

    def generate(self, facts: dict, tone: str, language: str) -> str:
        response = httpx.post(
            self.url,
            json={"facts": facts, "tone": tone, "language": language},
            timeout=self.timeout_s,
        )
        response.raise_for_status()
        return response.text


class StubNarrativeBackend(NarrativeBackend):
    """Recorded-response stub for tests and offline runs."""

    def __init__(self, response: Optional[str] = None, fail: bool = False):
        self.response = response
        self.fail = fail
        self.calls: list[dict] = []

    def generate(self, facts: dict, tone: str, language: str) -> str:
        self.calls.append({"facts": facts, "tone": tone, "language": language})
        if self.fail:
            raise RuntimeError("stub backend configured to fail")
        return self.response if self.response is not None else render_template(facts)


def generate_report(
    report_ids: Sequence[str],
    confirmed_counts: dict[HazardClass, int],
    location: GeoPoint,
    site: Optional[HotspotSite] = None,
    backend: Optional[NarrativeBackend] = None,
    config: ReportingConfig = ReportingConfig(),
    generated_at: Optional[datetime] = None,
    tone: str = "factual",
) -> DraftReport:
    """Assemble a draft from confirmed evidence; narrative degrades gracefully."""
    counts = {
        cls.value: n for cls, n in sorted(confirmed_counts.items(), key=lambda kv: kv[0].value) if n > 0
    }
    if not counts:
        raise NoConfirmedEvidence("no consensus-confirmed detections supplied")
    generated_at = generated_at or utc_now()
    level = severity(counts, site, config.severity_high, config.severity_medium)
    facts = build_facts(
        report_ids, counts, site, location, level, generated_at, config.language
    )
    degraded = False
    if backend is None:
        narrative = render_template(facts)
    else:
        try:
            narrative = backend.generate(facts, tone, config.language)
        except Exception:
            narrative = render_template(facts)
            degraded = True
    return DraftReport(
        id=uuid.uuid4().hex,
        report_ids=tuple(sorted(report_ids)),
        hazard_summary=counts,
        severity=level,
        narrative=narrative,
        generated_at=generated_at,
        site_id=site.id if site else None,
        site_centroid=site.centroid if site else None,
        site_total_count=site.total_count if site else 0,
        degraded=degraded,
        language=config.language,
    )
