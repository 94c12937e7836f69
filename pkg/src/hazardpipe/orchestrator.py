"""Per-report state machine, feedback recalibration, and latency telemetry.

The transition log is the source of truth: replaying it reproduces the exact
final stage of every report, which keeps batch re-analysis auditable.
"""
from __future__ import annotations

import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .core import (
    BoundingBox,
    HazardClass,
    HazardPipeError,
    PipelineStage,
    Report,
    format_ts,
    parse_ts,
    utc_now,
)
from .detection import CalibrationTable


class IllegalTransition(HazardPipeError):
    """An event was applied to a report whose stage does not allow it."""

    def __init__(self, stage: PipelineStage, event: "PipelineEvent", detail: str = ""):
        self.stage = stage
        self.event = event
        msg = f"event {event.value} illegal in stage {stage.value}"
        super().__init__(msg + (f": {detail}" if detail else ""))


class InsufficientData(HazardPipeError):
    """Too few feedback records to recalibrate."""


class EmptyWindow(HazardPipeError):
    """Latency stats requested over a window with no completed reports."""


class PipelineEvent(str, Enum):
    DETECTION_COMPLETE = "detection_complete"
    ENTER_VALIDATION = "enter_validation"
    CONSENSUS_CONFIRM = "consensus_confirm"
    CONSENSUS_REJECT = "consensus_reject"
    CONSENSUS_ESCALATE = "consensus_escalate"
    EXPERT_CONFIRM = "expert_confirm"
    EXPERT_REJECT = "expert_reject"
    REPORT_DRAFTED = "report_drafted"
    PUBLISH = "publish"


# event -> (legal source stage, target stage, cause label)
EVENT_TABLE: dict[PipelineEvent, tuple[PipelineStage, PipelineStage, str]] = {
    PipelineEvent.DETECTION_COMPLETE: (PipelineStage.SUBMITTED, PipelineStage.DETECTED, "detection"),
    PipelineEvent.ENTER_VALIDATION: (PipelineStage.DETECTED, PipelineStage.IN_VALIDATION, "detection"),
    PipelineEvent.CONSENSUS_CONFIRM: (PipelineStage.IN_VALIDATION, PipelineStage.VALIDATED, "consensus"),
    PipelineEvent.CONSENSUS_REJECT: (PipelineStage.IN_VALIDATION, PipelineStage.REJECTED, "consensus"),
    PipelineEvent.CONSENSUS_ESCALATE: (PipelineStage.IN_VALIDATION, PipelineStage.ESCALATED, "consensus"),
    PipelineEvent.EXPERT_CONFIRM: (PipelineStage.ESCALATED, PipelineStage.VALIDATED, "expert"),
    PipelineEvent.EXPERT_REJECT: (PipelineStage.ESCALATED, PipelineStage.REJECTED, "expert"),
    PipelineEvent.REPORT_DRAFTED: (PipelineStage.VALIDATED, PipelineStage.REPORTED, "editor"),
    PipelineEvent.PUBLISH: (PipelineStage.REPORTED, PipelineStage.PUBLISHED, "publish"),
}

TERMINAL_STAGES = (PipelineStage.REJECTED, PipelineStage.PUBLISHED)


@dataclass(frozen=True)
class StageTransition:
    report_id: str
    from_stage: PipelineStage
    to_stage: PipelineStage
    at: datetime
    cause: str

    def to_json_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "from": self.from_stage.value,
            "to": self.to_stage.value,
            "at": format_ts(self.at),
            "cause": self.cause,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "StageTransition":
        return cls(
            report_id=data["report_id"],
            from_stage=PipelineStage(data["from"]),
            to_stage=PipelineStage(data["to"]),
            at=parse_ts(data["at"]),
            cause=data["cause"],
        )


@dataclass(frozen=True)
class FeedbackRecord:
    """Outcome of one resolved detection, feeding calibration and thresholds."""

    detection_id: str
    predicted_class: HazardClass
    predicted_confidence: float
    confirmed: bool
    geometry_correction: Optional[BoundingBox] = None

    def to_json_dict(self) -> dict:
        return {
            "detection_id": self.detection_id,
            "predicted_class": self.predicted_class.value,
            "predicted_confidence": self.predicted_confidence,
            "confirmed": self.confirmed,
            "geometry_correction": (
                self.geometry_correction.to_json_dict() if self.geometry_correction else None
            ),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "FeedbackRecord":
        correction = data.get("geometry_correction")
        return cls(
            detection_id=data["detection_id"],
            predicted_class=HazardClass(data["predicted_class"]),
            predicted_confidence=float(data["predicted_confidence"]),
            confirmed=bool(data["confirmed"]),
            geometry_correction=BoundingBox.from_json_dict(correction) if correction else None,
        )


class Telemetry:
    """Wall-clock accumulator for the engineered (non-human) pipeline cost."""

    def __init__(self):
        self._lock = threading.Lock()
        self.totals: dict[str, float] = defaultdict(float)
        self.counts: dict[str, int] = defaultdict(int)

    def add(self, label: str, seconds: float) -> None:
        with self._lock:
            self.totals[label] += seconds
            self.counts[label] += 1

    def timed(self, label: str):
        telemetry = self

        class _Timer:
            def __enter__(self):
                self._start = time.perf_counter()
                return self

            def __exit__(self, *exc):
                telemetry.add(label, time.perf_counter() - self._start)
                return False

        return _Timer()

    def snapshot(self) -> dict:
        with self._lock:
            return {
                label: {
                    "total_s": self.totals[label],
                    "count": self.counts[label],
                    "mean_s": self.totals[label] / self.counts[label],
                }
                for label in self.totals
            }


class Orchestrator:
    """Owns stage transitions. One lock per report id serializes them."""

    def __init__(self, store, telemetry: Optional[Telemetry] = None):
        self.store = store
        self.telemetry = telemetry or Telemetry()
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, report_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(report_id, threading.Lock())

    def advance(
        self,
        report_id: str,
        event: PipelineEvent,
        at: Optional[datetime] = None,
    ) -> StageTransition:
        """Atomically apply one legal transition and append it to the log."""
        if event not in EVENT_TABLE:
            raise HazardPipeError(f"unknown event {event}")
        source, target, cause = EVENT_TABLE[event]
        with self._lock_for(report_id):
            report = self.store.get_report(report_id)
            if report is None:
                raise HazardPipeError(f"unknown report {report_id}")
            if report.stage != source:
                raise IllegalTransition(report.stage, event)
            self._check_guards(report, event)
            at = at or utc_now()
            updated = report.with_stage(target, at)
            transition = StageTransition(
                report_id=report_id,
                from_stage=source,
                to_stage=updated.stage,
                at=updated.stage_history[-1][1],
                cause=cause,
            )
            self.store.put_report(updated)
            self.store.append_transition(transition)
            return transition

    def _check_guards(self, report: Report, event: PipelineEvent) -> None:
        if event == PipelineEvent.ENTER_VALIDATION:
            missing = [d.id for d in report.detections if d.cam_ref is None]
            if missing:
                raise IllegalTransition(
                    report.stage, event, f"detections without cam overlay: {missing}"
                )
        if event == PipelineEvent.REPORT_DRAFTED:
            confirmed = any(
                (state := self.store.get_consensus(d.id)) is not None and state.status.value == "confirmed"
                for d in report.detections
            )
            if not confirmed:
                raise IllegalTransition(
                    report.stage, event, "no confirmed detection backs this report"
                )


def replay_stages(transitions: Iterable[StageTransition]) -> dict[str, PipelineStage]:
    """Rebuild final stages from the log, validating every edge on the way."""
    stages: dict[str, PipelineStage] = {}
    legal_edges = {(src, dst) for src, dst, _ in EVENT_TABLE.values()}
    for t in transitions:
        current = stages.get(t.report_id, PipelineStage.SUBMITTED)
        if t.from_stage != current or (t.from_stage, t.to_stage) not in legal_edges:
            raise HazardPipeError(
                f"log corrupt: {t.report_id} {current.value} -> {t.to_stage.value}"
            )
        stages[t.report_id] = t.to_stage
    return stages


F1_GRID = [round(0.05 * i, 2) for i in range(1, 20)]  # 0.05 .. 0.95


def recalibrate(
    records: Sequence[FeedbackRecord],
    min_records: int = 50,
    n_bins: int = 10,
) -> tuple[CalibrationTable, float]:
    """Reliability-bin the resolved detections and re-pick the score threshold.

    Returns the monotone calibration table plus the grid threshold that
    maximizes F1 of "confidence >= t" against the consensus truths (ties go
    to the lowest threshold).
    """
    if len(records) < min_records:
        raise InsufficientData(f"{len(records)} records < {min_records}")

    bins: list[list[bool]] = [[] for _ in range(n_bins)]
    for record in records:
        idx = min(int(record.predicted_confidence * n_bins), n_bins - 1)
        bins[idx].append(record.confirmed)
    accuracy = [
        (sum(b) / len(b)) if b else None
        for b in bins
    ]
    table = CalibrationTable.from_bin_accuracy(accuracy)

    best_thr = F1_GRID[0]
    best_f1 = -1.0
    for thr in F1_GRID:
        tp = sum(1 for r in records if r.predicted_confidence >= thr and r.confirmed)
        fp = sum(1 for r in records if r.predicted_confidence >= thr and not r.confirmed)
        fn = sum(1 for r in records if r.predicted_confidence < thr and r.confirmed)
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom else 0.0
        if f1 > best_f1 + 1e-12:
            best_f1 = f1
            best_thr = thr
    return table, best_thr


@dataclass(frozen=True)
class LatencyStats:
    per_stage_mean_s: dict[str, float]
    end_to_end_mean_s: float
    automated_mean_s: float
    reduction_vs_baseline: float
    n_reports: int

    def to_json_dict(self) -> dict:
        return {
            "per_stage_mean_s": self.per_stage_mean_s,
            "end_to_end_mean_s": self.end_to_end_mean_s,
            "automated_mean_s": self.automated_mean_s,
            "reduction_vs_baseline": self.reduction_vs_baseline,
            "n_reports": self.n_reports,
        }


HUMAN_WAIT_STAGES = (PipelineStage.IN_VALIDATION, PipelineStage.ESCALATED)


def latency_stats(reports: Sequence[Report], baseline_manual_latency_s: float) -> LatencyStats:
    """Stage dwell times over completed (published) reports.

    end_to_end covers submission to publication; automated excludes the
    human wait stages. reduction = 1 - end_to_end / manual baseline.
    """
    completed = [r for r in reports if r.stage == PipelineStage.PUBLISHED]
    if not completed:
        raise EmptyWindow("no completed reports in window")

    stage_totals: dict[str, float] = defaultdict(float)
    end_to_end_total = 0.0
    automated_total = 0.0
    for report in completed:
        history = report.stage_history
        for (stage, entered), (_, left) in zip(history, history[1:]):
            dwell = (left - entered).total_seconds()
            stage_totals[stage.value] += dwell
            if stage not in HUMAN_WAIT_STAGES:
                automated_total += dwell
        end_to_end_total += (history[-1][1] - history[0][1]).total_seconds()

    n = len(completed)
    end_to_end_mean = end_to_end_total / n
    return LatencyStats(
        per_stage_mean_s={k: v / n for k, v in sorted(stage_totals.items())},
        end_to_end_mean_s=end_to_end_mean,
        automated_mean_s=automated_total / n,
        reduction_vs_baseline=1.0 - end_to_end_mean / baseline_manual_latency_s,
        n_reports=n,
    )
