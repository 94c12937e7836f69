"""Keyed storage for every pipeline entity, with optional file durability.

The file-backed mode appends every mutation to an oplog (JSON Lines);
reopening a store replays the log, so a restart reproduces identical reads.
Referential integrity (vote -> detection -> report) is checked on write.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Callable, Iterable, Optional

from .consensus import ConsensusState, ConsensusStatus, ValidatorProfile, Verdict, Vote
from .core import Detection, HazardPipeError, Report, parse_ts
from .orchestrator import FeedbackRecord, StageTransition
from .reporting import DraftReport


class IntegrityError(HazardPipeError):
    """A write referenced an entity that does not exist."""


def _vote_from_json(data: dict) -> Vote:
    from .core import BoundingBox, HazardClass

    box = data.get("adjusted_box")
    cls = data.get("adjusted_class")
    from datetime import datetime

    return Vote(
        validator_id=data["validator_id"],
        detection_id=data["detection_id"],
        verdict=Verdict(data["verdict"]),
        cast_at=datetime.fromisoformat(data["cast_at"]),
        adjusted_box=BoundingBox.from_json_dict(box) if box else None,
        adjusted_class=HazardClass(cls) if cls else None,
    )


def _consensus_from_json(data: dict) -> ConsensusState:
    return ConsensusState(
        detection_id=data["detection_id"],
        score=data["score"],
        n_votes=data["n_votes"],
        status=ConsensusStatus(data["status"]),
        expert_decision=Verdict(data["expert_decision"]) if data["expert_decision"] else None,
    )


class Store:
    """In-memory persistence layer; subclassed for file durability."""

    def __init__(self):
        self._lock = threading.RLock()
        self.reports: dict[str, Report] = {}
        self.detection_index: dict[str, str] = {}  # detection id -> report id
        self.votes: dict[str, dict[str, Vote]] = {}  # detection id -> validator -> vote
        self.profiles: dict[str, ValidatorProfile] = {}
        self.consensus: dict[str, ConsensusState] = {}
        self.transitions: list[StageTransition] = []
        self.feedback: list[FeedbackRecord] = []
        self.drafts: dict[str, DraftReport] = {}
        self.dedup_keys: dict[int, str] = {}  # perceptual hash -> report id
        self.quality_flags: dict[str, list[str]] = {}

    # -- journal hook -------------------------------------------------------
    def _journal(self, op: str, payload: dict) -> None:  # overridden by FileStore
        pass

    # -- reports ------------------------------------------------------------
    def put_report(self, report: Report) -> None:
        with self._lock:
            self.reports[report.id] = report
            for det in report.detections:
                self.detection_index[det.id] = report.id
            self._journal("report", report.to_json_dict())

    def get_report(self, report_id: str) -> Optional[Report]:
        with self._lock:
            return self.reports.get(report_id)

    def all_reports(self) -> list[Report]:
        with self._lock:
            return list(self.reports.values())

    # -- detections ---------------------------------------------------------
    def get_detection(self, detection_id: str) -> Optional[tuple[str, Detection]]:
        with self._lock:
            report_id = self.detection_index.get(detection_id)
            if report_id is None:
                return None
            report = self.reports[report_id]
            for det in report.detections:
                if det.id == detection_id:
                    return report_id, det
            return None

    # -- votes ----------------------------------------------------------------
    def put_vote(self, vote: Vote) -> None:
        with self._lock:
            if vote.detection_id not in self.detection_index:
                raise IntegrityError(f"vote references unknown detection {vote.detection_id}")
            if vote.validator_id not in self.profiles:
                raise IntegrityError(f"vote references unknown validator {vote.validator_id}")
            self.votes.setdefault(vote.detection_id, {})[vote.validator_id] = vote
            self._journal("vote", vote.to_json_dict())

    def votes_for(self, detection_id: str) -> list[Vote]:
        with self._lock:
            return list(self.votes.get(detection_id, {}).values())

    def voters_of(self, detection_id: str) -> set[str]:
        with self._lock:
            return set(self.votes.get(detection_id, {}))

    # -- profiles -------------------------------------------------------------
    def put_profile(self, profile: ValidatorProfile) -> None:
        with self._lock:
            self.profiles[profile.id] = profile
            self._journal("profile", profile.to_json_dict())

    def get_profile(self, validator_id: str) -> Optional[ValidatorProfile]:
        with self._lock:
            return self.profiles.get(validator_id)

    # -- consensus --------------------------------------------------------------
    def put_consensus(self, state: ConsensusState) -> None:
        with self._lock:
            if state.detection_id not in self.detection_index:
                raise IntegrityError(
                    f"consensus references unknown detection {state.detection_id}"
                )
            self.consensus[state.detection_id] = state
            self._journal("consensus", state.to_json_dict())

    def get_consensus(self, detection_id: str) -> Optional[ConsensusState]:
        with self._lock:
            return self.consensus.get(detection_id)

    def all_consensus(self) -> dict[str, ConsensusState]:
        with self._lock:
            return dict(self.consensus)

    # -- transition log (append-only) -------------------------------------------
    def append_transition(self, transition: StageTransition) -> None:
        with self._lock:
            self.transitions.append(transition)
            self._journal("transition", transition.to_json_dict())

    def all_transitions(self) -> list[StageTransition]:
        with self._lock:
            return list(self.transitions)

    # -- feedback -----------------------------------------------------------------
    def append_feedback(self, record: FeedbackRecord) -> None:
        with self._lock:
            self.feedback.append(record)
            self._journal("feedback", record.to_json_dict())

    def feedback_records(self) -> list[FeedbackRecord]:
        with self._lock:
            return list(self.feedback)

    # -- drafts ---------------------------------------------------------------------
    def put_draft(self, draft: DraftReport) -> None:
        with self._lock:
            self.drafts[draft.id] = draft
            self._journal("draft", draft.to_json_dict())

    def get_draft(self, draft_id: str) -> Optional[DraftReport]:
        with self._lock:
            return self.drafts.get(draft_id)

    def all_drafts(self) -> list[DraftReport]:
        with self._lock:
            return list(self.drafts.values())

    # -- dedup / quality ---------------------------------------------------------
    def claim_dedup_key(
        self, key: int, report_id: str, matcher: Callable[[int, int], bool]
    ) -> Optional[str]:
        """Atomically claim a perceptual hash; returns the owner on collision."""
        with self._lock:
            for existing, owner in self.dedup_keys.items():
                if matcher(existing, key):
                    return owner
            self.dedup_keys[key] = report_id
            self._journal("dedup", {"key": key, "report_id": report_id})
            return None

    def add_quality_flag(self, report_id: str, flag: str) -> None:
        with self._lock:
            self.quality_flags.setdefault(report_id, []).append(flag)
            self._journal("quality_flag", {"report_id": report_id, "flag": flag})

    def flags_for(self, report_id: str) -> list[str]:
        with self._lock:
            return list(self.quality_flags.get(report_id, []))


class FileStore(Store):
    """Store with an append-only oplog under data_dir/oplog.jsonl."""

    def __init__(self, data_dir: str | Path):
        super().__init__()
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._oplog_path = self.data_dir / "oplog.jsonl"
        self._replaying = False
        if self._oplog_path.exists():
            self._replay()

    def _journal(self, op: str, payload: dict) -> None:
        if self._replaying:
            return
        with self._oplog_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"op": op, "data": payload}, sort_keys=True) + "\n")

    def _replay(self) -> None:
        appliers = {
            "report": lambda d: self.put_report(Report.from_json_dict(d)),
            "vote": lambda d: self.put_vote(_vote_from_json(d)),
            "profile": lambda d: self.put_profile(ValidatorProfile.from_json_dict(d)),
            "consensus": lambda d: self.put_consensus(_consensus_from_json(d)),
            "transition": lambda d: self.append_transition(StageTransition.from_json_dict(d)),
            "feedback": lambda d: self.append_feedback(FeedbackRecord.from_json_dict(d)),
            "draft": lambda d: self.put_draft(DraftReport.from_json_dict(d)),
            "dedup": lambda d: self.dedup_keys.__setitem__(d["key"], d["report_id"]),
            "quality_flag": lambda d: self.quality_flags.setdefault(d["report_id"], []).append(
                d["flag"]
            ),
        }
        self._replaying = True
        try:
            for line in self._oplog_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                entry = json.loads(line)
                appliers[entry["op"]](entry["data"])
        finally:
            self._replaying = False
