"""Credibility-weighted crowd voting, quorum decisions, and task priority.

Per-detection consensus state is mutated only under the orchestrator's
per-detection lock; every function here is pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .config import ValidationConfig
from .core import BoundingBox, HazardClass, HazardPipeError


class NoVotes(HazardPipeError):
    """Consensus score requested with no votes cast."""


class EmptySample(HazardPipeError):
    """Agreement rate over an empty decision sample."""


class Verdict(str, Enum):
    CONFIRM = "confirm"
    REJECT = "reject"
    ADJUST = "adjust"


class ConsensusStatus(str, Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    REJECTED = "rejected"
    ESCALATED = "escalated"


@dataclass(frozen=True)
class ValidatorProfile:
    """A crowd participant. Experts carry a fixed credibility of 1.0."""

    id: str
    credibility: float = 0.5
    votes_cast: int = 0
    expert: bool = False

    def __post_init__(self):
        cred = 1.0 if self.expert else min(max(self.credibility, 0.1), 1.0)
        object.__setattr__(self, "credibility", cred)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "credibility": self.credibility,
            "votes_cast": self.votes_cast,
            "expert": self.expert,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ValidatorProfile":
        return cls(
            id=data["id"],
            credibility=data["credibility"],
            votes_cast=data["votes_cast"],
            expert=data["expert"],
        )


@dataclass(frozen=True)
class Vote:
    """One validator's judgment on one detection. Re-voting replaces, never stacks."""

    validator_id: str
    detection_id: str
    verdict: Verdict
    cast_at: datetime
    adjusted_box: Optional[BoundingBox] = None
    adjusted_class: Optional[HazardClass] = None

    def counts_as_confirm(self) -> bool:
        # An adjustment asserts the hazard is real; geometry goes to feedback.
        return self.verdict in (Verdict.CONFIRM, Verdict.ADJUST)

    def to_json_dict(self) -> dict:
        return {
            "validator_id": self.validator_id,
            "detection_id": self.detection_id,
            "verdict": self.verdict.value,
            "cast_at": self.cast_at.isoformat(),
            "adjusted_box": self.adjusted_box.to_json_dict() if self.adjusted_box else None,
            "adjusted_class": self.adjusted_class.value if self.adjusted_class else None,
        }


@dataclass(frozen=True)
class ConsensusState:
    detection_id: str
    score: float = 0.0
    n_votes: int = 0
    status: ConsensusStatus = ConsensusStatus.PENDING
    expert_decision: Optional[Verdict] = None

    def resolved(self) -> bool:
        return self.status in (ConsensusStatus.CONFIRMED, ConsensusStatus.REJECTED)

    def to_json_dict(self) -> dict:
        return {
            "detection_id": self.detection_id,
            "score": self.score,
            "n_votes": self.n_votes,
            "status": self.status.value,
            "expert_decision": self.expert_decision.value if self.expert_decision else None,
        }


@dataclass(frozen=True)
class TaskAssignment:
    detection_id: str
    priority: float
    offered_to: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "detection_id": self.detection_id,
            "priority": self.priority,
            "offered_to": list(self.offered_to),
        }


def dedupe_votes(votes: Iterable[Vote]) -> list[Vote]:
    """Keep only the latest vote per validator (one vote per validator/detection)."""
    latest: dict[str, Vote] = {}
    for vote in votes:
        prev = latest.get(vote.validator_id)
        if prev is None or vote.cast_at >= prev.cast_at:
            latest[vote.validator_id] = vote
    return list(latest.values())


def consensus_score(votes: Sequence[Vote], profiles: Mapping[str, ValidatorProfile]) -> float:
    """Credibility-weighted confirmation ratio over the deduplicated votes."""
    votes = dedupe_votes(votes)
    if not votes:
        raise NoVotes("consensus score requires at least one vote")
    total = 0.0
    confirmed = 0.0
    for vote in votes:
        weight = profiles[vote.validator_id].credibility
        total += weight
        if vote.counts_as_confirm():
            confirmed += weight
    return confirmed / total


def decide(
    state: ConsensusState,
    votes: Sequence[Vote],
    profiles: Mapping[str, ValidatorProfile],
    config: ValidationConfig,
    uncertainty: float = 0.0,
) -> ConsensusState:
    """Apply the quorum/threshold rule to the current vote set.

    High-uncertainty detections escalate straight to expert review regardless
    of votes. An escalated state only resolves through an expert decision
    (see apply_expert_decision), never by more crowd votes.
    """
    if state.status == ConsensusStatus.ESCALATED and state.expert_decision is None:
        return state
    if state.resolved() and state.expert_decision is not None:
        return state

    votes = dedupe_votes(votes)
    n = len(votes)
    score = consensus_score(votes, profiles) if n else 0.0

    if uncertainty > config.uncertainty_escalation:
        return replace(state, score=score, n_votes=n, status=ConsensusStatus.ESCALATED)
    if n < config.quorum:
        return replace(state, score=score, n_votes=n, status=ConsensusStatus.PENDING)
    if score >= config.tau_hi:
        status = ConsensusStatus.CONFIRMED
    elif score <= config.tau_lo:
        status = ConsensusStatus.REJECTED
    else:
        status = ConsensusStatus.ESCALATED
    return replace(state, score=score, n_votes=n, status=status)


def apply_expert_decision(state: ConsensusState, verdict: Verdict) -> ConsensusState:
    """Resolve an escalated detection with an expert verdict."""
    if state.status != ConsensusStatus.ESCALATED:
        raise HazardPipeError(
            f"expert decision on {state.detection_id} in status {state.status.value}"
        )
    status = (
        ConsensusStatus.CONFIRMED
        if verdict in (Verdict.CONFIRM, Verdict.ADJUST)
        else ConsensusStatus.REJECTED
    )
    return replace(state, status=status, expert_decision=verdict)


def update_credibility(
    profile: ValidatorProfile,
    vote: Vote,
    expert_truth: bool,
    eta: float = 0.05,
    floor: float = 0.1,
    ceiling: float = 1.0,
) -> ValidatorProfile:
    """Nudge credibility toward/away from the expert-resolved truth.

    expert_truth is True when the hazard was real (confirm is the correct
    verdict). Experts keep their fixed weight but still count votes.
    """
    correct = vote.counts_as_confirm() == expert_truth
    new_cred = profile.credibility + (eta if correct else -eta)
    new_cred = min(max(new_cred, floor), ceiling)
    if profile.expert:
        new_cred = profile.credibility
    return replace(profile, credibility=new_cred, votes_cast=profile.votes_cast + 1)


@dataclass(frozen=True)
class GeoDensityIndex:
    """Historical report counts per grid cell, for rural prioritization."""

    counts: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def density(self, cell: Optional[tuple[int, int]]) -> int:
        if cell is None:
            return 0
        return self.counts.get(cell, 0)


def prioritize(
    detections: Sequence[tuple[str, float, Optional[tuple[int, int]]]],
    density_index: GeoDensityIndex,
    rural_boost: float = 1.0,
) -> list[TaskAssignment]:
    """Order validation tasks: uncertain first, sparse-area reports boosted.

    detections: (detection_id, uncertainty, grid cell or None) tuples.
    priority = uncertainty + rural_boost / (1 + historical density).
    """
    assignments = [
        TaskAssignment(
            detection_id=det_id,
            priority=uncertainty + rural_boost / (1.0 + density_index.density(cell)),
        )
        for det_id, uncertainty, cell in detections
    ]
    assignments.sort(key=lambda a: (-a.priority, a.detection_id))
    return assignments


def agreement_rate(
    decisions: Mapping[str, ConsensusStatus],
    expert_labels: Mapping[str, bool],
) -> float:
    """Fraction of resolved decisions matching the expert label.

    expert_labels: detection id -> True when the hazard is real. Pending and
    escalated-unresolved entries are a caller error.
    """
    keys = [k for k in decisions if k in expert_labels]
    if not keys:
        raise EmptySample("no resolved decisions overlap the expert labels")
    matches = 0
    for key in keys:
        status = decisions[key]
        if status not in (ConsensusStatus.CONFIRMED, ConsensusStatus.REJECTED):
            raise HazardPipeError(f"decision {key} not resolved: {status.value}")
        want = ConsensusStatus.CONFIRMED if expert_labels[key] else ConsensusStatus.REJECTED
        if status == want:
            matches += 1
    return matches / len(keys)
