"""Asynchronous LIME audit jobs on a bounded worker pool."""
from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from typing import Callable, Optional

from ..core import HazardPipeError, utc_now
from .lime import LimeExplanation


class UnknownDetection(HazardPipeError):
    """LIME job requested for a detection that does not exist."""


class JobState(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass(frozen=True)
class ExplainJob:
    id: str
    detection_id: str
    state: JobState
    submitted_at: datetime
    finished_at: Optional[datetime] = None
    result: Optional[LimeExplanation] = None
    failure_reason: Optional[str] = None

    def __post_init__(self):
        if (self.result is not None) != (self.state == JobState.DONE):
            raise HazardPipeError("result present iff job is done")

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "detection_id": self.detection_id,
            "state": self.state.value,
            "submitted_at": self.submitted_at.isoformat(),
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
            "result": self.result.to_json_dict() if self.result else None,
            "failure_reason": self.failure_reason,
        }


class LimeJobRunner:
    """Owns the job store and a bounded pool; safe under concurrent submit/poll.

    Duplicate submissions for a detection return the existing job unless it
    failed; each job executes at most once.
    """

    def __init__(
        self,
        explain_fn: Callable[[str], LimeExplanation],
        detection_exists: Callable[[str], bool],
        workers: int = 2,
    ):
        self._explain_fn = explain_fn
        self._detection_exists = detection_exists
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="lime")
        self._lock = threading.Lock()
        self._jobs: dict[str, ExplainJob] = {}
        self._by_detection: dict[str, str] = {}

    def submit(self, detection_id: str) -> ExplainJob:
        if not self._detection_exists(detection_id):
            raise UnknownDetection(detection_id)
        with self._lock:
            existing_id = self._by_detection.get(detection_id)
            if existing_id is not None:
                existing = self._jobs[existing_id]
                if existing.state != JobState.FAILED:
                    return existing
            job = ExplainJob(
                id=uuid.uuid4().hex,
                detection_id=detection_id,
                state=JobState.QUEUED,
                submitted_at=utc_now(),
            )
            self._jobs[job.id] = job
            self._by_detection[detection_id] = job.id
        self._pool.submit(self._run, job.id)
        return job

    def poll(self, job_id: str) -> ExplainJob:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise HazardPipeError(f"unknown job {job_id}")
        return job

    def _run(self, job_id: str) -> None:
        with self._lock:
            job = self._jobs[job_id]
            if job.state != JobState.QUEUED:
                return  # executed already; never run twice
            job = replace(job, state=JobState.RUNNING)
            self._jobs[job_id] = job
        try:
            result = self._explain_fn(job.detection_id)
            done = replace(
                job, state=JobState.DONE, result=result, finished_at=utc_now()
            )
        except Exception as err:
            done = replace(
                job,
                state=JobState.FAILED,
                failure_reason=str(err),
                finished_at=utc_now(),
            )
        with self._lock:
            self._jobs[job_id] = done

    def shutdown(self, wait: bool = True) -> None:
        self._pool.shutdown(wait=wait)
