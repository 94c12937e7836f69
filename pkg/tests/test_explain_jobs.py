import threading
import time

import pytest

from hazardpipe.explain import JobState, LimeJobRunner, UnknownDetection
from hazardpipe.explain.lime import LimeExplanation


def explanation():
    return LimeExplanation(
        cell_importance=(0.5, 0.1, 0.0, -0.2),
        segment_grid=(2, 2),
        n_samples=16,
        kernel_width=0.25,
        top_k=(0, 3, 1, 2),
    )


class TestLimeJobRunner:
    def test_happy_path(self):
        runner = LimeJobRunner(lambda det: explanation(), lambda det: True, workers=1)
        job = runner.submit("d1")
        runner.shutdown()
        final = runner.poll(job.id)
        assert final.state == JobState.DONE
        assert len(final.result.cell_importance) == 4
        assert final.finished_at is not None

    def test_duplicate_submission_returns_existing(self):
        gate = threading.Event()

        def slow(det):
            gate.wait(timeout=5)
            return explanation()

        runner = LimeJobRunner(slow, lambda det: True, workers=1)
        first = runner.submit("d1")
        second = runner.submit("d1")
        assert first.id == second.id
        gate.set()
        runner.shutdown()

    def test_poll_before_completion_has_no_result(self):
        gate = threading.Event()

        def slow(det):
            gate.wait(timeout=5)
            return explanation()

        runner = LimeJobRunner(slow, lambda det: True, workers=1)
        job = runner.submit("d1")
        polled = runner.poll(job.id)
        assert polled.state in (JobState.QUEUED, JobState.RUNNING)
        assert polled.result is None
        gate.set()
        runner.shutdown()

    def test_failure_records_reason_and_allows_resubmit(self):
        calls = []

        def flaky(det):
            calls.append(det)
            if len(calls) == 1:
                raise RuntimeError("boom")
            return explanation()

        runner = LimeJobRunner(flaky, lambda det: True, workers=1)
        job = runner.submit("d1")
        deadline = time.time() + 5
        while runner.poll(job.id).state not in (JobState.DONE, JobState.FAILED):
            assert time.time() < deadline
            time.sleep(0.01)
        failed = runner.poll(job.id)
        assert failed.state == JobState.FAILED
        assert "boom" in failed.failure_reason

        retry = runner.submit("d1")
        assert retry.id != job.id
        runner.shutdown()
        assert runner.poll(retry.id).state == JobState.DONE

    def test_unknown_detection(self):
        runner = LimeJobRunner(lambda det: explanation(), lambda det: det == "known")
        with pytest.raises(UnknownDetection):
            runner.submit("missing")
        runner.shutdown()

    def test_concurrent_submissions_dedupe(self):
        runner = LimeJobRunner(lambda det: explanation(), lambda det: True, workers=2)
        ids = set()
        threads = [
            threading.Thread(target=lambda: ids.add(runner.submit("d9").id))
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        runner.shutdown()
        assert len(ids) == 1
