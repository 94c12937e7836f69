"""Detector backend boundary and confidence calibration.

Backends are pluggable: the shipped ones are the deterministic mock used by
the simulation harness (sim/mock_detector.py) and an external-process bridge
speaking one JSON object per line on stdin/stdout.
"""
from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import BoundingBox, HazardClass, HazardPipeError


class DetectorError(HazardPipeError):
    """The backend failed or returned malformed output."""


@dataclass(frozen=True)
class ImageHandle:
    """What a backend needs to locate an image: content ref plus pixel dims."""

    image_ref: str
    width: int
    height: int


@dataclass(frozen=True)
class RawDetection:
    box: BoundingBox
    hazard_class: HazardClass
    raw_score: float


@dataclass
class FeatureStack:
    """Feature maps plus per-class channel weights, the input to CAM overlays.

    channels: (K, h, w) non-negative activations; class_weights maps each
    supported class to a length-K weight vector. image_size is the (H, W)
    the heatmap upsamples to.
    """

    channels: np.ndarray
    class_weights: dict[HazardClass, np.ndarray]
    image_size: tuple[int, int]

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=float)
        if self.channels.ndim != 3 or self.channels.shape[0] < 1:
            raise HazardPipeError("channels must be a (K, h, w) stack with K >= 1")
        if (self.channels < 0).any():
            raise HazardPipeError("activations must be non-negative")
        k = self.channels.shape[0]
        self.class_weights = {
            cls: np.asarray(w, dtype=float) for cls, w in self.class_weights.items()
        }
        for cls, w in self.class_weights.items():
            if w.shape != (k,):
                raise HazardPipeError(f"class {cls.value} weight vector must have length {k}")


class DetectorBackend:
    """Interface every detection backend implements."""

    #: (max_image_edge, supported classes)
    max_image_edge: int = 4096
    classes: frozenset[HazardClass] = frozenset(HazardClass)

    def detect(self, image: ImageHandle) -> list[RawDetection]:
        raise NotImplementedError

    def activations(self, image: ImageHandle) -> Optional[FeatureStack]:
        """Feature maps for CAM; None when the backend lacks the capability."""
        return None


class ExternalProcessDetector(DetectorBackend):
    """Bridge to an external detector process.

    Protocol: one request per line on stdin ``{"image_ref", "width",
    "height"}`` answered by one line on stdout ``{"detections": [{"box":
    [x_min, y_min, x_max, y_max], "class": ..., "score": ...}]}``.
    """

    def __init__(self, command: Sequence[str]):
        self._command = list(command)
        self._proc: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()

    def _ensure_process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def detect(self, image: ImageHandle) -> list[RawDetection]:
        request = json.dumps(
            {"image_ref": image.image_ref, "width": image.width, "height": image.height}
        )
        with self._lock:
            proc = self._ensure_process()
            try:
                proc.stdin.write(request + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as err:
                raise DetectorError(f"detector process failed: {err}") from err
        if not line:
            raise DetectorError("detector process closed its stdout")
        try:
            payload = json.loads(line)
            return [
                RawDetection(
                    box=BoundingBox(*item["box"]),
                    hazard_class=HazardClass(item["class"]),
                    raw_score=float(item["score"]),
                )
                for item in payload["detections"]
            ]
        except (KeyError, ValueError, TypeError) as err:
            raise DetectorError(f"malformed detector reply: {line!r}") from err

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)


@dataclass(frozen=True)
class CalibrationTable:
    """Monotone piecewise-linear map from raw score to calibrated probability."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or len(self.xs) < 2:
            raise HazardPipeError("calibration table needs matching knot arrays")
        if any(b < a for a, b in zip(self.xs, self.xs[1:])):
            raise HazardPipeError("knot positions must be non-decreasing")
        if any(b < a - 1e-12 for a, b in zip(self.ys, self.ys[1:])):
            raise HazardPipeError("calibrated probabilities must be monotone")

    @classmethod
    def identity(cls) -> "CalibrationTable":
        return cls(xs=(0.0, 1.0), ys=(0.0, 1.0))

    @classmethod
    def from_bin_accuracy(cls, bin_accuracy: Sequence[Optional[float]]) -> "CalibrationTable":
        """Build from 10 equal-width reliability bins (None = empty bin).

        Empty bins are interpolated from neighbors; monotonicity is enforced
        with a running maximum.
        """
        n = len(bin_accuracy)
        centers = [(i + 0.5) / n for i in range(n)]
        known = [(c, a) for c, a in zip(centers, bin_accuracy) if a is not None]
        if not known:
            return cls.identity()
        filled = [
            float(np.interp(c, [k for k, _ in known], [v for _, v in known]))
            for c in centers
        ]
        monotone = np.maximum.accumulate(filled)
        xs = [0.0] + centers + [1.0]
        ys = [monotone[0]] + list(monotone) + [monotone[-1]]
        return cls(xs=tuple(xs), ys=tuple(ys))

    def apply(self, raw_score: float) -> float:
        return float(np.interp(raw_score, self.xs, self.ys))


def calibrate_uncertainty(raw_score: float, table: CalibrationTable) -> float:
    """uncertainty = 1 - calibrated probability; identity table pre-calibration."""
    return min(1.0, max(0.0, 1.0 - table.apply(raw_score)))
