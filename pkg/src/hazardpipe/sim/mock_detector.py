"""Deterministic detector stand-in with a calibrated error plan.

The plan fixes, at construction, exactly which truth boxes get missed and how
many false positives appear, so dataset-level precision and recall land on
the configured targets instead of drifting with sampling noise. Each box's
marginal miss probability still equals the configured rate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import BoundingBox, HazardClass
from ..detection import DetectorBackend, FeatureStack, ImageHandle, RawDetection
from ..metrics import iou
from .scenario import CLASSES, IMAGE_SIZE, Scenario


@dataclass
class _PlannedDetection:
    box: BoundingBox
    hazard_class: HazardClass
    score: float
    is_true_positive: bool
    truth_index: int = -1


class MockDetector(DetectorBackend):
    """DetectorBackend over scenario descriptors. Deterministic per seed."""

    def __init__(self, scenario: Scenario, seed_salt: int = 0):
        params = scenario.params
        self.scenario = scenario
        rng = np.random.default_rng((params.seed, 0xDE7EC7, seed_salt))
        self._plan: dict[str, list[_PlannedDetection]] = {}
        self._build_plan(rng)

    def _build_plan(self, rng: np.random.Generator) -> None:
        params = self.scenario.params

        all_truths: list[tuple[str, int]] = []
        for img in self.scenario.images:
            for idx in range(len(img.truth_boxes)):
                all_truths.append((img.image_id, idx))
            self._plan[img.image_id] = []

        # Misses: an exact-count random subset (marginal rate == miss_rate).
        n_missed = int(round(params.miss_rate * len(all_truths)))
        missed = set(
            tuple(all_truths[i]) for i in rng.choice(len(all_truths), size=n_missed, replace=False)
        )

        jitter = params.localization_jitter_px
        confusion = params.confusion
        kept = 0
        for img in self.scenario.images:
            for idx, labeled in enumerate(img.truth_boxes):
                if (img.image_id, idx) in missed:
                    continue
                kept += 1
                box = self._jitter_box(labeled.box, jitter, rng)
                cls = labeled.hazard_class
                if confusion is not None:
                    k = CLASSES.index(cls)
                    cls = CLASSES[int(rng.choice(len(CLASSES), p=confusion[k]))]
                self._plan[img.image_id].append(
                    _PlannedDetection(
                        box=box,
                        hazard_class=cls,
                        score=float(rng.uniform(0.55, 0.99)),
                        is_true_positive=True,
                        truth_index=idx,
                    )
                )

        # False positives: exact count, spread uniformly over images.
        n_fp = int(round(kept * params.false_positive_rate))
        image_ids = [img.image_id for img in self.scenario.images]
        fp_targets = rng.choice(len(image_ids), size=n_fp, replace=True)
        for target in fp_targets:
            img = self.scenario.images[int(target)]
            box, cls = self._fp_box(img.truth_boxes, rng)
            self._plan[img.image_id].append(
                _PlannedDetection(
                    box=box,
                    hazard_class=cls,
                    score=float(rng.uniform(0.55, 0.99)),
                    is_true_positive=False,
                )
            )
        for detections in self._plan.values():
            detections.sort(key=lambda d: -d.score)

    @staticmethod
    def _jitter_box(box: BoundingBox, jitter: float, rng: np.random.Generator) -> BoundingBox:
        if jitter <= 0:
            return box
        w_img, h_img = IMAGE_SIZE
        # Clip at 2 sigma: keeps IoU with the source box comfortably above 0.5.
        dx, dy = np.clip(rng.normal(0, jitter, size=2), -2 * jitter, 2 * jitter)
        x0 = min(max(box.x_min + dx, 0.0), w_img - 2.0)
        y0 = min(max(box.y_min + dy, 0.0), h_img - 2.0)
        x1 = min(box.x_max + dx, float(w_img))
        y1 = min(box.y_max + dy, float(h_img))
        return BoundingBox(round(x0, 2), round(y0, 2), round(max(x1, x0 + 1), 2), round(max(y1, y0 + 1), 2))

    @staticmethod
    def _fp_box(
        truths, rng: np.random.Generator
    ) -> tuple[BoundingBox, HazardClass]:
        """A spurious detection that cannot match any same-class truth."""
        w_img, h_img = IMAGE_SIZE
        for _ in range(500):
            bw = float(rng.uniform(50, 150))
            bh = float(rng.uniform(50, 150))
            x0 = float(rng.uniform(0, w_img - bw))
            y0 = float(rng.uniform(0, h_img - bh))
            box = BoundingBox(round(x0, 2), round(y0, 2), round(x0 + bw, 2), round(y0 + bh, 2))
            cls = CLASSES[int(rng.integers(0, len(CLASSES)))]
            if all(
                iou(box, t.box) < 0.3 for t in truths if t.hazard_class == cls
            ):
                return box, cls
        # Fall back to a distinct class in a corner; cannot match anything.
        return BoundingBox(0, 0, 30, 30), HazardClass.OTHER

    # -- DetectorBackend interface ------------------------------------------
    def detect(self, image: ImageHandle) -> list[RawDetection]:
        planned = self._plan.get(image.image_ref)
        if planned is None:
            return []
        return [
            RawDetection(box=d.box, hazard_class=d.hazard_class, raw_score=d.score)
            for d in planned
        ]

    def activations(self, image: ImageHandle) -> FeatureStack:
        return self.scenario.descriptor(image.image_ref).features

    # -- ground-truth helpers for the harness --------------------------------
    def is_true_positive(self, image_id: str, detection_index: int) -> bool:
        return self._plan[image_id][detection_index].is_true_positive

    def truth_box_for(self, image_id: str, detection_index: int):
        planned = self._plan[image_id][detection_index]
        if planned.truth_index < 0:
            return None
        return self.scenario.descriptor(image_id).truth_boxes[planned.truth_index].box
