"""Detection evaluation: IoU matching, average precision, dataset metrics.

Matching is greedy in confidence order and class-aware; AP uses all-points
interpolation of the precision envelope. These are pure functions, safe to
run per-image in parallel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .core import BoundingBox, HazardClass, HazardPipeError

IOU_SWEEP = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95]


class EmptyDataset(HazardPipeError):
    """evaluate() was handed no images."""


@dataclass(frozen=True)
class LabeledBox:
    """A ground-truth box with its class."""

    box: BoundingBox
    hazard_class: HazardClass


@dataclass(frozen=True)
class ScoredBox:
    """A predicted box with class and confidence score."""

    box: BoundingBox
    hazard_class: HazardClass
    score: float


@dataclass
class GroundTruth:
    """image id -> annotated boxes, loadable from a JSON Lines file."""

    boxes: dict[str, list[LabeledBox]] = field(default_factory=dict)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "GroundTruth":
        truth = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            truth.boxes[record["image_id"]] = [
                LabeledBox(
                    box=BoundingBox(*item["box"]),
                    hazard_class=HazardClass(item["class"]),
                )
                for item in record["boxes"]
            ]
        return truth

    def to_jsonl(self, path: str | Path) -> None:
        lines = []
        for image_id in sorted(self.boxes):
            lines.append(
                json.dumps(
                    {
                        "image_id": image_id,
                        "boxes": [
                            {
                                "box": [b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max],
                                "class": b.hazard_class.value,
                            }
                            for b in self.boxes[image_id]
                        ],
                    },
                    sort_keys=True,
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class MetricsReport:
    """Dataset-level detection statistics plus pipeline context fields."""

    box_precision: float
    recall: float
    map_50: float
    map_50_95: float
    per_class: dict[str, dict[str, float]]
    n_images: int
    mean_latency_s: float = 0.0
    n_sites_found: int = 0

    def __post_init__(self):
        for name in ("box_precision", "recall", "map_50", "map_50_95"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise HazardPipeError(f"{name}={value} outside [0,1]")
        if self.map_50_95 > self.map_50 + 1e-12:
            raise HazardPipeError(
                f"map_50_95={self.map_50_95} exceeds map_50={self.map_50}"
            )

    def to_json_dict(self) -> dict:
        return {
            "box_precision": self.box_precision,
            "recall": self.recall,
            "map_50": self.map_50,
            "map_50_95": self.map_50_95,
            "per_class": self.per_class,
            "mean_latency_s": self.mean_latency_s,
            "n_images": self.n_images,
            "n_sites_found": self.n_sites_found,
        }

    def with_context(self, mean_latency_s: float, n_sites_found: int) -> "MetricsReport":
        return replace(self, mean_latency_s=mean_latency_s, n_sites_found=n_sites_found)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def _pred_sort_key(pred: ScoredBox):
    box = pred.box
    return (-pred.score, box.x_min, box.y_min, box.x_max, box.y_max)


def match_detections(
    preds: Sequence[ScoredBox],
    truths: Sequence[LabeledBox],
    iou_threshold: float,
) -> list[tuple[ScoredBox, Optional[LabeledBox]]]:
    """Greedy one-to-one matching within a single image.

    Predictions are visited in descending confidence (ties by box coordinates);
    each takes the highest-IoU unmatched truth of the same class with
    IoU >= threshold. Unmatched predictions are false positives.
    """
    ordered = sorted(preds, key=_pred_sort_key)
    taken = [False] * len(truths)
    result: list[tuple[ScoredBox, Optional[LabeledBox]]] = []
    for pred in ordered:
        best_idx = -1
        best_iou = 0.0
        for idx, truth in enumerate(truths):
            if taken[idx] or truth.hazard_class != pred.hazard_class:
                continue
            overlap = iou(pred.box, truth.box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_idx = idx
        if best_idx >= 0:
            taken[best_idx] = True
            result.append((pred, truths[best_idx]))
        else:
            result.append((pred, None))
    return result


def average_precision(
    preds_by_image: Mapping[str, Sequence[ScoredBox]],
    truths_by_image: Mapping[str, Sequence[LabeledBox]],
    iou_threshold: float,
) -> float:
    """All-points-interpolated AP for a single class across a dataset.

    Inputs must already be filtered to one class. AP is 0 when there are
    predictions but no truths, and 1 when both sides are empty.
    """
    n_truths = sum(len(v) for v in truths_by_image.values())
    n_preds = sum(len(v) for v in preds_by_image.values())
    if n_truths == 0:
        return 1.0 if n_preds == 0 else 0.0
    if n_preds == 0:
        return 0.0

    # (score, sort key, is_tp) for every prediction, matched per image.
    scored: list[tuple[ScoredBox, bool]] = []
    for image_id, preds in preds_by_image.items():
        truths = truths_by_image.get(image_id, ())
        for pred, matched in match_detections(preds, truths, iou_threshold):
            scored.append((pred, matched is not None))
    scored.sort(key=lambda item: _pred_sort_key(item[0]))

    tp_cum = 0
    fp_cum = 0
    recalls = [0.0]
    precisions = [1.0]
    for _, is_tp in scored:
        if is_tp:
            tp_cum += 1
        else:
            fp_cum += 1
        recalls.append(tp_cum / n_truths)
        precisions.append(tp_cum / (tp_cum + fp_cum))

    # Precision envelope: max precision at any recall >= r.
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    for i in range(1, len(recalls)):
        ap += (recalls[i] - recalls[i - 1]) * precisions[i]
    return ap


def _counts_at_threshold(
    preds_by_image: Mapping[str, Sequence[ScoredBox]],
    truth: GroundTruth,
    iou_threshold: float,
) -> tuple[int, int, int]:
    """(TP, FP, FN) over all images with class-aware greedy matching."""
    tp = fp = 0
    n_truths = sum(len(v) for v in truth.boxes.values())
    image_ids = set(preds_by_image) | set(truth.boxes)
    for image_id in image_ids:
        preds = preds_by_image.get(image_id, ())
        truths = truth.boxes.get(image_id, ())
        for _, matched in match_detections(preds, truths, iou_threshold):
            if matched is not None:
                tp += 1
            else:
                fp += 1
    return tp, fp, n_truths - tp


def _filter_class(
    preds_by_image: Mapping[str, Sequence[ScoredBox]],
    truth: GroundTruth,
    hazard_class: HazardClass,
) -> tuple[dict[str, list[ScoredBox]], dict[str, list[LabeledBox]]]:
    preds = {
        image_id: [p for p in items if p.hazard_class == hazard_class]
        for image_id, items in preds_by_image.items()
    }
    truths = {
        image_id: [t for t in items if t.hazard_class == hazard_class]
        for image_id, items in truth.boxes.items()
    }
    return preds, truths


def evaluate(
    preds_by_image: Mapping[str, Sequence[ScoredBox]],
    truth: GroundTruth,
    iou_threshold: float = 0.5,
) -> MetricsReport:
    """Full dataset metrics: box precision, recall, mAP@0.50 and mAP@0.50-0.95."""
    image_ids = set(preds_by_image) | set(truth.boxes)
    if not image_ids:
        raise EmptyDataset("no images to evaluate")

    classes = sorted(
        {p.hazard_class for items in preds_by_image.values() for p in items}
        | {t.hazard_class for items in truth.boxes.values() for t in items},
        key=lambda c: c.value,
    )

    tp, fp, fn = _counts_at_threshold(preds_by_image, truth, iou_threshold)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0

    per_class: dict[str, dict[str, float]] = {}
    ap50_values = []
    ap_sweep_values = []
    for hazard_class in classes:
        preds_c, truths_c = _filter_class(preds_by_image, truth, hazard_class)
        ap50 = average_precision(preds_c, truths_c, 0.5)
        sweep = [average_precision(preds_c, truths_c, thr) for thr in IOU_SWEEP]
        ap50_values.append(ap50)
        ap_sweep_values.append(sum(sweep) / len(sweep))
        n_truth_c = sum(len(v) for v in truths_c.values())
        n_pred_c = sum(len(v) for v in preds_c.values())
        per_class[hazard_class.value] = {
            "ap_50": ap50,
            "ap_50_95": ap_sweep_values[-1],
            "n_truths": float(n_truth_c),
            "n_preds": float(n_pred_c),
        }

    map_50 = sum(ap50_values) / len(ap50_values) if ap50_values else 1.0
    map_50_95 = sum(ap_sweep_values) / len(ap_sweep_values) if ap_sweep_values else 1.0
    return MetricsReport(
        box_precision=precision,
        recall=recall,
        map_50=map_50,
        map_50_95=map_50_95,
        per_class=per_class,
        n_images=len(image_ids),
    )


def load_predictions_jsonl(path: str | Path) -> dict[str, list[ScoredBox]]:
    """Predictions file: JSON Lines, one image per line, same shape as the wire format."""
    preds: dict[str, list[ScoredBox]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        preds[record["image_id"]] = [
            ScoredBox(
                box=BoundingBox(*item["box"]),
                hazard_class=HazardClass(item["class"]),
                score=float(item["score"]),
            )
            for item in record["detections"]
        ]
    return preds
