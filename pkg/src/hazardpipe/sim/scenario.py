"""Synthetic dataset generation: planted hotspot sites, per-image ground
truth, and feature stacks whose hot regions coincide with the truth boxes.

Images are descriptors, not pixels: everything downstream that needs pixel
content (LIME, overlays) synthesizes it from the descriptor on demand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Optional

import numpy as np

from ..config import PipelineConfig
from ..core import BoundingBox, GeoPoint, HazardClass, HazardPipeError
from ..detection import FeatureStack
from ..geo import METERS_PER_DEGREE, Region
from ..metrics import GroundTruth, LabeledBox

CLASSES = list(HazardClass)
CLASS_WEIGHTS = [0.35, 0.2, 0.2, 0.15, 0.1]  # plastic foil dominates the litter mix

FEATURE_GRID = (12, 16)  # h, w of the synthetic activation maps
IMAGE_SIZE = (640, 480)  # w, h


class InfeasibleConfig(HazardPipeError):
    """Scenario parameters cannot produce a dataset."""


@dataclass(frozen=True)
class ScenarioParams:
    n_images: int = 1000
    n_sites: int = 50
    site_members: int = 12  # images per planted site
    min_site_separation_m: float = 2500.0
    member_scatter_m: float = 60.0
    boxes_per_image: tuple[int, int] = (1, 4)
    miss_rate: float = 0.403
    false_positive_rate: float = 0.171  # FP count target as a fraction of TP
    localization_jitter_px: float = 3.0
    confusion: Optional[np.ndarray] = None  # None = identity
    n_validators: int = 252
    n_experts: int = 6
    accuracy_mean: float = 0.553
    accuracy_sd: float = 0.05
    adjust_probability: float = 0.1
    submitter_from_pool_p: float = 0.5
    # simulated-clock delays
    detect_latency_s: float = 0.1
    dispatch_delay_s: float = 60.0
    vote_delay_mean_h: float = 1.2
    expert_delay_mean_h: float = 1.5
    draft_delay_s: float = 1800.0
    editorial_delay_s: float = 7200.0
    arrival_span_days: float = 30.0
    wave_size: int = 50
    seed: int = 20240601
    region: tuple[float, float, float, float] = (39.20, 40.00, 2.30, 3.50)

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "ScenarioParams":
        sim = cfg.simulation
        return cls(
            n_images=sim.n_images,
            n_sites=sim.n_sites,
            miss_rate=sim.miss_rate,
            false_positive_rate=sim.false_positive_rate,
            localization_jitter_px=sim.localization_jitter_px,
            n_validators=sim.n_validators,
            accuracy_mean=sim.accuracy_mean,
            accuracy_sd=sim.accuracy_sd,
            seed=sim.seed,
            region=(cfg.geo.lat_min, cfg.geo.lat_max, cfg.geo.lon_min, cfg.geo.lon_max),
        )


@dataclass
class ImageDescriptor:
    image_id: str
    geo: GeoPoint
    captured_at: datetime
    truth_boxes: list[LabeledBox]
    features: FeatureStack
    site_index: Optional[int]  # which planted site, None for background
    submitter_validator: Optional[str]  # validator id when a pool member submitted

    @property
    def width(self) -> int:
        return IMAGE_SIZE[0]

    @property
    def height(self) -> int:
        return IMAGE_SIZE[1]


@dataclass
class Scenario:
    params: ScenarioParams
    region: Region
    planted_centers: list[GeoPoint]
    images: list[ImageDescriptor]
    truth: GroundTruth

    def descriptor(self, image_id: str) -> ImageDescriptor:
        return self._index[image_id]

    def __post_init__(self):
        self._index = {img.image_id: img for img in self.images}


def _plant_centers(rng: np.random.Generator, region: Region, params: ScenarioParams) -> list[GeoPoint]:
    min_sep_deg = params.min_site_separation_m / METERS_PER_DEGREE
    margin_lat = (region.lat_max - region.lat_min) * 0.05
    margin_lon = (region.lon_max - region.lon_min) * 0.05
    centers: list[GeoPoint] = []
    attempts = 0
    while len(centers) < params.n_sites:
        attempts += 1
        if attempts > params.n_sites * 400:
            raise InfeasibleConfig("cannot place sites with the requested separation")
        lat = rng.uniform(region.lat_min + margin_lat, region.lat_max - margin_lat)
        lon = rng.uniform(region.lon_min + margin_lon, region.lon_max - margin_lon)
        candidate = GeoPoint(lat, lon)
        if all(
            abs(candidate.lat - c.lat) + abs(candidate.lon - c.lon) > min_sep_deg
            for c in centers
        ):
            centers.append(candidate)
    return centers


def _random_box(rng: np.random.Generator, existing: list[BoundingBox]) -> BoundingBox:
    from ..metrics import iou

    w_img, h_img = IMAGE_SIZE
    for _ in range(200):
        bw = float(rng.uniform(60, 180))
        bh = float(rng.uniform(60, 180))
        x0 = float(rng.uniform(0, w_img - bw))
        y0 = float(rng.uniform(0, h_img - bh))
        box = BoundingBox(round(x0, 1), round(y0, 1), round(x0 + bw, 1), round(y0 + bh, 1))
        if all(iou(box, other) < 0.25 for other in existing):
            return box
    raise InfeasibleConfig("image too crowded to place another truth box")


def _features_for(boxes: list[LabeledBox], rng: np.random.Generator) -> FeatureStack:
    """One channel per class; activation blobs centered on the truth boxes."""
    h, w = FEATURE_GRID
    w_img, h_img = IMAGE_SIZE
    channels = rng.uniform(0.0, 0.05, size=(len(CLASSES), h, w))
    rows = (np.arange(h) + 0.5) * (h_img / h)
    cols = (np.arange(w) + 0.5) * (w_img / w)
    for labeled in boxes:
        k = CLASSES.index(labeled.hazard_class)
        box = labeled.box
        cy = (box.y_min + box.y_max) / 2
        cx = (box.x_min + box.x_max) / 2
        sy = max(box.y_max - box.y_min, 1.0) / 2.2
        sx = max(box.x_max - box.x_min, 1.0) / 2.2
        blob = np.exp(
            -(
                ((rows[:, None] - cy) / sy) ** 2
                + ((cols[None, :] - cx) / sx) ** 2
            )
        )
        channels[k] += blob
    weights = {cls: np.eye(len(CLASSES))[i] for i, cls in enumerate(CLASSES)}
    return FeatureStack(channels=channels, class_weights=weights, image_size=(h_img, w_img))


def generate_scenario(params: ScenarioParams) -> Scenario:
    """Deterministic dataset for one seed; see ScenarioParams for the knobs."""
    if params.n_sites * params.site_members > params.n_images:
        raise InfeasibleConfig(
            f"{params.n_sites} sites x {params.site_members} members exceeds "
            f"{params.n_images} images"
        )
    if not 0.0 <= params.miss_rate <= 1.0 or params.false_positive_rate < 0:
        raise InfeasibleConfig("error-model rates out of range")

    rng = np.random.default_rng(params.seed)
    region = Region(*params.region)
    centers = _plant_centers(rng, region, params)

    scatter_deg = params.member_scatter_m / METERS_PER_DEGREE
    base_time = datetime(2024, 5, 1, tzinfo=timezone.utc)
    arrival_offsets = np.sort(
        rng.uniform(0, params.arrival_span_days * 86400, size=params.n_images)
    )

    validator_ids = [f"val-{i:04d}" for i in range(params.n_validators)]
    images: list[ImageDescriptor] = []
    truth = GroundTruth()
    n_member = params.n_sites * params.site_members
    for i in range(params.n_images):
        image_id = f"img-{i:05d}"
        if i < n_member:
            site_index = i % params.n_sites
            center = centers[site_index]
            lat = float(np.clip(center.lat + rng.normal(0, scatter_deg), region.lat_min, region.lat_max))
            lon = float(
                np.clip(
                    center.lon
                    + rng.normal(0, scatter_deg / math.cos(math.radians(region.center_lat))),
                    region.lon_min,
                    region.lon_max,
                )
            )
        else:
            site_index = None
            lat = float(rng.uniform(region.lat_min, region.lat_max))
            lon = float(rng.uniform(region.lon_min, region.lon_max))

        n_boxes = int(rng.integers(params.boxes_per_image[0], params.boxes_per_image[1] + 1))
        boxes: list[LabeledBox] = []
        for _ in range(n_boxes):
            box = _random_box(rng, [b.box for b in boxes])
            cls = CLASSES[int(rng.choice(len(CLASSES), p=CLASS_WEIGHTS))]
            boxes.append(LabeledBox(box=box, hazard_class=cls))

        submitter = (
            validator_ids[int(rng.integers(0, params.n_validators))]
            if rng.random() < params.submitter_from_pool_p
            else None
        )
        images.append(
            ImageDescriptor(
                image_id=image_id,
                geo=GeoPoint(lat, lon),
                captured_at=base_time + timedelta(seconds=float(arrival_offsets[i])),
                truth_boxes=boxes,
                features=_features_for(boxes, rng),
                site_index=site_index,
                submitter_validator=submitter,
            )
        )
        truth.boxes[image_id] = list(boxes)

    return Scenario(
        params=params,
        region=region,
        planted_centers=centers,
        images=images,
        truth=truth,
    )
