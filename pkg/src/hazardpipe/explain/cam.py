"""Class-weighted activation heatmaps and colormap overlays.

This is the fast explainability layer: computed synchronously for every
detection before a report enters validation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import HazardClass, HazardPipeError
from ..detection import FeatureStack


class UnknownClass(HazardPipeError):
    """The feature stack has no weight vector for the requested class."""


# h -> RGB stops, linear in between: blue, cyan, green, yellow, red.
COLORMAP_STOPS = (
    (0.00, (0, 0, 255)),
    (0.25, (0, 255, 255)),
    (0.50, (0, 255, 0)),
    (0.75, (255, 255, 0)),
    (1.00, (255, 0, 0)),
)


@dataclass(frozen=True)
class CamHeatmap:
    """Normalized activation grid plus its image-sized upsampling."""

    grid: np.ndarray
    upsampled: np.ndarray
    peak: tuple[int, int]

    def __post_init__(self):
        for arr in (self.grid, self.upsampled):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise HazardPipeError("heatmap values must stay in [0, 1]")


def _bilinear_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = grid.shape
    if h == 1 and w == 1:
        return np.full((out_h, out_w), grid[0, 0])
    rows = np.linspace(0, h - 1, out_h) if h > 1 else np.zeros(out_h)
    cols = np.linspace(0, w - 1, out_w) if w > 1 else np.zeros(out_w)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = grid[np.ix_(r0, c0)] * (1 - fc) + grid[np.ix_(r0, c1)] * fc
    bottom = grid[np.ix_(r1, c0)] * (1 - fc) + grid[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def cam(features: FeatureStack, hazard_class: HazardClass) -> CamHeatmap:
    """Weighted-activation heatmap for one class.

    raw(i,j) = max(0, sum_k w_k * F_k(i,j)), min-max normalized; a flat raw
    map normalizes to all zeros. Upsampling is bilinear to the image size.
    Peak ties resolve row-major.
    """
    if hazard_class not in features.class_weights:
        raise UnknownClass(hazard_class.value)
    weights = features.class_weights[hazard_class]
    raw = np.maximum(0.0, np.tensordot(weights, features.channels, axes=1))
    lo, hi = raw.min(), raw.max()
    if hi > lo:
        grid = (raw - lo) / (hi - lo)
    else:
        grid = np.zeros_like(raw)
    peak_flat = int(np.argmax(grid))  # argmax is row-major, ties to first
    peak = (peak_flat // grid.shape[1], peak_flat % grid.shape[1])
    upsampled = _bilinear_upsample(grid, features.image_size[0], features.image_size[1])
    upsampled = np.clip(upsampled, 0.0, 1.0)
    return CamHeatmap(grid=grid, upsampled=upsampled, peak=peak)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map [0,1] heat values to RGB via the fixed five-stop gradient."""
    values = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    xs = np.array([stop for stop, _ in COLORMAP_STOPS])
    channels = []
    for c in range(3):
        ys = np.array([rgb[c] for _, rgb in COLORMAP_STOPS], dtype=float)
        channels.append(np.interp(values, xs, ys))
    return np.stack(channels, axis=-1)


def overlay(base: np.ndarray, heatmap: CamHeatmap, alpha: float = 0.4) -> np.ndarray:
    """Blend the colormapped heatmap over the base image.

    Per pixel: out = (1 - alpha*h) * base + alpha*h * colormap(h), so zero
    heat leaves the base untouched.
    """
    if not 0.0 <= alpha <= 1.0:
        raise HazardPipeError(f"alpha={alpha} outside [0,1]")
    base = np.asarray(base, dtype=float)
    heat = heatmap.upsampled
    if base.shape[:2] != heat.shape:
        raise HazardPipeError(
            f"base image {base.shape[:2]} does not match heatmap {heat.shape}"
        )
    weight = (alpha * heat)[..., None]
    blended = (1.0 - weight) * base + weight * colormap(heat)
    return np.clip(np.rint(blended), 0, 255).astype(np.uint8)
