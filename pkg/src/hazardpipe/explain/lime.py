"""Local surrogate explanations over grid segments of a detection box.

The slow explainability layer: perturbs the box region segment by segment,
scores every masked variant with the caller's predictor, and fits a weighted
ridge surrogate whose coefficients rank segment importance.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..core import BoundingBox, HazardPipeError


class PredictorFailure(HazardPipeError):
    """The predictor raised mid-run; carries how many samples completed."""

    def __init__(self, message: str, completed_samples: int):
        self.completed_samples = completed_samples
        super().__init__(f"{message} (completed {completed_samples} samples)")


@dataclass(frozen=True)
class LimeConfig:
    rows: int = 6
    cols: int = 6
    n_samples: int = 1000
    kernel_width: float = 0.25
    ridge_lambda: float = 1e-3
    top_k: int = 5
    exhaustive: bool = False
    seed: int = 0


@dataclass(frozen=True)
class LimeExplanation:
    """Signed per-segment weights; top_k ranks segments by |importance|."""

    cell_importance: tuple[float, ...]
    segment_grid: tuple[int, int]
    n_samples: int
    kernel_width: float
    top_k: tuple[int, ...]
    intercept: float = 0.0

    def __post_init__(self):
        s = self.segment_grid[0] * self.segment_grid[1]
        if len(self.cell_importance) != s:
            raise HazardPipeError("one importance value per segment expected")
        if len(self.top_k) > s:
            raise HazardPipeError("top_k cannot exceed the segment count")

    def to_json_dict(self) -> dict:
        return {
            "cell_importance": list(self.cell_importance),
            "segment_grid": list(self.segment_grid),
            "n_samples": self.n_samples,
            "kernel_width": self.kernel_width,
            "top_k": list(self.top_k),
            "intercept": self.intercept,
        }


def segment_slices(box: BoundingBox, rows: int, cols: int) -> list[tuple[slice, slice]]:
    """Pixel slices of the rows x cols segments tiling the box region."""
    x0, y0 = int(round(box.x_min)), int(round(box.y_min))
    x1, y1 = int(round(box.x_max)), int(round(box.y_max))
    row_edges = np.linspace(y0, y1, rows + 1).round().astype(int)
    col_edges = np.linspace(x0, x1, cols + 1).round().astype(int)
    slices = []
    for r in range(rows):
        for c in range(cols):
            slices.append(
                (
                    slice(row_edges[r], row_edges[r + 1]),
                    slice(col_edges[c], col_edges[c + 1]),
                )
            )
    return slices


def _sample_masks(n_segments: int, config: LimeConfig) -> np.ndarray:
    if config.exhaustive:
        combos = list(itertools.product([0, 1], repeat=n_segments))
        masks = np.array(combos, dtype=float)
        # The all-ones mask is required; move it first for parity with sampling.
        ones_idx = int(np.where(masks.sum(axis=1) == n_segments)[0][0])
        order = [ones_idx] + [i for i in range(len(masks)) if i != ones_idx]
        return masks[order]
    if config.n_samples < n_segments:
        raise HazardPipeError(
            f"n_samples={config.n_samples} below segment count {n_segments}"
        )
    rng = np.random.default_rng(config.seed)
    masks = rng.integers(0, 2, size=(config.n_samples, n_segments)).astype(float)
    masks[0] = 1.0  # always include the unperturbed instance
    return masks


def _mask_image(
    base: np.ndarray,
    mask: np.ndarray,
    slices: Sequence[tuple[slice, slice]],
    fill: np.ndarray,
) -> np.ndarray:
    out = base.copy()
    for seg, on in enumerate(mask):
        if not on:
            out[slices[seg]] = fill
    return out


def _weighted_ridge(
    masks: np.ndarray, scores: np.ndarray, weights: np.ndarray, lam: float
) -> tuple[np.ndarray, float]:
    """Ridge with intercept; only the segment coefficients are penalized."""
    n, s = masks.shape
    design = np.hstack([np.ones((n, 1)), masks])
    wd = design * weights[:, None]
    gram = design.T @ wd
    penalty = np.eye(s + 1) * lam
    penalty[0, 0] = 0.0
    beta = np.linalg.solve(gram + penalty, wd.T @ scores)
    return beta[1:], float(beta[0])


def lime_explain(
    image: np.ndarray,
    box: BoundingBox,
    predict_fn: Callable[[np.ndarray], float],
    config: LimeConfig = LimeConfig(),
) -> LimeExplanation:
    """Explain one (box, class) target of a predictor over a base image.

    Masked-off segments are replaced by the image mean color. Sample weight
    is exp(-(1 - s)^2 / kernel_width^2) with s the on-fraction, so nearly
    intact images dominate the fit.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    if box.x_max > w or box.y_max > h:
        raise HazardPipeError(f"box {box} exceeds image bounds {(w, h)}")

    slices = segment_slices(box, config.rows, config.cols)
    n_segments = len(slices)
    fill = image.reshape(-1, *image.shape[2:]).mean(axis=0)

    masks = _sample_masks(n_segments, config)
    scores = np.empty(len(masks))
    for i, mask in enumerate(masks):
        masked = _mask_image(image, mask, slices, fill)
        try:
            scores[i] = float(predict_fn(masked))
        except Exception as err:
            raise PredictorFailure(str(err), completed_samples=i) from err

    on_fraction = masks.mean(axis=1)
    weights = np.exp(-((1.0 - on_fraction) ** 2) / config.kernel_width**2)
    coefs, intercept = _weighted_ridge(masks, scores, weights, config.ridge_lambda)

    ranking = sorted(range(n_segments), key=lambda i: (-abs(coefs[i]), i))
    return LimeExplanation(
        cell_importance=tuple(float(c) for c in coefs),
        segment_grid=(config.rows, config.cols),
        n_samples=len(masks),
        kernel_width=config.kernel_width,
        top_k=tuple(ranking[: config.top_k]),
        intercept=intercept,
    )
