"""Importance distribution over locations, refreshed once per epoch.

Each location's raw importance combines its prediction error with the
priority of its true rank: mean over days of (2^|y - yhat| - 1) /
log2(1 + true_rank). The raw scores are smoothed with an untruncated
Gaussian kernel over cell-center distances (no wrap-around), then
normalized into a probability vector; an all-zero score vector (perfect
predictions) falls back to the uniform distribution.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError, ShapeError
from .metrics import ranks


@dataclass
class ImportanceDist:
    """Per-location sampling probabilities (sum to 1)."""

    probs: np.ndarray
    epoch: int
    bandwidth: float

    def validate(self) -> "ImportanceDist":
        if np.any(self.probs < 0):
            raise DataError("importance probabilities must be non-negative")
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise DataError(f"importance probabilities sum to {self.probs.sum()!r}, expected 1")
        return self


def uniform_distribution(n_locations: int, bandwidth: float, epoch: int = 0) -> ImportanceDist:
    return ImportanceDist(probs=np.full(n_locations, 1.0 / n_locations),
                          epoch=epoch, bandwidth=bandwidth)


def importance_scores(actual: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Raw per-location importance over a set of days.

    ``actual`` and ``predicted`` are (days, S). Zero exactly where the
    prediction is exact on every day; larger for bigger errors at
    higher-true-rank locations.
    """
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape or actual.ndim != 2:
        raise ShapeError(f"day matrices must share shape (days, S); got {actual.shape} and {predicted.shape}")
    n_days = actual.shape[0]
    scores = np.zeros(actual.shape[1])
    for d in range(n_days):
        true_rank = ranks(actual[d])
        gap = np.abs(actual[d] - predicted[d])
        scores += (np.exp2(gap) - 1.0) / np.log2(1.0 + true_rank)
    return scores / n_days


@lru_cache(maxsize=32)
def _kernel(rows: int, cols: int, bandwidth: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    coords = np.stack([rr.reshape(-1), cc.reshape(-1)], axis=1).astype(np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    sq = (diff * diff).sum(axis=2)
    return np.exp(-sq / (2.0 * bandwidth * bandwidth)) / (2.0 * np.pi * bandwidth * bandwidth)


def gaussian_smooth(scores: np.ndarray, bandwidth: float, shape: tuple[int, int]) -> np.ndarray:
    """Full-kernel Gaussian smoothing over the grid (no truncation)."""
    if bandwidth <= 0:
        raise DataError(f"bandwidth must be positive, got {bandwidth}")
    scores = np.asarray(scores, dtype=np.float64)
    rows, cols = shape
    if scores.size != rows * cols:
        raise ShapeError(f"scores length {scores.size} does not match grid {shape}")
    return _kernel(rows, cols, float(bandwidth)) @ scores


def normalize(smoothed: np.ndarray, epoch: int = 0, bandwidth: float = 1.0) -> ImportanceDist:
    """Scale smoothed scores into probabilities; uniform fallback at zero."""
    smoothed = np.asarray(smoothed, dtype=np.float64)
    if np.any(smoothed < 0):
        raise DataError("smoothed importance scores must be non-negative")
    total = smoothed.sum()
    if total <= 0.0:
        return uniform_distribution(smoothed.size, bandwidth, epoch)
    return ImportanceDist(probs=smoothed / total, epoch=epoch, bandwidth=bandwidth).validate()


def refresh(actual: np.ndarray, predicted: np.ndarray, bandwidth: float,
            shape: tuple[int, int], epoch: int) -> ImportanceDist:
    """One full update: score, smooth, normalize."""
    raw = importance_scores(actual, predicted)
    return normalize(gaussian_smooth(raw, bandwidth, shape), epoch=epoch, bandwidth=bandwidth)


def dump_distribution(dist: ImportanceDist, shape: tuple[int, int], path) -> None:
    """CSV heat-map rows (row, col, probability) for diagnostics."""
    import csv

    rows, cols = shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "probability"])
        for r in range(rows):
            for c in range(cols):
                writer.writerow([r, c, repr(float(dist.probs[r * cols + c]))])
