"""Differentiable ranking objectives built on squared-hinge rank bounds.

The rank of a location is replaced by a smooth over-estimate: the sum of
squared hinges max(0, h(s') - h(s) + margin)^2 over the candidate set,
self term included so that with margin 1 the estimate starts at 1 like a
true rank. Plugging the bound into the gain/discount form yields a
differentiable objective that never exceeds the exact metric.

All objectives are returned as values to MAXIMIZE; the trainer negates
them. Per-location weights come from the importance distribution: either
soft weights proportional to probability, or a hard without-replacement
sample (weight 1 for drawn locations, 0 otherwise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError

WEIGHT_MODES = ("weight", "sample")


@dataclass
class SurrogateConfig:
    """Knobs shared by the surrogate objectives.

    margin: hinge offset c >= 0 (1 makes the rank bound tight at the top);
    local_weight: mix of the neighborhood objective in [0, 1];
    radius: neighborhood radius in cells;
    weight_mode: "weight" (soft) or "sample" (hard subset);
    sample_fraction: drawn fraction of the positive set in sample mode;
    gain_cap: optional cap on relevance inside 2^y - 1 (off by default).
    """

    margin: float = 1.0
    local_weight: float = 0.1
    radius: float = 2.0
    weight_mode: str = "sample"
    sample_fraction: float = 0.5
    gain_cap: float | None = None

    def validate(self) -> "SurrogateConfig":
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if not 0.0 <= self.local_weight <= 1.0:
            raise ConfigError(f"local_weight must be in [0, 1], got {self.local_weight}")
        if self.radius < 0:
            raise ConfigError(f"radius must be >= 0, got {self.radius}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError(f"sample_fraction must be in (0, 1], got {self.sample_fraction}")
        return self


def positive_locations(relevance: np.ndarray) -> np.ndarray:
    """Indices with strictly positive relevance, ascending."""
    return np.flatnonzero(np.asarray(relevance) > 0.0)


def _gains(relevance: np.ndarray, gain_cap: float | None) -> np.ndarray:
    rel = np.asarray(relevance, dtype=np.float64)
    if gain_cap is not None:
        rel = np.minimum(rel, gain_cap)
    return np.exp2(rel) - 1.0


def surrogate_rank(scores: Tensor, position: int, margin: float = 1.0) -> Tensor:
    """Smooth over-estimate of the rank of ``scores[position]``.

    Sum over the whole candidate set (self term included, = margin^2) of
    squared hinges on score differences.
    """
    q = scores.size
    if not 0 <= position < q:
        raise DataError(f"position {position} outside the candidate set of size {q}")
    return ad.reshape(_rank_bounds(scores, np.array([position]), margin), ())


def _rank_bounds(scores: Tensor, targets: np.ndarray, margin: float) -> Tensor:
    """Vector of rank over-estimates for ``targets`` within ``scores``."""
    q = scores.size
    m = len(targets)
    column = ad.broadcast_to(ad.reshape(scores, (q, 1)), (q, m))
    row = ad.broadcast_to(ad.reshape(ad.gather_rows(scores, targets), (1, m)), (q, m))
    hinge = ad.relu(ad.add(ad.sub(column, row), float(margin)))
    return ad.sum_(ad.square(hinge), axis=0)


def ndcg_surrogate(relevance: np.ndarray, scores: Tensor, weights: np.ndarray | None = None,
                   *, margin: float = 1.0, gain_cap: float | None = None) -> Tensor:
    """Differentiable lower bound of the day's cumulative-gain metric.

    Sums gain / (Z * log2(rank_bound + 1)) over positive locations,
    optionally weighted. Value to maximize. Empty positive set -> 0.
    """
    relevance = np.asarray(relevance, dtype=np.float64)
    if relevance.size != scores.size:
        raise ShapeError(f"relevance length {relevance.size} vs scores length {scores.size}")
    positives = positive_locations(relevance)
    if positives.size == 0:
        return ad.constant(0.0)
    if weights is None:
        weights = np.ones(positives.size)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (positives.size,):
            raise ShapeError(f"weights shape {weights.shape} does not match positives {positives.size}")
        if np.any(weights < 0):
            raise DataError("weights must be non-negative")
    active = weights > 0
    if not active.any():
        return ad.constant(0.0)
    targets = positives[active]
    capped = relevance if gain_cap is None else np.minimum(relevance, gain_cap)
    z = metrics.ideal_dcg(capped, capped.size)
    coeff = weights[active] * _gains(capped[targets], None) / z
    bounds = _rank_bounds(scores, targets, margin)
    discount = ad.log2(ad.add(bounds, 1.0))
    return ad.sum_(ad.div(ad.constant(coeff), discount))


def l_ndcg_surrogate(relevance: np.ndarray, scores: Tensor, weights: np.ndarray | None = None,
                     *, margin: float = 1.0, radius: float = 2.0,
                     shape: tuple[int, int] = (0, 0), gain_cap: float | None = None) -> Tensor:
    """Differentiable neighborhood-ranking objective.

    Mean over positive locations of the local bound-based gain sum inside
    each location's neighborhood (local ranks, local ideal gain).
    Neighborhoods with zero ideal gain contribute 0. Value to maximize.
    """
    relevance = np.asarray(relevance, dtype=np.float64)
    rows, cols = shape
    if relevance.size != scores.size or relevance.size != rows * cols:
        raise ShapeError(f"relevance length {relevance.size}, scores {scores.size}, grid {shape}")
    positives = positive_locations(relevance)
    if positives.size == 0:
        return ad.constant(0.0)
    if weights is None:
        weights = np.ones(positives.size)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (positives.size,):
            raise ShapeError(f"weights shape {weights.shape} does not match positives {positives.size}")
    capped = relevance if gain_cap is None else np.minimum(relevance, gain_cap)
    members_of = metrics.neighborhoods(rows, cols, float(radius))
    total: Tensor | None = None
    for weight, location in zip(weights, positives):
        if weight == 0.0:
            continue
        members = members_of[location]
        local_rel = capped[members]
        z = metrics.ideal_dcg(local_rel, local_rel.size)
        if z == 0.0:
            continue
        local_scores = ad.gather_rows(scores, members)
        bounds = _rank_bounds(local_scores, np.arange(members.size), margin)
        discount = ad.log2(ad.add(bounds, 1.0))
        coeff = float(weight) * _gains(local_rel, None) / z
        term = ad.sum_(ad.div(ad.constant(coeff), discount))
        total = term if total is None else ad.add(total, term)
    if total is None:
        return ad.constant(0.0)
    return ad.div(total, float(positives.size))


def hybrid_objective(relevance: np.ndarray, scores: Tensor, config: SurrogateConfig,
                     weights: np.ndarray | None = None, shape: tuple[int, int] = (0, 0)) -> Tensor:
    """(1 - local_weight) * global objective + local_weight * local objective."""
    sigma = config.local_weight
    if sigma == 0.0:
        return ndcg_surrogate(relevance, scores, weights,
                              margin=config.margin, gain_cap=config.gain_cap)
    if sigma == 1.0:
        return l_ndcg_surrogate(relevance, scores, weights, margin=config.margin,
                                radius=config.radius, shape=shape, gain_cap=config.gain_cap)
    global_part = ndcg_surrogate(relevance, scores, weights,
                                 margin=config.margin, gain_cap=config.gain_cap)
    local_part = l_ndcg_surrogate(relevance, scores, weights, margin=config.margin,
                                  radius=config.radius, shape=shape, gain_cap=config.gain_cap)
    return ad.add(ad.mul(global_part, 1.0 - sigma), ad.mul(local_part, sigma))


def apply_importance(positives: np.ndarray, probabilities: np.ndarray,
                     config: SurrogateConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-positive weights drawn from the importance distribution.

    weight mode: w_s = P_s * |positives| / sum(P over positives), so a
    uniform distribution gives weight 1 everywhere. sample mode: draw
    ceil(sample_fraction * |positives|) locations without replacement
    with probability proportional to P restricted to the positives;
    drawn locations get weight 1, the rest 0.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if abs(probabilities.sum() - 1.0) > 1e-9:
        raise DataError(f"importance distribution sums to {probabilities.sum()!r}, expected 1")
    if np.any(probabilities < 0):
        raise DataError("importance distribution has negative entries")
    positives = np.asarray(positives, dtype=np.intp)
    if positives.size == 0:
        return np.zeros(0)
    restricted = probabilities[positives]
    if config.weight_mode == "weight":
        total = restricted.sum()
        if total <= 0.0:
            return np.ones(positives.size)
        return restricted * positives.size / total
    n_draw = math.ceil(config.sample_fraction * positives.size)
    total = restricted.sum()
    weights = np.zeros(positives.size)
    if total <= 0.0:
        chosen = rng.choice(positives.size, size=min(n_draw, positives.size), replace=False)
    else:
        n_draw = min(n_draw, int(np.count_nonzero(restricted)))
        chosen = rng.choice(positives.size, size=n_draw, replace=False, p=restricted / total)
    weights[chosen] = 1.0
    return weights
