"""Evaluation metrics: chamfer distance, precision/recall/F-score, coverage
and size categorization, and per-run report assembly.

All threshold-based metrics are computed in unit-sphere coordinates with the
shared distance threshold 0.08 unless stated otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyCloudError, NonPositiveDimensionError
from .geometry import OrientedPointCloud, normalize_to_unit_sphere, pairwise_nn_distances

DEFAULT_THRESHOLD = 0.08


class CoverageCategory(str, Enum):
    MODERATE = "Moderate"
    CHALLENGING = "Challenging"
    EXTREME = "Extreme"


class SizeCategory(str, Enum):
    LARGE = "Large"
    MEDIUM = "Medium"
    SMALL = "Small"


def chamfer_distance(a: OrientedPointCloud, b: OrientedPointCloud) -> float:
    """Bi-directional chamfer: mean nearest distance a->b plus b->a (unsquared L2)."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("chamfer distance needs non-empty clouds")
    d_ab = pairwise_nn_distances(a.points, b.points).mean()
    d_ba = pairwise_nn_distances(b.points, a.points).mean()
    return float(d_ab + d_ba)


def precision_recall_fscore(
    pred: OrientedPointCloud, gt: OrientedPointCloud, threshold: float
) -> tuple[float, float, float]:
    """Fraction of pred points within threshold of gt (precision), of gt points
    within threshold of pred (recall), and their harmonic mean."""
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCloudError("precision/recall need non-empty clouds")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    precision = float(np.mean(pairwise_nn_distances(pred.points, gt.points) <= threshold))
    recall = float(np.mean(pairwise_nn_distances(gt.points, pred.points) <= threshold))
    fscore = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, fscore


def coverage_percent(
    partial: OrientedPointCloud, gt: OrientedPointCloud, threshold: float = DEFAULT_THRESHOLD
) -> tuple[float, CoverageCategory]:
    """Percent of gt points whose nearest partial point is within the threshold.

    Categories: Moderate (>36%), Challenging (18%..36%], Extreme (<=18%);
    boundary values go to the harder class.
    """
    if len(partial) == 0 or len(gt) == 0:
        raise EmptyCloudError("coverage needs non-empty clouds")
    covered = pairwise_nn_distances(gt.points, partial.points) <= threshold
    percent = 100.0 * float(np.mean(covered))
    if percent > 36.0:
        category = CoverageCategory.MODERATE
    elif percent > 18.0:
        category = CoverageCategory.CHALLENGING
    else:
        category = CoverageCategory.EXTREME
    return percent, category


def size_category(longest_dimension: float) -> SizeCategory:
    """Large (>0.20 m), Medium [0.10 m, 0.20 m], Small (<0.10 m)."""
    d = float(longest_dimension)
    if d <= 0:
        raise NonPositiveDimensionError(f"dimension must be > 0, got {d}")
    if d > 0.20:
        return SizeCategory.LARGE
    if d >= 0.10:
        return SizeCategory.MEDIUM
    return SizeCategory.SMALL


@dataclass
class EvalReport:
    """Metric bundle for one reconstruction run."""

    object_id: str
    chamfer: float
    precision: float
    recall: float
    fscore: float
    coverage_percent: float
    coverage_category: CoverageCategory
    size_category: SizeCategory
    longest_dimension_m: float
    threshold: float = DEFAULT_THRESHOLD

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["coverage_category"] = self.coverage_category.value
        d["size_category"] = self.size_category.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate_run(
    final: OrientedPointCloud,
    gt: OrientedPointCloud,
    partial: OrientedPointCloud,
    object_id: str = "",
    threshold: float = DEFAULT_THRESHOLD,
) -> EvalReport:
    """Assemble all metrics in the gt's unit-sphere frame.

    The clouds share the simulation frame, so alignment is just the gt
    normalization transform applied to all three clouds.
    """
    if len(final) == 0 or len(gt) == 0 or len(partial) == 0:
        raise EmptyCloudError("evaluate_run needs non-empty clouds")
    extent = gt.points.max(axis=0) - gt.points.min(axis=0)
    longest = float(extent.max())

    gt_n, frame = normalize_to_unit_sphere(gt)
    final_n = frame.inverse_apply_cloud(final)
    partial_n = frame.inverse_apply_cloud(partial)

    chamfer = chamfer_distance(final_n, gt_n)
    precision, recall, fscore = precision_recall_fscore(final_n, gt_n, threshold)
    cov, cov_cat = coverage_percent(partial_n, gt_n, threshold)
    return EvalReport(
        object_id=object_id,
        chamfer=chamfer,
        precision=precision,
        recall=recall,
        fscore=fscore,
        coverage_percent=cov,
        coverage_category=cov_cat,
        size_category=size_category(longest),
        longest_dimension_m=longest,
        threshold=threshold,
    )
