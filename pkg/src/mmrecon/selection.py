"""Final-surface selection: uncertainty detection, local-entropy scoring, and
the signal-rendering comparison branch.

The entropy score of a cloud is the nearest-rank 75th percentile over points
of lambda_3 / lambda_1, the extreme eigenvalue ratio of the covariance of each
point's k-nearest-neighbor neighborhood (k = 30 by default). Planar patches
score near 0; volumetric noise scores near 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, MissingNormalsError, NoCandidatesError, TooFewPointsError
from .completion import CompletedCandidate
from .geometry import OrientedPointCloud
from .imaging import VoxelGridSpec
from .radar import SignalSet, simulate_signals

KNN_NEIGHBORS = 30
SCORE_PERCENTILE = 75
UNCERTAINTY_THRESHOLD = 0.6


@dataclass
class UncertaintyResult:
    ratio: float
    high_uncertainty: bool


@dataclass
class SelectionReport:
    """Outcome of candidate selection for one reconstruction problem."""

    chosen_index: int
    branch: str  # "entropy" | "rendering"
    uncertainty_ratios: list[float]
    entropy_scores: list[float] = field(default_factory=list)
    rendering_scores: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "chosen_index": self.chosen_index,
            "branch": self.branch,
            "uncertainty_ratios": self.uncertainty_ratios,
            "entropy_scores": self.entropy_scores,
            "rendering_scores": self.rendering_scores,
        }


def uncertainty_ratio(
    partial: OrientedPointCloud,
    grid: VoxelGridSpec,
    threshold: float = UNCERTAINTY_THRESHOLD,
    flag_at_or_below: bool = True,
) -> UncertaintyResult:
    """Distinct occupied (x, y) voxel columns divided by the point count.

    Vertically stacked voxels shrink the projection, so a LOW ratio signals an
    irregular, high-uncertainty surface; the flag fires at ratio <= threshold
    (flip ``flag_at_or_below`` to flag the opposite side).
    """
    if len(partial) == 0:
        raise EmptyCloudError("uncertainty ratio needs a non-empty cloud")
    rel = (partial.points - grid.origin) / grid.spacing
    cols = np.round(rel[:, :2]).astype(np.int64)
    n_columns = len(np.unique(cols, axis=0))
    ratio = n_columns / len(partial)
    flagged = ratio <= threshold if flag_at_or_below else ratio > threshold
    return UncertaintyResult(ratio=float(ratio), high_uncertainty=bool(flagged))


def _nearest_rank_percentile(values: np.ndarray, percentile: float) -> float:
    values = np.sort(np.asarray(values, dtype=np.float64))
    if len(values) == 0:
        raise ValueError("percentile of empty set")
    rank = int(np.ceil(percentile / 100.0 * len(values)))
    return float(values[max(rank, 1) - 1])


def entropy_score(
    cloud: OrientedPointCloud, k: int = KNN_NEIGHBORS, percentile: float = SCORE_PERCENTILE
) -> float:
    """Nearest-rank percentile of per-point covariance eigenvalue ratios.

    Each point's neighborhood is its k nearest other points; lambda_1 = 0
    (a fully collapsed neighborhood) scores 0 by convention.
    """
    n = len(cloud)
    if n < k + 1:
        raise TooFewPointsError(f"entropy score needs >= {k + 1} points, got {n}")
    pts = cloud.points
    # k+1 nearest including self, then drop self
    _, idx = cKDTree(pts).query(pts, k=k + 1)
    neighborhoods = pts[idx[:, 1:]]  # (n, k, 3)
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eig = np.linalg.eigvalsh(cov)  # ascending per row
    lam1 = eig[:, 2]
    lam3 = np.clip(eig[:, 0], 0.0, None)
    ratios = np.where(lam1 > 0, lam3 / np.where(lam1 > 0, lam1, 1.0), 0.0)
    return _nearest_rank_percentile(ratios, percentile)


def select_by_entropy(candidates: list[CompletedCandidate], k: int = KNN_NEIGHBORS) -> int:
    """Index of the lowest-entropy reconstruction; ties go to the lower index.

    Reconstructions too small to score are never preferred (score +inf).
    """
    scores = entropy_scores(candidates, k=k)
    return int(np.argmin(scores))


def entropy_scores(candidates: list[CompletedCandidate], k: int = KNN_NEIGHBORS) -> list[float]:
    if not candidates:
        raise NoCandidatesError("no candidates to score")
    scores = []
    for cand in candidates:
        try:
            scores.append(entropy_score(cand.reconstruction, k=k))
        except TooFewPointsError:
            scores.append(float("inf"))
    return scores


def rendering_scores(
    candidates: list[CompletedCandidate], measured: SignalSet, specular_sigma: float
) -> list[float]:
    """Normalized complex correlation between each candidate's simulated
    response and the measured signals."""
    if not candidates:
        raise NoCandidatesError("no candidates to score")
    h_meas = measured.samples.ravel()
    norm_meas = np.linalg.norm(h_meas)
    scores = []
    for cand in candidates:
        if cand.reconstruction.normals is None:
            raise MissingNormalsError("rendering comparison needs candidate normals")
        sim = simulate_signals(cand.reconstruction, measured.array, measured.waveform, specular_sigma)
        h_sim = sim.samples.ravel()
        denom = np.linalg.norm(h_sim) * norm_meas
        scores.append(float(np.abs(np.vdot(h_sim, h_meas)) / denom) if denom > 0 else 0.0)
    return scores


def select_by_rendering(
    candidates: list[CompletedCandidate], measured: SignalSet, specular_sigma: float
) -> int:
    """Index of the best signal-match reconstruction; ties go to the lower index."""
    scores = rendering_scores(candidates, measured, specular_sigma)
    return int(np.argmax(scores))


def select(
    candidates: list[CompletedCandidate],
    partials: list[OrientedPointCloud],
    measured: SignalSet,
    grid: VoxelGridSpec,
    specular_sigma: float = 0.35,
    uncertainty_threshold: float = UNCERTAINTY_THRESHOLD,
    flag_at_or_below: bool = True,
    k: int = KNN_NEIGHBORS,
) -> tuple[OrientedPointCloud, SelectionReport]:
    """Choose the final reconstruction.

    If any partial is flagged high-uncertainty the whole set is scored by
    entropy; otherwise the rendering comparison is used.
    """
    if not candidates:
        raise NoCandidatesError("no candidates to select from")
    if len(candidates) != len(partials):
        raise ValueError("candidates and partials must be parallel")
    ratios = [
        uncertainty_ratio(p, grid, threshold=uncertainty_threshold, flag_at_or_below=flag_at_or_below)
        for p in partials
    ]
    report = SelectionReport(
        chosen_index=0,
        branch="entropy" if any(r.high_uncertainty for r in ratios) else "rendering",
        uncertainty_ratios=[r.ratio for r in ratios],
    )
    if report.branch == "entropy":
        report.entropy_scores = entropy_scores(candidates, k=k)
        report.chosen_index = int(np.argmin(report.entropy_scores))
    else:
        report.rendering_scores = rendering_scores(candidates, measured, specular_sigma)
        report.chosen_index = int(np.argmax(report.rendering_scores))
    return candidates[report.chosen_index].reconstruction, report
