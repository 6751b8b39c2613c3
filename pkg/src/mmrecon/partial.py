"""Physics-consistent partial observations from full point clouds.

Three visibility masks compose by logical AND:
  * specular: the smallest angle between a point's normal and any
    point-to-sensor direction must be below tau;
  * radar-facing: spherical-flip hidden-point removal from each viewpoint,
    union over viewpoints;
  * anisotropic: the normal's angles to the radar-frame horizontal [1,0,0]
    and vertical [0,1,0] axes must be below tau_h and tau_v.

Surviving points are then jittered with isotropic Gaussian noise and randomly
dropped, giving (partial, full) training pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateCloudError,
    EmptyPartialError,
    MissingNormalsError,
    SensorCoincidesWithPointError,
)
from .geometry import OrientedPointCloud, as_point3
from .radar import SensorArray

HPR_FLIP_FACTOR = 100.0  # flip radius = 100 x cloud diameter
MAX_HPR_VIEWPOINTS = 16


@dataclass
class VisibilityParams:
    """Angular thresholds (radians) plus noise and dropout settings."""

    tau: float = np.radians(40.0)
    tau_h: float = np.pi / 2
    tau_v: float = np.pi / 2
    noise_sigma: float = 0.01
    dropout_fraction: float = 0.0

    def __post_init__(self):
        for name in ("tau", "tau_h", "tau_v"):
            val = float(getattr(self, name))
            if not 0 < val <= np.pi:
                raise ValueError(f"{name} must be in (0, pi], got {val}")
            setattr(self, name, val)
        self.noise_sigma = float(self.noise_sigma)
        self.dropout_fraction = float(self.dropout_fraction)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.dropout_fraction < 1:
            raise ValueError("dropout_fraction must be in [0, 1)")


def min_sensor_angles(cloud: OrientedPointCloud, positions: np.ndarray) -> np.ndarray:
    """Per point, the smallest |angle(normal, direction to any sensor)|."""
    if cloud.normals is None:
        raise MissingNormalsError("specular visibility needs normals")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(cloud), np.pi)
    for p in positions:
        delta = p - cloud.points
        dist = np.linalg.norm(delta, axis=1)
        if np.any(dist < 1e-12):
            raise SensorCoincidesWithPointError("sensor coincides with a cloud point")
        cosang = np.clip(np.einsum("ij,ij->i", cloud.normals, delta / dist[:, None]), -1.0, 1.0)
        best = np.minimum(best, np.arccos(cosang))
    return best


def specular_mask(cloud: OrientedPointCloud, array: SensorArray, tau: float) -> np.ndarray:
    """True where the smallest normal-to-sensor angle is strictly below tau."""
    return min_sensor_angles(cloud, array.positions) < tau


def radar_facing_mask(cloud: OrientedPointCloud, viewpoint) -> np.ndarray:
    """Visibility from one viewpoint via spherical-flip hidden-point removal.

    Flip radius is 100x the cloud's bounding-box diagonal (widened if the
    viewpoint is so far away that the flip would be invalid). Points whose
    flipped images lie on the convex hull of flipped-points + viewpoint are
    visible.
    """
    if len(cloud) < 4:
        raise DegenerateCloudError("hidden-point removal needs >= 4 points")
    vp = as_point3(viewpoint)
    rel = cloud.points - vp
    norms = np.linalg.norm(rel, axis=1)
    if np.any(norms < 1e-12):
        raise DegenerateCloudError("viewpoint coincides with a cloud point")
    diam = cloud.diameter()
    if diam <= 0:
        raise DegenerateCloudError("cloud has no extent")
    radius = max(HPR_FLIP_FACTOR * diam, 2.0 * norms.max())
    flipped = rel + 2.0 * (radius - norms)[:, None] * (rel / norms[:, None])
    pts = np.vstack([flipped, np.zeros(3)])
    try:
        hull = ConvexHull(pts)
    except QhullError:
        try:
            hull = ConvexHull(pts, qhull_options="QJ")
        except QhullError as e:
            raise DegenerateCloudError(f"hull construction failed: {e}") from e
    mask = np.zeros(len(cloud), dtype=bool)
    mask[hull.vertices[hull.vertices < len(cloud)]] = True
    return mask


def radar_facing_union_mask(cloud: OrientedPointCloud, viewpoints: np.ndarray, max_viewpoints: int = MAX_HPR_VIEWPOINTS) -> np.ndarray:
    """Union of per-viewpoint visibility masks, subsampling to at most
    ``max_viewpoints`` evenly spaced viewpoints."""
    viewpoints = np.asarray(viewpoints, dtype=np.float64).reshape(-1, 3)
    if len(viewpoints) > max_viewpoints:
        idx = np.linspace(0, len(viewpoints) - 1, max_viewpoints).round().astype(int)
        viewpoints = viewpoints[np.unique(idx)]
    mask = np.zeros(len(cloud), dtype=bool)
    for vp in viewpoints:
        mask |= radar_facing_mask(cloud, vp)
    return mask


def anisotropic_mask(cloud: OrientedPointCloud, tau_h: float, tau_v: float) -> np.ndarray:
    """True where angle(n, [1,0,0]) < tau_h and angle(n, [0,1,0]) < tau_v."""
    if cloud.normals is None:
        raise MissingNormalsError("anisotropic visibility needs normals")
    theta_h = np.arccos(np.clip(cloud.normals[:, 0], -1.0, 1.0))
    theta_v = np.arccos(np.clip(cloud.normals[:, 1], -1.0, 1.0))
    return (theta_h < tau_h) & (theta_v < tau_v)


def synthesize_partial(
    full: OrientedPointCloud,
    array: SensorArray,
    params: VisibilityParams,
    seed: int,
) -> tuple[OrientedPointCloud, OrientedPointCloud]:
    """Compose the three masks, jitter and drop points; returns (partial, full).

    Raises EmptyPartialError when nothing survives, signalling the caller to
    resample parameters.
    """
    if full.normals is None:
        raise MissingNormalsError("synthesize_partial needs normals")
    if len(full) < 100:
        raise ValueError("full cloud must have >= 100 points")

    mask = specular_mask(full, array, params.tau)
    mask &= radar_facing_union_mask(full, array.positions)
    mask &= anisotropic_mask(full, params.tau_h, params.tau_v)
    if not mask.any():
        raise EmptyPartialError("all points masked out; resample parameters")

    partial = full.subset(mask)
    rng = np.random.default_rng(seed)
    points = partial.points
    if params.noise_sigma > 0:
        points = points + rng.normal(scale=params.noise_sigma, size=points.shape)
    if params.dropout_fraction > 0:
        keep = rng.random(len(points)) >= params.dropout_fraction
        if not keep.any():
            raise EmptyPartialError("dropout removed every point; resample parameters")
        points = points[keep]
        partial = partial.subset(keep)
    partial = OrientedPointCloud(points=points, normals=partial.normals, reflectivity=partial.reflectivity)
    return partial, full
