"""Core geometric types: point clouds, meshes, rigid transforms, neighbor queries.

Conventions used across the toolkit:
  * coordinates are meters, float64, shape (n, 3);
  * normals are unit vectors parallel to the points they annotate;
  * every randomized operation takes an explicit integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCloudError,
    EmptyCloudError,
    EmptyMeshError,
    KTooLargeError,
)

UNIT_NORM_TOL = 1e-6


def as_point3(p) -> np.ndarray:
    """Coerce to a finite float64 vector of shape (3,)."""
    a = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"point has non-finite coordinates: {a}")
    return a


def _as_points(points) -> np.ndarray:
    a = np.asarray(points, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("points contain non-finite coordinates")
    return a


@dataclass
class OrientedPointCloud:
    """Points with optional unit normals and optional non-negative reflectivity."""

    points: np.ndarray
    normals: np.ndarray | None = None
    reflectivity: np.ndarray | None = None

    def __post_init__(self):
        self.points = _as_points(self.points)
        n = len(self.points)
        if self.normals is not None:
            self.normals = _as_points(self.normals)
            if len(self.normals) != n:
                raise ValueError("normals must be parallel to points")
            norms = np.linalg.norm(self.normals, axis=1)
            if n and np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
                raise ValueError("normals must be unit length within 1e-6")
        if self.reflectivity is not None:
            self.reflectivity = np.asarray(self.reflectivity, dtype=np.float64).reshape(n)
            if not np.all(np.isfinite(self.reflectivity)) or np.any(self.reflectivity < 0):
                raise ValueError("reflectivity must be finite and >= 0")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, index) -> "OrientedPointCloud":
        """New cloud keeping rows selected by a boolean mask or index array."""
        return OrientedPointCloud(
            points=self.points[index],
            normals=None if self.normals is None else self.normals[index],
            reflectivity=None if self.reflectivity is None else self.reflectivity[index],
        )

    def diameter(self) -> float:
        """Bounding-box diagonal; 0 for a single point."""
        if len(self) == 0:
            return 0.0
        ext = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(ext))


@dataclass
class TriangleMesh:
    """Indexed triangle soup. Faces are (m, 3) int indices into vertices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = _as_points(self.vertices)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.faces.size == 0:
            self.faces = self.faces.reshape(0, 3)
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"expected (m, 3) faces, got shape {self.faces.shape}")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")

    def __len__(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals by winding order; degenerate faces get a zero vector."""
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        cr = np.cross(b - a, c - a)
        norm = np.linalg.norm(cr, axis=1, keepdims=True)
        return np.divide(cr, norm, out=np.zeros_like(cr), where=norm > 0)

    def surface_centroid(self) -> np.ndarray:
        """Area-weighted mean of face centroids."""
        areas = self.face_areas()
        cent = self.vertices[self.faces].mean(axis=1)
        total = areas.sum()
        if total <= 0:
            return self.vertices.mean(axis=0)
        return (cent * areas[:, None]).sum(axis=0) / total


@dataclass
class RigidScale:
    """Similarity transform p -> scale * R @ p + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = as_point3(self.translation)
        self.scale = float(self.scale)
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > UNIT_NORM_TOL:
            raise ValueError(f"rotation not orthonormal (deviation {err:.2e})")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return self.scale * (pts @ self.rotation.T) + self.translation

    def apply_to_normals(self, normals: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(normals, dtype=np.float64)) @ self.rotation.T

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return ((pts - self.translation) / self.scale) @ self.rotation

    def apply_cloud(self, cloud: OrientedPointCloud) -> OrientedPointCloud:
        return OrientedPointCloud(
            points=self.apply(cloud.points),
            normals=None if cloud.normals is None else self.apply_to_normals(cloud.normals),
            reflectivity=cloud.reflectivity,
        )

    def inverse_apply_cloud(self, cloud: OrientedPointCloud) -> OrientedPointCloud:
        return OrientedPointCloud(
            points=self.inverse_apply(cloud.points),
            normals=None if cloud.normals is None else cloud.normals @ self.rotation,
            reflectivity=cloud.reflectivity,
        )

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigidScale":
        return cls(
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation=np.asarray(d["translation"], dtype=np.float64),
            scale=float(d["scale"]),
        )


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> OrientedPointCloud:
    """Draw n area-weighted surface points with face-winding normals.

    Per-face counts come from stratified (systematic) allocation on the
    cumulative-area scale, so every face receives floor or ceil of its exact
    area quota regardless of how finely the mesh is triangulated; within a
    face, points are uniform via sqrt-barycentric sampling. Normals come from
    the owning face and are globally flipped if the majority point toward the
    surface centroid.
    """
    if len(mesh) == 0:
        raise EmptyMeshError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")

    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise EmptyMeshError("mesh has zero total area")

    rng = np.random.default_rng(seed)
    cum = np.cumsum(areas) / total
    positions = (rng.random() + np.arange(n)) / n
    owners = np.searchsorted(cum, positions, side="right")
    owners = np.minimum(owners, len(areas) - 1)
    counts = np.bincount(owners, minlength=len(areas)).astype(np.int64)
    tri = mesh.vertices[mesh.faces]  # (m, 3, 3)
    fnormals = mesh.face_normals()
    pts = np.empty((n, 3))
    nrm = np.empty((n, 3))
    cursor = 0
    for f in np.nonzero(counts)[0]:
        m = counts[f]
        u = rng.random((m, 2))
        su = np.sqrt(u[:, 0:1])
        a, b, c = tri[f]
        pts[cursor : cursor + m] = (1 - su) * a + su * (1 - u[:, 1:2]) * b + su * u[:, 1:2] * c
        nrm[cursor : cursor + m] = fnormals[f]
        cursor += m

    # orient outward: flip everything if most normals face the surface centroid
    to_point = pts - mesh.surface_centroid()
    if np.count_nonzero(np.einsum("ij,ij->i", nrm, to_point) < 0) > n / 2:
        nrm = -nrm

    # guard against degenerate-face zero normals slipping through
    bad = np.linalg.norm(nrm, axis=1) < 0.5
    if np.any(bad):
        nrm[bad] = np.array([0.0, 0.0, 1.0])
    return OrientedPointCloud(points=pts, normals=nrm)


def normalize_to_unit_sphere(pc: OrientedPointCloud) -> tuple[OrientedPointCloud, RigidScale]:
    """Center at the centroid and scale the farthest point to radius 1.

    Returns the normalized cloud and the RigidScale mapping it back to the
    input frame (apply(normalized) == input).
    """
    if len(pc) == 0:
        raise EmptyCloudError("cannot normalize an empty cloud")
    centroid = pc.points.mean(axis=0)
    radii = np.linalg.norm(pc.points - centroid, axis=1)
    r = float(radii.max())
    if r <= 0:
        raise DegenerateCloudError("all points coincide; no scale defined")
    out = OrientedPointCloud(
        points=(pc.points - centroid) / r,
        normals=pc.normals,
        reflectivity=pc.reflectivity,
    )
    return out, RigidScale(rotation=np.eye(3), translation=centroid, scale=r)


def knn(pc: OrientedPointCloud, query, k: int) -> np.ndarray:
    """Indices of the k nearest points to ``query``, nondecreasing distance.

    Exact ties are broken by lower index.
    """
    if len(pc) == 0:
        raise EmptyCloudError("knn on empty cloud")
    if k > len(pc):
        raise KTooLargeError(f"k={k} exceeds cloud size {len(pc)}")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = as_point3(query)
    d2 = np.einsum("ij,ij->i", pc.points - q, pc.points - q)
    order = np.argsort(d2, kind="stable")
    return order[:k]


def pairwise_nn_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each row of a, the Euclidean distance to its nearest row of b."""
    from scipy.spatial import cKDTree

    return cKDTree(b).query(a, k=1)[0]
