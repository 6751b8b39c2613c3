import numpy as np
import pytest

from mmrecon.geometry import OrientedPointCloud, sample_surface
from mmrecon.shapes import box_mesh, sphere_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def sphere_cloud_2k():
    """2000 area-uniform points on the unit sphere with outward normals."""
    return sample_surface(sphere_mesh(radius=1.0, rings=64, segments=128), 2000, seed=7)


@pytest.fixture(scope="session")
def cube_cloud():
    return sample_surface(box_mesh(size=(1.0, 1.0, 1.0)), 1200, seed=11)


def random_cloud(rng, n, scale=1.0, with_normals=False):
    pts = rng.normal(size=(n, 3)) * scale
    normals = None
    if with_normals:
        raw = rng.normal(size=(n, 3))
        normals = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return OrientedPointCloud(points=pts, normals=normals)
