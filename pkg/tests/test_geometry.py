import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrecon.errors import DegenerateCloudError, KTooLargeError
from mmrecon.geometry import (
    OrientedPointCloud,
    RigidScale,
    knn,
    normalize_to_unit_sphere,
    sample_surface,
)
from mmrecon.metrics import chamfer_distance
from mmrecon.shapes import box_mesh, sphere_mesh

from conftest import random_cloud


class TestOrientedPointCloud:
    def test_validates_normal_length(self):
        with pytest.raises(ValueError):
            OrientedPointCloud(points=[[0, 0, 0]], normals=[[0.5, 0, 0]])

    def test_validates_parallel_lengths(self):
        with pytest.raises(ValueError):
            OrientedPointCloud(points=[[0, 0, 0], [1, 0, 0]], normals=[[1, 0, 0]])

    def test_rejects_negative_reflectivity(self):
        with pytest.raises(ValueError):
            OrientedPointCloud(points=[[0, 0, 0]], reflectivity=[-1.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            OrientedPointCloud(points=[[np.nan, 0, 0]])

    def test_subset_keeps_fields(self, rng):
        cloud = random_cloud(rng, 50, with_normals=True)
        sub = cloud.subset(np.arange(10))
        assert len(sub) == 10
        assert sub.normals.shape == (10, 3)


class TestSampleSurface:
    def test_cube_per_face_counts(self):
        # area-weighting oracle: each cube face should get ~n/6 points;
        # multinomial 3-sigma band around 1000 is +-87
        mesh = box_mesh(size=(1.0, 1.0, 1.0))
        cloud = sample_surface(mesh, 6000, seed=3)
        sigma = np.sqrt(6000 * (1 / 6) * (5 / 6))
        for axis in range(3):
            for side in (-0.5, 0.5):
                on_face = np.sum(np.abs(cloud.points[:, axis] - side) < 1e-12)
                assert abs(on_face - 1000) <= 3 * sigma

    def test_single_point_on_face_plane(self):
        mesh = box_mesh(size=(1.0, 1.0, 1.0))
        cloud = sample_surface(mesh, 1, seed=5)
        p = cloud.points[0]
        assert np.min(np.abs(np.abs(p) - 0.5)) < 1e-9

    def test_deterministic(self):
        mesh = sphere_mesh(radius=0.1)
        a = sample_surface(mesh, 500, seed=42)
        b = sample_surface(mesh, 500, seed=42)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.normals, b.normals)

    def test_normals_point_outward(self):
        cloud = sample_surface(sphere_mesh(radius=1.0), 800, seed=1)
        dots = np.einsum("ij,ij->i", cloud.normals, cloud.points)
        assert np.mean(dots > 0) > 0.99

    def test_seed_stability_chamfer(self):
        # two different seeds stay within 2x the mean NN spacing of each other
        mesh = sphere_mesh(radius=1.0)
        a = sample_surface(mesh, 2000, seed=0)
        b = sample_surface(mesh, 2000, seed=1)
        from mmrecon.geometry import pairwise_nn_distances

        spacing = pairwise_nn_distances(a.points[:1000], a.points[1000:]).mean()
        assert chamfer_distance(a, b) < 2 * spacing


class TestNormalize:
    def test_symmetric_pair(self):
        cloud = OrientedPointCloud(points=[[0, 0, 0], [2, 0, 0]])
        out, frame = normalize_to_unit_sphere(cloud)
        assert np.allclose(out.points, [[-1, 0, 0], [1, 0, 0]], atol=1e-12)
        assert frame.scale == pytest.approx(1.0)

    def test_already_normalized_is_identity(self, sphere_cloud_2k):
        out1, _ = normalize_to_unit_sphere(sphere_cloud_2k)
        out2, frame2 = normalize_to_unit_sphere(out1)
        assert np.abs(out2.points - out1.points).max() < 1e-7
        assert frame2.scale == pytest.approx(1.0, abs=1e-9)
        assert np.abs(frame2.translation).max() < 1e-9

    def test_round_trip(self, rng):
        cloud = random_cloud(rng, 300, scale=3.0)
        out, frame = normalize_to_unit_sphere(cloud)
        back = frame.apply(out.points)
        assert np.abs(back - cloud.points).max() < 1e-7
        assert np.abs(out.points.mean(axis=0)).max() < 1e-9
        assert np.linalg.norm(out.points, axis=1).max() == pytest.approx(1.0, abs=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateCloudError):
            normalize_to_unit_sphere(OrientedPointCloud(points=[[1, 1, 1], [1, 1, 1]]))

    def test_normals_unchanged(self, rng):
        cloud = random_cloud(rng, 50, with_normals=True)
        out, _ = normalize_to_unit_sphere(cloud)
        assert np.array_equal(out.normals, cloud.normals)


class TestRigidScale:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidScale(rotation=np.eye(3) * 2.0)

    def test_inverse_round_trip(self, rng):
        from mmrecon.shapes import rotation_about

        frame = RigidScale(rotation=rotation_about([1, 2, 3], 0.7), translation=[0.1, -0.2, 0.3], scale=2.5)
        pts = rng.normal(size=(40, 3))
        assert np.abs(frame.inverse_apply(frame.apply(pts)) - pts).max() < 1e-12


class TestKnn:
    def test_collinear(self):
        cloud = OrientedPointCloud(points=[[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        assert list(knn(cloud, [0, 0, 0], 2)) == [0, 1]

    def test_tie_break_lower_index(self):
        pts = np.zeros((10, 3))
        pts[0] = [5, 5, 5]
        cloud = OrientedPointCloud(points=pts)
        # indices 1..9 are all exactly at the query; stable order wins
        assert list(knn(cloud, [0, 0, 0], 3)) == [1, 2, 3]

    def test_equidistant_pair(self):
        pts = np.full((8, 3), 10.0)
        pts[4] = [1, 0, 0]
        pts[7] = [-1, 0, 0]
        cloud = OrientedPointCloud(points=pts)
        assert knn(cloud, [0, 0, 0], 1)[0] == 4

    def test_k_too_large(self):
        cloud = OrientedPointCloud(points=[[0, 0, 0]])
        with pytest.raises(KTooLargeError):
            knn(cloud, [0, 0, 0], 2)

    def test_matches_brute_force(self, rng):
        cloud = random_cloud(rng, 100)
        for _ in range(20):
            q = rng.normal(size=3)
            d = np.linalg.norm(cloud.points - q, axis=1)
            oracle = np.argsort(d, kind="stable")[:7]
            assert np.array_equal(knn(cloud, q, 7), oracle)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(5, 60), k=st.integers(1, 5), seed=st.integers(0, 10_000))
    def test_knn_oracle_property(self, n, k, seed):
        g = np.random.default_rng(seed)
        cloud = OrientedPointCloud(points=g.normal(size=(n, 3)))
        q = g.normal(size=3)
        d = np.linalg.norm(cloud.points - q, axis=1)
        oracle = np.argsort(d, kind="stable")[:k]
        assert np.array_equal(knn(cloud, q, k), oracle)
