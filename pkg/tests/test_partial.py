import numpy as np
import pytest

from mmrecon.errors import (
    DegenerateCloudError,
    EmptyPartialError,
    MissingNormalsError,
    SensorCoincidesWithPointError,
)
from mmrecon.geometry import OrientedPointCloud, sample_surface
from mmrecon.partial import (
    VisibilityParams,
    anisotropic_mask,
    radar_facing_mask,
    radar_facing_union_mask,
    specular_mask,
    synthesize_partial,
)
from mmrecon.radar import SensorArray, planar_array
from mmrecon.shapes import box_mesh, sphere_mesh


def cap_fraction_oracle(tau: float, sensor_z: float, n_phi: int = 200_000) -> float:
    """Area fraction of a unit sphere whose radial normal is within tau of the
    direction to a single sensor at (0, 0, sensor_z); finite-distance exact."""
    phi = (np.arange(n_phi) + 0.5) * np.pi / n_phi
    s = np.stack([np.sin(phi), np.zeros_like(phi), np.cos(phi)], axis=1)
    n = s.copy()
    u = np.array([0.0, 0.0, sensor_z]) - s
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    theta = np.arccos(np.clip(np.einsum("ij,ij->i", n, u), -1, 1))
    weight = np.sin(phi) / 2 * (np.pi / n_phi)
    return float(np.sum(weight * (theta < tau)))


class TestVisibilityParams:
    def test_angle_bounds(self):
        with pytest.raises(ValueError):
            VisibilityParams(tau=0.0)
        with pytest.raises(ValueError):
            VisibilityParams(tau_h=3.2)
        with pytest.raises(ValueError):
            VisibilityParams(dropout_fraction=1.0)
        VisibilityParams(tau=np.pi)  # boundary allowed


class TestSpecularMask:
    def test_normal_at_sensor_included(self):
        cloud = OrientedPointCloud(points=[[0, 0, 0]], normals=[[0, 0, 1]])
        array = SensorArray(positions=[[0, 0, 2.0]])
        assert specular_mask(cloud, array, tau=1e-6)[0]

    def test_opposite_normal_excluded(self):
        cloud = OrientedPointCloud(points=[[0, 0, 0]], normals=[[0, 0, -1]])
        array = SensorArray(positions=[[0, 0, 2.0]])
        assert not specular_mask(cloud, array, tau=np.pi / 4)[0]

    def test_sensor_on_point_raises(self):
        cloud = OrientedPointCloud(points=[[0, 0, 1]], normals=[[0, 0, 1]])
        with pytest.raises(SensorCoincidesWithPointError):
            specular_mask(cloud, SensorArray(positions=[[0, 0, 1]]), tau=0.5)

    def test_missing_normals(self):
        with pytest.raises(MissingNormalsError):
            specular_mask(OrientedPointCloud(points=[[0, 0, 0]]), SensorArray(positions=[[0, 0, 1]]), tau=0.5)

    def test_sphere_cap_fraction_matches_oracle(self, sphere_cloud_2k):
        # single overhead sensor at finite distance; +-2% absolute band
        sensor_z = 4.0
        tau = np.radians(30.0)
        array = SensorArray(positions=[[0, 0, sensor_z]])
        frac = specular_mask(sphere_cloud_2k, array, tau).mean()
        oracle = cap_fraction_oracle(tau, sensor_z)
        assert abs(frac - oracle) <= 0.02

    def test_monotone_in_tau(self, sphere_cloud_2k):
        array = SensorArray(positions=[[0, 0, 3.0], [1.5, 0, 2.5]])
        prev = np.zeros(len(sphere_cloud_2k), dtype=bool)
        for tau in np.linspace(0.05, np.pi, 20):
            mask = specular_mask(sphere_cloud_2k, array, tau)
            assert np.all(prev <= mask)
            prev = mask


class TestRadarFacingMask:
    def test_direct_occlusion(self):
        pts = np.array(
            [
                [0, 0, 0.5],  # nearer to the viewpoint
                [0, 0, 0.4],  # directly behind it
                [0.3, 0.3, 0.45],
                [-0.3, 0.3, 0.45],
                [0.3, -0.3, 0.45],
                [-0.3, -0.3, 0.45],
            ]
        )
        mask = radar_facing_mask(OrientedPointCloud(points=pts), viewpoint=[0, 0, 1.0])
        assert mask[0]
        assert not mask[1]

    def test_convex_hemisphere(self, sphere_cloud_2k):
        mask = radar_facing_mask(sphere_cloud_2k, viewpoint=[0, 0, 30.0])
        visible_z = sphere_cloud_2k.points[mask][:, 2]
        assert np.mean(visible_z > -0.05) >= 0.95
        # and it is a meaningful cut, not everything
        assert 0.3 <= mask.mean() <= 0.7

    def test_union_monotone(self, sphere_cloud_2k):
        single = radar_facing_mask(sphere_cloud_2k, viewpoint=[0, 0, 30.0])
        union = radar_facing_union_mask(sphere_cloud_2k, np.array([[0, 0, 30.0], [30.0, 0, 0]]))
        assert np.all(single <= union)

    def test_too_few_points(self):
        with pytest.raises(DegenerateCloudError):
            radar_facing_mask(OrientedPointCloud(points=[[0, 0, 0], [1, 0, 0], [0, 1, 0]]), [0, 0, 5])


class TestAnisotropicMask:
    def mask_of(self, normal, tau_h_deg, tau_v_deg):
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        cloud = OrientedPointCloud(points=[[0, 0, 0]], normals=[n])
        return anisotropic_mask(cloud, np.radians(tau_h_deg), np.radians(tau_v_deg))[0]

    def test_diagonal_normal_included(self):
        assert self.mask_of([1, 1, 0], 50, 50)

    def test_z_normal_excluded(self):
        assert not self.mask_of([0, 0, 1], 89, 89)

    def test_vacuous_bound_includes_generic_cloud(self, sphere_cloud_2k):
        mask = anisotropic_mask(sphere_cloud_2k, np.pi, np.pi)
        assert mask.all()

    def test_monotone_ladders(self, sphere_cloud_2k):
        prev = np.zeros(len(sphere_cloud_2k), dtype=bool)
        for t in np.linspace(0.1, np.pi, 20):
            mask = anisotropic_mask(sphere_cloud_2k, t, t)
            assert np.all(prev <= mask)
            prev = mask

    def test_mask_composition_commutes(self, sphere_cloud_2k):
        array = SensorArray(positions=[[0, 0, 3.0]])
        m1 = specular_mask(sphere_cloud_2k, array, 0.7) & anisotropic_mask(sphere_cloud_2k, 1.2, 1.5)
        m2 = anisotropic_mask(sphere_cloud_2k, 1.2, 1.5) & specular_mask(sphere_cloud_2k, array, 0.7)
        assert np.array_equal(m1, m2)


class TestSynthesizePartial:
    def test_pure_hpr_when_other_masks_vacuous(self, sphere_cloud_2k):
        array = SensorArray(positions=[[0, 0, 25.0]])
        params = VisibilityParams(tau=np.pi, tau_h=np.pi, tau_v=np.pi, noise_sigma=0.0, dropout_fraction=0.0)
        partial, full = synthesize_partial(sphere_cloud_2k, array, params, seed=0)
        expected = radar_facing_union_mask(sphere_cloud_2k, array.positions)
        assert len(partial) == expected.sum()
        assert np.array_equal(partial.points, sphere_cloud_2k.points[expected])
        assert full is sphere_cloud_2k

    def test_cube_top_face_only(self):
        cube = sample_surface(box_mesh(size=(1, 1, 1)), 1200, seed=2)
        array = planar_array(3, 3, extent=0.5, distance=3.0)  # overhead, +z
        params = VisibilityParams(tau=np.radians(20), tau_h=np.pi, tau_v=np.pi, noise_sigma=0.0)
        partial, _ = synthesize_partial(cube, array, params, seed=0)
        assert len(partial) > 0
        assert np.all(np.abs(partial.points[:, 2] - 0.5) < 1e-9)

    def test_deterministic(self, sphere_cloud_2k):
        array = planar_array(2, 2, extent=1.0, distance=5.0)
        params = VisibilityParams(noise_sigma=0.01, dropout_fraction=0.3, tau=np.radians(60))
        a, _ = synthesize_partial(sphere_cloud_2k, array, params, seed=77)
        b, _ = synthesize_partial(sphere_cloud_2k, array, params, seed=77)
        assert np.array_equal(a.points, b.points)

    def test_noiseless_partial_is_subset(self, sphere_cloud_2k):
        array = planar_array(2, 2, extent=1.0, distance=5.0)
        params = VisibilityParams(tau=np.radians(50), noise_sigma=0.0, dropout_fraction=0.0)
        partial, full = synthesize_partial(sphere_cloud_2k, array, params, seed=0)
        full_set = {tuple(p) for p in full.points}
        assert all(tuple(p) in full_set for p in partial.points)

    def test_empty_partial_raises(self, sphere_cloud_2k):
        # all normals point away from a sensor below; tau small
        array = SensorArray(positions=[[0, 0, 5.0]])
        params = VisibilityParams(tau=1e-9)
        with pytest.raises(EmptyPartialError):
            synthesize_partial(sphere_cloud_2k, array, params, seed=0)

    def test_noise_variance(self):
        cloud = sample_surface(sphere_mesh(radius=1.0, rings=64, segments=128), 12_000, seed=3)
        array = SensorArray(positions=[[0, 0, 30.0]])
        sigma = 0.05
        params = VisibilityParams(tau=np.pi, tau_h=np.pi, tau_v=np.pi, noise_sigma=sigma)
        partial, full = synthesize_partial(cloud, array, params, seed=5)
        mask = radar_facing_union_mask(cloud, array.positions)
        displacement = partial.points - cloud.points[mask]
        assert len(displacement) >= 5000
        for axis in range(3):
            var = displacement[:, axis].var()
            assert abs(var - sigma**2) / sigma**2 < 0.10

    def test_requires_min_points(self):
        tiny = OrientedPointCloud(points=np.zeros((5, 3)), normals=np.tile([0, 0, 1.0], (5, 1)))
        with pytest.raises(ValueError):
            synthesize_partial(tiny, SensorArray(positions=[[0, 0, 1]]), VisibilityParams(), seed=0)
