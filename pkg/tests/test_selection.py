import numpy as np
import pytest

from mmrecon.completion import CompletedCandidate
from mmrecon.errors import EmptyCloudError, NoCandidatesError, TooFewPointsError
from mmrecon.geometry import OrientedPointCloud
from mmrecon.imaging import VoxelGridSpec
from mmrecon.radar import SignalSet, Waveform, planar_array, simulate_signals
from mmrecon.selection import (
    entropy_score,
    select,
    select_by_entropy,
    select_by_rendering,
    uncertainty_ratio,
)
from mmrecon.shapes import rotation_about


def as_candidate(cloud, index=0):
    return CompletedCandidate(reconstruction=cloud, source_index=index, completer_tag="test")


def planar_cloud(rng, n=300, scale=1.0):
    pts = rng.uniform(-1, 1, size=(n, 3)) * scale
    pts[:, 2] = 0.0
    return OrientedPointCloud(points=pts)


def isotropic_cloud(rng, n=300, scale=1.0):
    return OrientedPointCloud(points=rng.normal(size=(n, 3)) * scale)


@pytest.fixture
def grid():
    return VoxelGridSpec(origin=(0, 0, 0), spacing=1.0, dims=(20, 20, 20))


class TestUncertaintyRatio:
    def test_flat_slab_not_flagged(self, grid):
        xs, ys = np.meshgrid(np.arange(10), np.arange(10))
        pts = np.stack([xs.ravel(), ys.ravel(), np.full(100, 3)], axis=1).astype(float)
        res = uncertainty_ratio(OrientedPointCloud(points=pts), grid)
        assert res.ratio == 1.0
        assert not res.high_uncertainty

    def test_single_column_flagged(self, grid):
        pts = np.stack([np.full(10, 2.0), np.full(10, 2.0), np.arange(10.0)], axis=1)
        res = uncertainty_ratio(OrientedPointCloud(points=pts), grid)
        assert res.ratio == pytest.approx(0.1)
        assert res.high_uncertainty

    def test_half_flat_half_stacked(self, grid):
        flat = np.stack([np.arange(50.0) % 10, np.arange(50.0) // 10, np.zeros(50)], axis=1)
        stacked = np.stack([np.full(50, 15.0), np.full(50, 15.0), np.arange(50.0) % 20], axis=1)
        res = uncertainty_ratio(OrientedPointCloud(points=np.vstack([flat, stacked])), grid)
        assert res.ratio == pytest.approx(51 / 100)

    def test_empty_cloud(self, grid):
        with pytest.raises(EmptyCloudError):
            uncertainty_ratio(OrientedPointCloud(points=np.zeros((0, 3))), grid)

    def test_order_invariance_and_z_duplicates(self, grid, rng):
        pts = np.stack([np.arange(30.0) % 6, np.arange(30.0) // 6, np.zeros(30)], axis=1)
        cloud = OrientedPointCloud(points=pts)
        base = uncertainty_ratio(cloud, grid).ratio
        shuffled = OrientedPointCloud(points=pts[rng.permutation(30)])
        assert uncertainty_ratio(shuffled, grid).ratio == base
        stacked = OrientedPointCloud(points=np.vstack([pts, pts + [0, 0, 5.0]]))
        assert uncertainty_ratio(stacked, grid).ratio <= base

    def test_direction_flip(self, grid):
        pts = np.stack([np.arange(10.0), np.zeros(10), np.zeros(10)], axis=1)
        res = uncertainty_ratio(OrientedPointCloud(points=pts), grid, flag_at_or_below=False)
        assert res.ratio == 1.0
        assert res.high_uncertainty  # flipped direction flags flat clouds


class TestEntropyScore:
    def test_coplanar_scores_zero(self, rng):
        assert entropy_score(planar_cloud(rng, 200), k=30) == 0.0

    def test_isotropic_gaussian_in_band(self, rng):
        score = entropy_score(isotropic_cloud(rng, 5000), k=30)
        assert 0.5 <= score <= 1.0

    def test_identical_points_score_zero(self):
        cloud = OrientedPointCloud(points=np.zeros((40, 3)))
        assert entropy_score(cloud, k=30) == 0.0

    def test_too_few_points(self, rng):
        with pytest.raises(TooFewPointsError):
            entropy_score(isotropic_cloud(rng, 30), k=30)

    def test_rigid_invariance(self, rng):
        cloud = isotropic_cloud(rng, 400)
        rot = rotation_about([1, 2, 0.5], 0.9)
        moved = OrientedPointCloud(points=cloud.points @ rot.T + np.array([3.0, -1.0, 2.0]))
        assert entropy_score(moved) == pytest.approx(entropy_score(cloud), abs=1e-9)

    def test_scale_invariance(self, rng):
        cloud = isotropic_cloud(rng, 400)
        scaled = OrientedPointCloud(points=cloud.points * 37.0)
        assert entropy_score(scaled) == pytest.approx(entropy_score(cloud), abs=1e-9)


class TestSelectByEntropy:
    def test_planar_beats_isotropic(self, rng):
        cands = [as_candidate(isotropic_cloud(rng, 400), 0), as_candidate(planar_cloud(rng, 400), 1)]
        assert select_by_entropy(cands) == 1

    def test_single_candidate(self, rng):
        assert select_by_entropy([as_candidate(planar_cloud(rng))]) == 0

    def test_tie_break_lower_index(self, rng):
        cloud = planar_cloud(rng, 200)
        cands = [as_candidate(cloud, 0), as_candidate(cloud, 1)]
        assert select_by_entropy(cands) == 0

    def test_no_candidates(self):
        with pytest.raises(NoCandidatesError):
            select_by_entropy([])

    def test_monotone_transform_invariance(self, rng):
        from mmrecon.selection import entropy_scores

        cands = [as_candidate(isotropic_cloud(rng, 300, scale=s)) for s in (0.5, 1.0)]
        cands.append(as_candidate(planar_cloud(rng, 300)))
        scores = np.asarray(entropy_scores(cands))
        assert select_by_entropy(cands) == int(np.argmin(np.exp(3 * scores)))

    def test_tiny_cloud_never_preferred(self, rng):
        tiny = as_candidate(OrientedPointCloud(points=rng.normal(size=(5, 3))), 0)
        good = as_candidate(planar_cloud(rng, 200), 1)
        assert select_by_entropy([tiny, good]) == 1


class TestSelectByRendering:
    @pytest.fixture
    def setup(self, rng):
        grid = VoxelGridSpec.centered(span=0.1, dims=(26, 26, 26))
        array = planar_array(3, 3, 0.3, 0.4)
        waveform = Waveform(num_samples=32)
        pts = rng.uniform(-0.03, 0.03, size=(40, 3))
        center = array.positions.mean(axis=0)
        nrm = center - pts
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        true_scene = OrientedPointCloud(points=pts, normals=nrm)
        measured = simulate_signals(true_scene, array, waveform)
        return grid, array, waveform, true_scene, measured

    def test_true_candidate_wins_over_shifted_decoys(self, setup):
        grid, array, waveform, true_scene, measured = setup
        decoys = []
        for shift in ([6 * grid.spacing, 0, 0], [0, 0, -7 * grid.spacing]):
            decoys.append(
                OrientedPointCloud(points=true_scene.points + np.asarray(shift), normals=true_scene.normals)
            )
        cands = [as_candidate(decoys[0], 0), as_candidate(true_scene, 1), as_candidate(decoys[1], 2)]
        assert select_by_rendering(cands, measured, specular_sigma=0.35) == 1

    def test_single_candidate(self, setup):
        _, _, _, true_scene, measured = setup
        assert select_by_rendering([as_candidate(true_scene)], measured, 0.35) == 0

    def test_zero_measured_ties_to_first(self, setup):
        grid, array, waveform, true_scene, _ = setup
        zero = SignalSet(np.zeros((len(array), 32), dtype=complex), array, waveform)
        cands = [as_candidate(true_scene, 0), as_candidate(true_scene, 1)]
        assert select_by_rendering(cands, zero, 0.35) == 0


class TestSelectDispatch:
    def _flat_partial(self, n=100):
        xs, ys = np.meshgrid(np.arange(10), np.arange(10))
        return OrientedPointCloud(points=np.stack([xs.ravel(), ys.ravel(), np.zeros(100)], axis=1).astype(float))

    def _stacked_partial(self):
        return OrientedPointCloud(
            points=np.stack([np.full(40, 3.0), np.full(40, 4.0), np.arange(40.0) % 18], axis=1)
        )

    def test_all_flat_uses_rendering(self, rng, grid):
        waveform = Waveform(num_samples=16)
        array = planar_array(2, 2, 0.3, 30.0)
        flat = self._flat_partial()
        nrm = np.tile([0, 0, 1.0], (len(flat), 1))
        recon = OrientedPointCloud(points=flat.points, normals=nrm)
        measured = simulate_signals(recon, array, waveform)
        final, report = select([as_candidate(recon)], [flat], measured, grid)
        assert report.branch == "rendering"
        assert report.rendering_scores
        assert final is recon

    def test_any_stacked_switches_to_entropy(self, rng, grid):
        waveform = Waveform(num_samples=16)
        array = planar_array(2, 2, 0.3, 30.0)
        flat, stacked = self._flat_partial(), self._stacked_partial()
        recon_a = OrientedPointCloud(points=np.vstack([flat.points] * 2))
        recon_b = OrientedPointCloud(points=np.vstack([stacked.points] * 2))
        measured = SignalSet(np.zeros((4, 16), dtype=complex), array, waveform)
        final, report = select(
            [as_candidate(recon_a, 0), as_candidate(recon_b, 1)], [flat, stacked], measured, grid
        )
        assert report.branch == "entropy"
        assert len(report.entropy_scores) == 2
        assert report.chosen_index == 0  # the flat reconstruction is lower entropy

    def test_parallel_lengths_enforced(self, rng, grid):
        waveform = Waveform(num_samples=16)
        array = planar_array(2, 2, 0.3, 30.0)
        measured = SignalSet(np.zeros((4, 16), dtype=complex), array, waveform)
        with pytest.raises(ValueError):
            select([as_candidate(self._flat_partial())], [], measured, grid)
