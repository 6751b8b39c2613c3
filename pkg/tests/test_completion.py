import json
import threading
import time

import numpy as np
import pytest

from mmrecon.completion import (
    CompletionRequest,
    ExternalCompleter,
    complete_all,
    external_complete,
    farthest_point_subsample,
    mirror_baseline_complete,
    request_paths,
    write_request,
)
from mmrecon.errors import (
    CompleterFailure,
    DegenerateCloudError,
    ExchangeTimeout,
    NoCandidatesError,
    ProtocolError,
    RemoteFailure,
)
from mmrecon.geometry import OrientedPointCloud, RigidScale, normalize_to_unit_sphere, sample_surface
from mmrecon.meshio import load_cloud, save_cloud
from mmrecon.metrics import chamfer_distance, precision_recall_fscore
from mmrecon.proposal import CandidateSet
from mmrecon.shapes import sphere_mesh


@pytest.fixture(scope="module")
def hemisphere_and_sphere():
    gt = sample_surface(sphere_mesh(radius=1.0, rings=48, segments=96), 4000, seed=5)
    return gt.subset(gt.points[:, 2] >= 0), gt


def identity_completer(cloud):
    return cloud


identity_completer.tag = "identity"


def make_candidates(*clouds):
    return CandidateSet(partials=list(clouds), iso_values=np.arange(len(clouds), dtype=float), delta=0.5)


class TestMirrorBaseline:
    def test_hemisphere_completes_the_sphere(self, hemisphere_and_sphere):
        upper, gt = hemisphere_and_sphere
        out = mirror_baseline_complete(upper)
        assert chamfer_distance(out, gt) <= 0.5 * chamfer_distance(upper, gt)
        _, recall, _ = precision_recall_fscore(out, gt, 0.08)
        assert recall >= 0.90

    def test_symmetric_input_is_fixed_point(self, rng):
        half = rng.uniform(-1, 1, size=(600, 3)) * np.array([1.0, 1.0, 0.2])
        sym = OrientedPointCloud(points=np.vstack([half, half * np.array([1, 1, -1.0])]))
        out = mirror_baseline_complete(sym)
        assert chamfer_distance(out, sym) <= 1e-3

    def test_too_few_points(self):
        with pytest.raises(DegenerateCloudError):
            mirror_baseline_complete(OrientedPointCloud(points=np.random.default_rng(0).normal(size=(9, 3))))

    def test_deterministic_and_order_invariant(self, rng, hemisphere_and_sphere):
        upper, _ = hemisphere_and_sphere
        out1 = mirror_baseline_complete(upper)
        perm = rng.permutation(len(upper))
        out2 = mirror_baseline_complete(upper.subset(perm))
        assert np.array_equal(out1.points, out2.points)

    def test_output_capped_at_2048(self, hemisphere_and_sphere):
        upper, _ = hemisphere_and_sphere
        assert len(mirror_baseline_complete(upper)) == 2048

    def test_small_input_not_padded(self, rng):
        cloud = OrientedPointCloud(points=rng.normal(size=(40, 3)))
        out = mirror_baseline_complete(cloud)
        assert 40 <= len(out) <= 80


class TestFarthestPointSubsample:
    def test_exact_count_and_spread(self, rng):
        pts = rng.normal(size=(500, 3))
        idx = farthest_point_subsample(pts, 100)
        assert len(idx) == 100
        assert len(set(idx.tolist())) == 100

    def test_small_input_passthrough(self, rng):
        pts = rng.normal(size=(5, 3))
        assert np.array_equal(farthest_point_subsample(pts, 10), np.arange(5))


class TestCompleteAll:
    def test_identity_round_trip(self, rng):
        cloud = OrientedPointCloud(points=rng.normal(size=(50, 3)) * 0.02 + 0.3)
        completed = complete_all(make_candidates(cloud), identity_completer)
        assert len(completed) == 1
        assert completed[0].source_index == 0
        assert completed[0].completer_tag == "identity"
        assert np.abs(completed[0].reconstruction.points - cloud.points).max() < 1e-6

    def test_empty_candidate_set(self):
        with pytest.raises(NoCandidatesError):
            complete_all(CandidateSet(partials=[], iso_values=[], delta=0.5), identity_completer)

    def test_one_output_per_candidate(self, rng):
        clouds = [OrientedPointCloud(points=rng.normal(size=(30, 3))) for _ in range(4)]
        completed = complete_all(make_candidates(*clouds), identity_completer)
        assert [c.source_index for c in completed] == [0, 1, 2, 3]

    def test_completer_failure_carries_index(self, rng):
        def broken(cloud):
            raise RuntimeError("boom")

        clouds = [OrientedPointCloud(points=rng.normal(size=(30, 3)))]
        with pytest.raises(CompleterFailure) as err:
            complete_all(make_candidates(*clouds), broken)
        assert err.value.index == 0

    def test_round_trip_normalization_invariant(self, rng, hemisphere_and_sphere):
        upper, _ = hemisphere_and_sphere
        scaled = OrientedPointCloud(points=upper.points * 0.07 + np.array([0.1, 0.2, 0.0]), normals=upper.normals)
        completed = complete_all(make_candidates(scaled), mirror_baseline_complete)[0]
        unit_again, frame = normalize_to_unit_sphere(completed.reconstruction)
        back = frame.apply(unit_again.points)
        assert np.abs(back - completed.reconstruction.points).max() < 1e-6


def echo_responder(exchange_dir, request_id, delay=0.0, points=None, error=None):
    """Test double for the remote side of the exchange protocol."""

    def run():
        paths = request_paths(exchange_dir, request_id)
        while not paths["req_ply"].exists():
            time.sleep(0.01)
        if delay:
            time.sleep(delay)
        if error is not None:
            paths["err_json"].write_text(json.dumps({"id": request_id, "message": error}))
            return
        cloud = load_cloud(paths["req_ply"])
        if points is not None:
            cloud = OrientedPointCloud(points=points)
        save_cloud(cloud, paths["resp_ply"])

    t = threading.Thread(target=run, daemon=True)
    t.start()
    return t


class TestExchangeProtocol:
    def _request(self, rng, request_id="req-1"):
        pts = rng.normal(size=(64, 3))
        pts /= np.abs(np.linalg.norm(pts, axis=1)).max()
        return CompletionRequest(
            partial=OrientedPointCloud(points=pts), id=request_id, normalization=RigidScale(scale=2.0)
        )

    def test_loopback_echo(self, tmp_path, rng):
        req = self._request(rng)
        echo_responder(tmp_path, req.id)
        out = external_complete(req, tmp_path, timeout_s=5.0, poll_s=0.01)
        # scene coords = normalization applied to the unit-frame echo
        assert np.abs(out.points - 2.0 * req.partial.points).max() < 1e-5

    def test_sidecar_written(self, tmp_path, rng):
        req = self._request(rng)
        write_request(tmp_path, req)
        sidecar = json.loads(request_paths(tmp_path, req.id)["req_json"].read_text())
        assert sidecar["id"] == req.id
        assert sidecar["normalization"]["scale"] == 2.0

    def test_empty_response_is_protocol_error(self, tmp_path, rng):
        req = self._request(rng)
        echo_responder(tmp_path, req.id, points=np.zeros((0, 3)))
        with pytest.raises(ProtocolError):
            external_complete(req, tmp_path, timeout_s=5.0, poll_s=0.01)

    def test_timeout(self, tmp_path, rng):
        req = self._request(rng)
        with pytest.raises(ExchangeTimeout):
            external_complete(req, tmp_path, timeout_s=0.3, poll_s=0.02)

    def test_remote_failure(self, tmp_path, rng):
        req = self._request(rng)
        echo_responder(tmp_path, req.id, error="model exploded")
        with pytest.raises(RemoteFailure, match="model exploded"):
            external_complete(req, tmp_path, timeout_s=5.0, poll_s=0.01)

    def test_external_completer_callable(self, tmp_path, rng):
        import os

        completer = ExternalCompleter(tmp_path, timeout_s=5.0, poll_s=0.01)
        echo_responder(tmp_path, f"req{os.getpid()}_00000")
        cloud = OrientedPointCloud(points=rng.normal(size=(30, 3)) * 0.1)
        candidates = make_candidates(cloud)
        completed = complete_all(candidates, completer)
        assert len(completed) == 1
        assert completed[0].completer_tag == "external"
        assert np.abs(completed[0].reconstruction.points - cloud.points).max() < 1e-5
