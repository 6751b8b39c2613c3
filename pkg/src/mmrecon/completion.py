"""Candidate completion: geometric mirror baseline plus the file-exchange
client for an out-of-process completer.

Every candidate is normalized to the unit sphere, completed there, and mapped
back through the recorded transform. Completers are callables
``(OrientedPointCloud) -> OrientedPointCloud`` operating in the unit-sphere
frame, with a ``tag`` attribute naming the strategy.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CompleterFailure,
    DegenerateCloudError,
    ExchangeTimeout,
    NoCandidatesError,
    ProtocolError,
    RemoteFailure,
)
from .geometry import OrientedPointCloud, RigidScale, normalize_to_unit_sphere
from .meshio import load_cloud, save_cloud
from .proposal import CandidateSet

OUTPUT_POINTS = 2048
DEDUP_DECIMALS = 3  # merge mirrored duplicates within 1e-3
TRIM_NEIGHBOR = 8
TRIM_FACTOR = 2.2  # points sparser than 2.2x the median local spacing are dropped
POLL_SECONDS = 0.1
DEFAULT_TIMEOUT_SECONDS = 120.0


@dataclass
class CompletionRequest:
    """A unit-sphere partial plus the transform back to scene coordinates."""

    partial: OrientedPointCloud
    id: str
    normalization: RigidScale

    def __post_init__(self):
        if len(self.partial) == 0:
            raise ValueError("request partial must be non-empty")
        if np.linalg.norm(self.partial.points, axis=1).max() > 1 + 1e-6:
            raise ValueError("request partial must be unit-sphere normalized")


@dataclass
class CompletedCandidate:
    """A completed reconstruction in original scene coordinates."""

    reconstruction: OrientedPointCloud
    source_index: int
    completer_tag: str

    def __post_init__(self):
        if len(self.reconstruction) == 0:
            raise ValueError("reconstruction must be non-empty")
        self.source_index = int(self.source_index)


def farthest_point_subsample(points: np.ndarray, count: int, start: int | None = None) -> np.ndarray:
    """Indices of a deterministic farthest-point subsample.

    Starts at the point farthest from the centroid (ties to lower index), then
    greedily adds the point farthest from the selected set.
    """
    n = len(points)
    if count >= n:
        return np.arange(n)
    if start is None:
        start = int(np.argmax(np.linalg.norm(points - points.mean(axis=0), axis=1)))
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def _lexsorted(cloud: OrientedPointCloud) -> OrientedPointCloud:
    order = np.lexsort((cloud.points[:, 2], cloud.points[:, 1], cloud.points[:, 0]))
    return cloud.subset(order)


def _trim_sparse_outliers(cloud: OrientedPointCloud) -> OrientedPointCloud:
    """Drop points far sparser than the cloud's typical local spacing.

    The spacing statistic is the distance to the TRIM_NEIGHBOR-th nearest
    neighbor; points beyond TRIM_FACTOR times its median are isolated fringe,
    not surface. Regular (even irregular but uniformly sampled) clouds pass
    through unchanged.
    """
    if len(cloud) <= TRIM_NEIGHBOR + 2:
        return cloud
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(cloud.points).query(cloud.points, k=TRIM_NEIGHBOR + 1)
    spacing = dist[:, TRIM_NEIGHBOR]
    keep = spacing <= TRIM_FACTOR * np.median(spacing)
    if keep.sum() < 10:
        return cloud
    return cloud.subset(keep)


def _tukey_weights(resid: np.ndarray) -> np.ndarray:
    scale = 1.4826 * np.median(np.abs(resid - np.median(resid)))
    if scale < 1e-12:
        return np.ones_like(resid)
    z = resid / (4.0 * scale)
    w = (1.0 - z**2) ** 2
    w[np.abs(z) >= 1.0] = 0.0
    return w


def _robust_rounds(residual_fn, solve_fn, rounds: int = 3):
    """IRLS driver: residual_fn() -> residuals, solve_fn(weights) updates state."""
    for _ in range(rounds):
        resid = residual_fn()
        weights = _tukey_weights(resid)
        if weights.sum() < 8:
            break
        solve_fn(weights)
    resid = residual_fn()
    weights = _tukey_weights(resid)
    inliers = weights > 0
    rms = float(np.sqrt(np.mean(resid[inliers] ** 2))) if inliers.sum() >= 8 else np.inf
    return rms, float(np.mean(inliers))


def fit_sphere_center(points: np.ndarray, refine_steps: int = 10) -> tuple[np.ndarray, float, float, float]:
    """Robust least-squares sphere fit.

    Starts from the linear (algebraic) solution, polishes with Gauss-Newton on
    the geometric residual |p - c| - r, and reweights with a Tukey kernel so a
    minority of off-surface points cannot drag the center. Returns
    (center, radius, inlier_rms, inlier_fraction); flat clouds yield a huge
    radius, which callers use to reject the fit.
    """
    a = np.hstack([2.0 * points, np.ones((len(points), 1))])
    b = np.einsum("ij,ij->i", points, points)
    try:
        sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    except np.linalg.LinAlgError:
        return points.mean(axis=0), np.inf, np.inf, 0.0
    state = {"c": sol[:3], "r": 0.0}
    r2 = sol[3] + state["c"] @ state["c"]
    if r2 <= 0:
        return state["c"], np.inf, np.inf, 0.0
    state["r"] = float(np.sqrt(r2))

    def residuals():
        return np.linalg.norm(points - state["c"], axis=1) - state["r"]

    def gauss_newton(weights):
        for _ in range(refine_steps):
            rel = points - state["c"]
            dist = np.linalg.norm(rel, axis=1)
            if np.any(dist < 1e-12) or not np.isfinite(state["r"]):
                return
            resid = dist - state["r"]
            jac = np.hstack([-rel / dist[:, None], -np.ones((len(points), 1))])
            sw = np.sqrt(weights)[:, None]
            try:
                step, *_ = np.linalg.lstsq(jac * sw, -resid * sw[:, 0], rcond=None)
            except np.linalg.LinAlgError:
                return
            state["c"] = state["c"] + step[:3]
            state["r"] = float(state["r"] + step[3])
            if np.linalg.norm(step) < 1e-12:
                return

    gauss_newton(np.ones(len(points)))
    rms, frac = _robust_rounds(residuals, gauss_newton)
    return state["c"], abs(state["r"]), rms, frac


def _fit_circle_2d(u: np.ndarray, v: np.ndarray, refine_steps: int = 10) -> tuple[float, float, float, float, float]:
    """Robust least-squares circle fit in 2D.

    Returns (cu, cv, radius, inlier_rms, inlier_fraction)."""
    a = np.stack([2.0 * u, 2.0 * v, np.ones(len(u))], axis=1)
    b = u * u + v * v
    try:
        sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    except np.linalg.LinAlgError:
        return float(u.mean()), float(v.mean()), np.inf, np.inf, 0.0
    state = {"cu": float(sol[0]), "cv": float(sol[1]), "r": 0.0}
    r2 = sol[2] + state["cu"] ** 2 + state["cv"] ** 2
    if r2 <= 0:
        return state["cu"], state["cv"], np.inf, np.inf, 0.0
    state["r"] = float(np.sqrt(r2))

    def residuals():
        return np.hypot(u - state["cu"], v - state["cv"]) - state["r"]

    def gauss_newton(weights):
        for _ in range(refine_steps):
            du, dv = u - state["cu"], v - state["cv"]
            dist = np.hypot(du, dv)
            if np.any(dist < 1e-12) or not np.isfinite(state["r"]):
                return
            resid = dist - state["r"]
            jac = np.stack([-du / dist, -dv / dist, -np.ones(len(u))], axis=1)
            sw = np.sqrt(weights)
            try:
                step, *_ = np.linalg.lstsq(jac * sw[:, None], -resid * sw, rcond=None)
            except np.linalg.LinAlgError:
                return
            state["cu"] += step[0]
            state["cv"] += step[1]
            state["r"] = float(state["r"] + step[2])
            if np.linalg.norm(step) < 1e-12:
                return

    gauss_newton(np.ones(len(u)))
    rms, frac = _robust_rounds(residuals, gauss_newton)
    return state["cu"], state["cv"], abs(state["r"]), rms, frac


def estimate_symmetry_offset(pts: np.ndarray, axis: np.ndarray, lateral: np.ndarray) -> float:
    """Offset along ``axis`` of the reflection plane for a one-sided shell.

    Tries a sphere fit and a cylinder-style circle fit (in the plane spanned
    by the view axis and the shell's short lateral direction); when one
    explains the shell tightly its center height locates the symmetry plane.
    Otherwise the shell is treated as flat and the plane sits at its far rim.
    """
    proj = pts @ axis
    rim = float(np.percentile(proj, 5))
    extent = float(np.percentile(proj, 95)) - rim
    diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diam <= 0:
        return rim

    candidates = []  # (relative inlier rms, offset)
    center3, radius3, rms3, frac3 = fit_sphere_center(pts)
    if np.isfinite(radius3) and radius3 <= 1.2 * diam and frac3 >= 0.5:
        candidates.append((rms3 / diam, float(center3 @ axis)))

    u = pts @ lateral
    cu, cv, radius2, rms2, frac2 = _fit_circle_2d(u, proj)
    if np.isfinite(radius2) and radius2 <= 0.9 * diam and frac2 >= 0.5:
        candidates.append((rms2 / diam, float(cv)))

    offset = rim
    if candidates:
        best_rms, best_off = min(candidates)
        if best_rms <= 0.02:
            offset = best_off
    return float(np.clip(offset, rim - max(extent, 0.5 * diam), rim))


def mirror_baseline_complete(partial: OrientedPointCloud) -> OrientedPointCloud:
    """Reflect the partial across a plane perpendicular to its thinnest axis.

    The thinnest axis (third principal component) approximates the radar view
    direction. The reflection plane models the radar-facing/away symmetry of
    the missing data: for curved one-sided shells it passes through the
    fitted curvature center; for flat one-sided shells it sits at the far rim;
    with no normals or two-sided normals it passes through the centroid,
    keeping already-symmetric inputs fixed. Isolated low-density fringe points
    are trimmed first; the mirrored copy is merged with the original,
    deduplicated within 1e-3, and reduced to at most 2048 points by
    farthest-point subsampling.
    """
    if len(partial) < 10:
        raise DegenerateCloudError("mirror baseline needs >= 10 points")
    cloud = _trim_sparse_outliers(_lexsorted(partial))
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    _, vecs = np.linalg.eigh(centered.T @ centered)
    axis = vecs[:, 0]  # least-variance direction
    # canonical sign so the axis (hence FPS order) is point-order independent
    if axis[2] < 0 or (axis[2] == 0 and (axis[1] < 0 or (axis[1] == 0 and axis[0] < 0))):
        axis = -axis

    proj = pts @ axis
    offset = float(pts.mean(axis=0) @ axis)
    if cloud.normals is not None:
        facing = float(np.mean(cloud.normals @ axis))
        if abs(facing) > 0.2:
            # one-sided shell: fold onto the occluded side, away from the normals
            axis = axis if facing > 0 else -axis
            lateral = vecs[:, 1]  # short in-shell direction, for the circle fit
            proj = pts @ axis
            offset = estimate_symmetry_offset(pts, axis, lateral)

    reflected = pts + 2.0 * (offset - proj)[:, None] * axis
    merged_pts = np.vstack([pts, reflected])
    merged_nrm = None
    if cloud.normals is not None:
        mirrored_nrm = cloud.normals - 2.0 * (cloud.normals @ axis)[:, None] * axis
        merged_nrm = np.vstack([cloud.normals, mirrored_nrm])

    key = np.round(merged_pts, DEDUP_DECIMALS)
    _, keep = np.unique(key, axis=0, return_index=True)
    keep.sort()
    merged_pts = merged_pts[keep]
    if merged_nrm is not None:
        merged_nrm = merged_nrm[keep]

    idx = farthest_point_subsample(merged_pts, OUTPUT_POINTS)
    return OrientedPointCloud(
        points=merged_pts[idx],
        normals=None if merged_nrm is None else merged_nrm[idx],
    )


mirror_baseline_complete.tag = "mirror-baseline"


def complete_all(candidates: CandidateSet, completer) -> list[CompletedCandidate]:
    """Run the completer on every candidate in its unit-sphere frame.

    Failures are wrapped in :class:`CompleterFailure` with the candidate index.
    The completer output is mapped back through the recorded normalization; the
    raw input is not concatenated onto it.
    """
    if len(candidates) == 0:
        raise NoCandidatesError("candidate set is empty")
    tag = getattr(completer, "tag", completer.__class__.__name__)
    out: list[CompletedCandidate] = []
    for i, partial in enumerate(candidates.partials):
        try:
            unit, frame = normalize_to_unit_sphere(partial)
            completed = completer(unit)
            restored = frame.apply_cloud(completed)
        except Exception as e:  # noqa: BLE001 - deliberately funneled per candidate
            raise CompleterFailure(i, e) from e
        out.append(CompletedCandidate(reconstruction=restored, source_index=i, completer_tag=tag))
    return out


# ---------------------------------------------------------------------------
# exchange-directory protocol

def request_paths(exchange_dir, request_id: str) -> dict[str, Path]:
    d = Path(exchange_dir)
    return {
        "req_ply": d / f"{request_id}.req.ply",
        "req_json": d / f"{request_id}.req.json",
        "resp_ply": d / f"{request_id}.resp.ply",
        "err_json": d / f"{request_id}.err.json",
    }


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def write_request(exchange_dir, request: CompletionRequest) -> None:
    paths = request_paths(exchange_dir, request.id)
    payload = {"id": request.id, "normalization": request.normalization.to_dict()}
    _atomic_write(paths["req_json"], lambda p: p.write_text(json.dumps(payload, sort_keys=True)))
    _atomic_write(paths["req_ply"], lambda p: save_cloud(request.partial, p))


def await_response(
    exchange_dir,
    request_id: str,
    timeout_s: float = DEFAULT_TIMEOUT_SECONDS,
    poll_s: float = POLL_SECONDS,
) -> OrientedPointCloud:
    """Poll for the response PLY (or error record) for one request id."""
    paths = request_paths(exchange_dir, request_id)
    deadline = time.monotonic() + timeout_s
    while True:
        if paths["err_json"].exists():
            try:
                message = json.loads(paths["err_json"].read_text()).get("message", "")
            except (json.JSONDecodeError, OSError) as e:
                raise ProtocolError(f"unreadable error record for {request_id}: {e}") from e
            raise RemoteFailure(f"remote completer failed for {request_id}: {message}")
        if paths["resp_ply"].exists():
            try:
                cloud = load_cloud(paths["resp_ply"])
            except Exception as e:
                raise ProtocolError(f"malformed response PLY for {request_id}: {e}") from e
            if len(cloud) == 0:
                raise ProtocolError(f"response for {request_id} contains no points")
            if np.linalg.norm(cloud.points, axis=1).max() > 1.2 + 1e-6:
                raise ProtocolError(f"response for {request_id} is not unit-sphere normalized")
            return cloud
        if time.monotonic() >= deadline:
            raise ExchangeTimeout(f"no response for {request_id} within {timeout_s:.1f} s")
        time.sleep(poll_s)


def external_complete(
    request: CompletionRequest,
    exchange_dir,
    timeout_s: float = DEFAULT_TIMEOUT_SECONDS,
    poll_s: float = POLL_SECONDS,
) -> OrientedPointCloud:
    """Send one request through the exchange directory and await its response.

    The response is interpreted in the unit-sphere frame and mapped back to
    scene coordinates via the request's normalization.
    """
    write_request(exchange_dir, request)
    unit = await_response(exchange_dir, request.id, timeout_s=timeout_s, poll_s=poll_s)
    return request.normalization.apply_cloud(unit)


class ExternalCompleter:
    """Completer callable backed by the exchange-directory protocol."""

    def __init__(self, exchange_dir, timeout_s: float = DEFAULT_TIMEOUT_SECONDS, poll_s: float = POLL_SECONDS):
        self.exchange_dir = Path(exchange_dir)
        self.exchange_dir.mkdir(parents=True, exist_ok=True)
        self.timeout_s = timeout_s
        self.poll_s = poll_s
        self.tag = "external"
        self._counter = 0

    def __call__(self, unit_partial: OrientedPointCloud) -> OrientedPointCloud:
        request_id = f"req{os.getpid()}_{self._counter:05d}"
        self._counter += 1
        request = CompletionRequest(partial=unit_partial, id=request_id, normalization=RigidScale())
        write_request(self.exchange_dir, request)
        return await_response(self.exchange_dir, request_id, timeout_s=self.timeout_s, poll_s=self.poll_s)
