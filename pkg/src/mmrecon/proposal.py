"""Candidate surface proposal from raw signals.

Phase 1 of inference: estimate a per-voxel normal field from the signals,
integrate it into a scalar potential along a deterministic axis-ordered
lattice path, and slice the potential into iso-level candidate surfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoConfidentVoxelsError
from .geometry import OrientedPointCloud
from .imaging import ComplexVolume, VoxelGridSpec, per_sensor_energy_and_directions
from .meshio import save_cloud
from .radar import SignalSet

CONFIDENCE_PERCENTILE = 90.0


@dataclass
class NormalField:
    """Per-voxel direction estimates with confidence; invalid voxels are null."""

    grid: VoxelGridSpec
    directions: np.ndarray  # (V, 3), zero rows where invalid
    confidence: np.ndarray  # (V,)
    valid: np.ndarray  # (V,) bool

    def __post_init__(self):
        v = self.grid.num_voxels
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(v, 3)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(v)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(v)
        if np.any(self.confidence < 0) or not np.all(np.isfinite(self.confidence)):
            raise ValueError("confidence must be finite and >= 0")
        if self.valid.any():
            norms = np.linalg.norm(self.directions[self.valid], axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-6:
                raise ValueError("valid directions must be unit length")


@dataclass
class ScalarField:
    """Accumulated potential with f(v0) = 0 at the reference voxel."""

    grid: VoxelGridSpec
    values: np.ndarray  # (V,)
    v0: int  # flat reference index
    confident: np.ndarray | None = None  # (V,) bool, carried from the normal field

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(self.grid.num_voxels)
        self.v0 = int(self.v0)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential values must be finite")
        if self.values[self.v0] != 0.0:
            raise ValueError("f(v0) must be exactly 0")
        if self.confident is not None:
            self.confident = np.asarray(self.confident, dtype=bool).reshape(self.grid.num_voxels)


@dataclass
class CandidateSet:
    """Iso-level candidate partial surfaces with their iso values."""

    partials: list[OrientedPointCloud]
    iso_values: np.ndarray
    delta: float

    def __post_init__(self):
        self.iso_values = np.asarray(self.iso_values, dtype=np.float64).reshape(-1)
        self.delta = float(self.delta)
        if len(self.partials) != len(self.iso_values):
            raise ValueError("partials and iso_values must be parallel")
        if len(self.iso_values) > 1 and not np.all(np.diff(self.iso_values) > 0):
            raise ValueError("iso_values must be strictly increasing")
        if any(len(p) == 0 for p in self.partials):
            raise ValueError("candidates must be non-empty")

    def __len__(self) -> int:
        return len(self.partials)


def estimate_normal_field(signals: SignalSet, grid: VoxelGridSpec) -> NormalField:
    """Direction = normalized sum over sensors of w_k(v) * u_{k,v}.

    c_k(v) is the per-sensor backprojection at the voxel, u_{k,v} the unit
    vector toward sensor k, and w_k = max(|c_k| - median_k |c_k|, 0) the
    floor-subtracted magnitude (the diffuse sidelobe floor is near-uniform
    across sensors and would otherwise bias every direction toward the array
    center). Confidence is |S(v)|; voxels below its 90th percentile (or with
    a vanishing direction sum) are null.
    """
    s_flat, dir_acc = per_sensor_energy_and_directions(signals, grid)
    confidence = np.abs(s_flat)
    gate = np.percentile(confidence, CONFIDENCE_PERCENTILE)
    norms = np.linalg.norm(dir_acc, axis=1)
    valid = (confidence >= gate) & (confidence > 0) & (norms > 0)
    directions = np.zeros_like(dir_acc)
    directions[valid] = dir_acc[valid] / norms[valid, None]
    return NormalField(grid=grid, directions=directions, confidence=confidence, valid=valid)


def normal_field_volume(field: NormalField) -> ComplexVolume:
    """Confidence as a complex volume (for thresholding / export)."""
    return ComplexVolume(grid=field.grid, values=field.confidence.astype(np.complex128))


def _line_potential(contrib: np.ndarray, i0: int, axis: int) -> np.ndarray:
    """Accumulate step contributions along one axis from index i0.

    ``contrib[..., i]`` is the contribution of stepping INTO slot i moving in
    the +axis direction. Moving in -axis negates it. Output matches contrib's
    shape, with zeros at slot i0.
    """
    contrib = np.moveaxis(contrib, axis, -1)
    out = np.zeros_like(contrib)
    if i0 + 1 < contrib.shape[-1]:
        out[..., i0 + 1 :] = np.cumsum(contrib[..., i0 + 1 :], axis=-1)
    if i0 > 0:
        before = contrib[..., :i0]
        suffix = np.flip(np.cumsum(np.flip(before, axis=-1), axis=-1), axis=-1)
        out[..., :i0] = -suffix
    return np.moveaxis(out, -1, axis)


def integrate_potential(field: NormalField, v0) -> ScalarField:
    """f(v) = sum of N(v_j) . d_j * spacing along the x-then-y-then-z path from v0.

    d_j is the unit step direction into voxel v_j; null voxels contribute 0.
    Contributions are scaled by the voxel spacing so f carries meters and a
    unit normal field recovers physical offsets exactly.
    """
    grid = field.grid
    nx, ny, nz = grid.dims
    if isinstance(v0, (int, np.integer)):
        flat0 = int(v0)
        i0, j0, k0 = grid.unflatten(flat0)
    else:
        i0, j0, k0 = (int(x) for x in v0)
        flat0 = grid.flat_index((i0, j0, k0))

    h = grid.spacing
    comp = field.directions.reshape(nx, ny, nz, 3) * h
    comp = np.where(field.valid.reshape(nx, ny, nz, 1), comp, 0.0)

    # leg 1: along x at (., j0, k0)
    fx = _line_potential(comp[:, j0, k0, 0], i0, axis=0)  # (nx,)
    # leg 2: along y at (x, ., k0)
    fy = _line_potential(comp[:, :, k0, 1], j0, axis=1)  # (nx, ny)
    # leg 3: along z at (x, y, .)
    fz = _line_potential(comp[:, :, :, 2], k0, axis=2)  # (nx, ny, nz)

    f = fx[:, None, None] + fy[:, :, None] + fz
    f.reshape(-1)[flat0] = 0.0  # exact zero at the reference
    return ScalarField(grid=grid, values=f.reshape(-1), v0=flat0, confident=field.valid.copy())


def sample_isosurfaces(
    scalar: ScalarField,
    num_candidates: int,
    delta: float,
    normals: NormalField | None = None,
) -> CandidateSet:
    """Slice the potential into evenly spaced iso-level candidates.

    Iso values span the 10th..90th percentile of f over confident voxels;
    membership is |f(v) - I(i)| < delta among confident voxels. Empty
    candidates are dropped. When a normal field is given, candidate clouds
    carry its directions as normals.
    """
    if num_candidates < 1:
        raise ValueError("num_candidates must be >= 1")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    eligible = scalar.confident if scalar.confident is not None else np.ones(scalar.grid.num_voxels, dtype=bool)
    if not eligible.any():
        raise NoConfidentVoxelsError("no confident voxels to propose surfaces from")

    f = scalar.values
    lo, hi = np.percentile(f[eligible], [10.0, 90.0])
    iso = np.unique(np.linspace(lo, hi, num_candidates))

    centers = scalar.grid.centers()
    partials: list[OrientedPointCloud] = []
    kept_iso: list[float] = []
    for level in iso:
        member = eligible & (np.abs(f - level) < delta)
        if not member.any():
            continue
        nrm = None
        if normals is not None:
            nrm = normals.directions[member]
            ok = np.linalg.norm(nrm, axis=1) > 0.5
            nrm = nrm if ok.all() else None  # null-direction members: drop normals
        partials.append(OrientedPointCloud(points=centers[member], normals=nrm))
        kept_iso.append(float(level))
    return CandidateSet(partials=partials, iso_values=np.asarray(kept_iso), delta=delta)


def save_candidates(candidates: CandidateSet, out_dir) -> Path:
    """Write one PLY per candidate plus a manifest JSON; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (cloud, iso) in enumerate(zip(candidates.partials, candidates.iso_values)):
        name = f"candidate_{i:03d}.ply"
        save_cloud(cloud, out_dir / name)
        records.append({"path": name, "iso_value": float(iso), "delta": candidates.delta, "num_points": len(cloud)})
    manifest = out_dir / "candidates.json"
    manifest.write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    return manifest
