"""End-to-end orchestration: signals -> candidate surfaces -> completions ->
selected reconstruction, plus corpus generation and the benchmark harness.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .completion import CompletedCandidate, ExternalCompleter, complete_all, mirror_baseline_complete
from .config import PipelineConfig
from .errors import (
    EmptyPartialError,
    NoMeshesError,
    NoScenesError,
    PipelineStageError,
    ReconError,
)
from .geometry import OrientedPointCloud, normalize_to_unit_sphere, sample_surface
from .imaging import VoxelGridSpec
from .meshio import load_mesh, save_cloud
from .metrics import evaluate_run
from .partial import VisibilityParams, synthesize_partial
from .proposal import (
    CandidateSet,
    NormalField,
    ScalarField,
    estimate_normal_field,
    integrate_potential,
    sample_isosurfaces,
    save_candidates,
)
from .radar import SignalSet, add_signal_noise, save_signals, simulate_signals
from .selection import SelectionReport, select

logger = logging.getLogger("mmrecon")

MESH_SUFFIXES = (".obj", ".ply")


@dataclass
class PipelineResult:
    """Final reconstruction plus every stage artifact, for inspection."""

    final: OrientedPointCloud
    report: SelectionReport
    field: NormalField
    scalar: ScalarField
    candidates: CandidateSet
    completed: list[CompletedCandidate]

    @property
    def chosen_partial(self) -> OrientedPointCloud:
        return self.candidates.partials[self.report.chosen_index]


def _stage(name: str, func, *args, **kwargs):
    start = time.monotonic()
    try:
        out = func(*args, **kwargs)
    except Exception as e:
        logger.error("stage=%s status=failed error=%s", name, e)
        raise PipelineStageError(name, e) from e
    logger.info("stage=%s elapsed_ms=%.1f", name, 1e3 * (time.monotonic() - start))
    return out


def make_completer(config: PipelineConfig):
    if config.completion.completer == "baseline":
        return mirror_baseline_complete
    return ExternalCompleter(config.completion.exchange_dir, timeout_s=config.completion.timeout_s)


def run_pipeline_full(
    signals: SignalSet,
    config: PipelineConfig,
    completer=None,
    out_dir=None,
    keep_intermediates: bool = False,
) -> PipelineResult:
    """Run all inference stages; optionally persist outputs and intermediates."""
    grid = config.grid.build()
    if completer is None:
        completer = make_completer(config)

    field = _stage("normal-field", estimate_normal_field, signals, grid)
    v0 = int(np.argmax(field.confidence))
    scalar = _stage("potential", integrate_potential, field, v0)
    delta = config.proposal.resolve_delta(grid.spacing)
    candidates = _stage(
        "isosurfaces", sample_isosurfaces, scalar, config.proposal.num_candidates, delta, field
    )
    completed = _stage("completion", complete_all, candidates, completer)
    final, report = _stage(
        "selection",
        select,
        completed,
        candidates.partials,
        signals,
        grid,
        specular_sigma=config.selection.specular_sigma,
        uncertainty_threshold=config.selection.uncertainty_threshold,
        flag_at_or_below=config.selection.flag_at_or_below,
        k=config.selection.knn,
    )

    result = PipelineResult(
        final=final, report=report, field=field, scalar=scalar, candidates=candidates, completed=completed
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_cloud(final, out_dir / "final.ply")
        (out_dir / "selection_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        if keep_intermediates:
            _persist_intermediates(result, out_dir)
    return result


def run_pipeline(signals: SignalSet, config: PipelineConfig, out_dir=None, **kwargs) -> tuple[OrientedPointCloud, SelectionReport]:
    result = run_pipeline_full(signals, config, out_dir=out_dir, **kwargs)
    return result.final, result.report


def _persist_intermediates(result: PipelineResult, out_dir: Path) -> None:
    inter = out_dir / "intermediates"
    inter.mkdir(parents=True, exist_ok=True)
    g = result.field.grid
    np.savez(
        inter / "normal_field.npz",
        directions=result.field.directions,
        confidence=result.field.confidence,
        valid=result.field.valid,
        origin=g.origin,
        spacing=g.spacing,
        dims=np.asarray(g.dims),
    )
    np.savez(
        inter / "scalar_field.npz",
        values=result.scalar.values,
        v0=result.scalar.v0,
        confident=result.scalar.confident,
        origin=g.origin,
        spacing=g.spacing,
        dims=np.asarray(g.dims),
    )
    save_candidates(result.candidates, inter / "candidates")
    comp_dir = inter / "completions"
    comp_dir.mkdir(exist_ok=True)
    for cand in result.completed:
        save_cloud(cand.reconstruction, comp_dir / f"completed_{cand.source_index:03d}.ply")


def load_normal_field(path) -> NormalField:
    data = np.load(path)
    grid = VoxelGridSpec(origin=data["origin"], spacing=float(data["spacing"]), dims=tuple(data["dims"]))
    return NormalField(
        grid=grid, directions=data["directions"], confidence=data["confidence"], valid=data["valid"]
    )


def load_scalar_field(path) -> ScalarField:
    data = np.load(path)
    grid = VoxelGridSpec(origin=data["origin"], spacing=float(data["spacing"]), dims=tuple(data["dims"]))
    return ScalarField(
        grid=grid, values=data["values"], v0=int(data["v0"]), confident=data["confident"]
    )


# ---------------------------------------------------------------------------
# corpus generation


def _list_meshes(mesh_dir) -> list[Path]:
    mesh_dir = Path(mesh_dir)
    return sorted(p for p in mesh_dir.iterdir() if p.suffix.lower() in MESH_SUFFIXES) if mesh_dir.is_dir() else []


def generate_corpus(mesh_dir, out_dir, config: PipelineConfig, seed: int) -> Path:
    """Sample meshes, synthesize physics-consistent (partial, full) pairs, and
    write paired PLYs plus a JSON-lines manifest with an 80/20 split.

    Split assignment shuffles object ids with the given seed; per-object
    failures are logged and skipped.
    """
    meshes = _list_meshes(mesh_dir)
    if not meshes:
        raise NoMeshesError(f"no meshes found in {mesh_dir}")
    out_dir = Path(out_dir)
    pair_dir = out_dir / "pairs"
    pair_dir.mkdir(parents=True, exist_ok=True)

    cc = config.corpus
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(meshes))
    n_train = int(len(meshes) * cc.train_fraction)
    split_of = {int(order[i]): ("train" if i < n_train else "test") for i in range(len(meshes))}
    child_seeds = np.random.SeedSequence(seed).spawn(len(meshes))
    array = cc.build_array()

    records = []
    failures = 0
    for i, path in enumerate(meshes):
        object_id = path.stem
        obj_seed = int(child_seeds[i].generate_state(1)[0] % (2**31))
        obj_rng = np.random.default_rng(obj_seed)
        try:
            mesh = load_mesh(path)
            cloud = sample_surface(mesh, cc.samples_per_object, seed=obj_seed)
            unit, _ = normalize_to_unit_sphere(cloud)
            partial = None
            params = None
            for _attempt in range(20):
                params = VisibilityParams(
                    tau=np.radians(obj_rng.uniform(*cc.tau_deg_range)),
                    tau_h=np.radians(obj_rng.uniform(*cc.tau_h_deg_range)),
                    tau_v=np.radians(obj_rng.uniform(*cc.tau_v_deg_range)),
                    noise_sigma=obj_rng.uniform(*cc.noise_sigma_range),
                    dropout_fraction=cc.dropout_fraction,
                )
                try:
                    partial, _full = synthesize_partial(unit, array, params, seed=obj_seed)
                    break
                except EmptyPartialError:
                    continue
            if partial is None:
                raise EmptyPartialError(f"{object_id}: no visible points after 20 parameter draws")
            partial_path = pair_dir / f"{object_id}_partial.ply"
            full_path = pair_dir / f"{object_id}_full.ply"
            save_cloud(partial, partial_path)
            save_cloud(unit, full_path)
            records.append(
                {
                    "id": object_id,
                    "partial_path": str(partial_path.relative_to(out_dir)),
                    "full_path": str(full_path.relative_to(out_dir)),
                    "tau": params.tau,
                    "tau_h": params.tau_h,
                    "tau_v": params.tau_v,
                    "noise_sigma": params.noise_sigma,
                    "seed": obj_seed,
                    "split": split_of[i],
                }
            )
        except ReconError as e:
            failures += 1
            logger.warning("corpus object=%s skipped: %s", object_id, e)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    logger.info("corpus objects=%d written=%d skipped=%d", len(meshes), len(records), failures)
    return manifest


# ---------------------------------------------------------------------------
# benchmark harness


CSV_COLUMNS = [
    "object_id",
    "status",
    "chamfer",
    "fscore",
    "precision",
    "recall",
    "coverage_percent",
    "coverage_category",
    "size_category",
    "branch",
    "seconds",
]


def benchmark(scene_dir, out_dir, config: PipelineConfig, completer=None) -> dict:
    """Simulate, reconstruct, and evaluate every scene mesh; write per-object
    CSV rows and an aggregate JSON. Failed objects get status rows."""
    scenes = _list_meshes(scene_dir)
    if not scenes:
        raise NoScenesError(f"no scene meshes found in {scene_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    waveform = config.waveform.build()
    array = config.array.build()
    rows = []
    reports = []
    for i, path in enumerate(scenes):
        object_id = path.stem
        start = time.monotonic()
        try:
            mesh = load_mesh(path)
            gt = sample_surface(mesh, config.run.points_per_scene, seed=config.run.seed + i)
            signals = simulate_signals(gt, array, waveform, config.simulate.specular_sigma)
            if config.simulate.add_noise:
                signals = add_signal_noise(signals, config.simulate.snr_db, seed=config.run.seed + i)
            result = run_pipeline_full(signals, config, completer=completer)
            report = evaluate_run(result.final, gt, result.chosen_partial, object_id=object_id,
                                  threshold=config.metrics.threshold)
            reports.append(report)
            rows.append(
                {
                    "object_id": object_id,
                    "status": "ok",
                    "chamfer": report.chamfer,
                    "fscore": report.fscore,
                    "precision": report.precision,
                    "recall": report.recall,
                    "coverage_percent": report.coverage_percent,
                    "coverage_category": report.coverage_category.value,
                    "size_category": report.size_category.value,
                    "branch": result.report.branch,
                    "seconds": time.monotonic() - start,
                }
            )
        except ReconError as e:
            logger.warning("benchmark object=%s failed: %s", object_id, e)
            rows.append(
                {
                    "object_id": object_id,
                    "status": f"error: {e.__class__.__name__}",
                    "chamfer": "",
                    "fscore": "",
                    "precision": "",
                    "recall": "",
                    "coverage_percent": "",
                    "coverage_category": "",
                    "size_category": "",
                    "branch": "",
                    "seconds": time.monotonic() - start,
                }
            )

    csv_path = out_dir / "benchmark.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    aggregate = _aggregate(reports, n_total=len(scenes))
    (out_dir / "aggregate.json").write_text(json.dumps(aggregate, indent=2, sort_keys=True) + "\n")
    return aggregate


def _aggregate(reports, n_total: int) -> dict:
    def summarize(group) -> dict:
        return {
            "count": len(group),
            "chamfer": float(np.mean([r.chamfer for r in group])) if group else None,
            "fscore": float(np.mean([r.fscore for r in group])) if group else None,
            "precision": float(np.mean([r.precision for r in group])) if group else None,
            "recall": float(np.mean([r.recall for r in group])) if group else None,
        }

    by_size = {}
    for cat in {r.size_category for r in reports}:
        by_size[cat.value] = summarize([r for r in reports if r.size_category == cat])
    by_coverage = {}
    for cat in {r.coverage_category for r in reports}:
        by_coverage[cat.value] = summarize([r for r in reports if r.coverage_category == cat])
    out = summarize(reports)
    out.update({"total_objects": n_total, "failed": n_total - len(reports),
                "by_size": by_size, "by_coverage": by_coverage})
    return out
