"""Pipeline configuration: one sectioned key-value file holds every tunable.

The file format is a TOML-style subset: ``[section]`` headers and
``key = value`` lines where values are JSON scalars or flat lists. Everything
the pipeline leaves open (angular thresholds, iso-surface count, selection
threshold and direction, metric threshold, seeds) lives here so a run is
fully reproducible from its config file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .imaging import VoxelGridSpec
from .partial import VisibilityParams
from .radar import SensorArray, Waveform, dome_array, planar_array


@dataclass
class WaveformConfig:
    start_frequency: float = 77e9
    bandwidth: float = 4e9
    num_samples: int = 256

    def build(self) -> Waveform:
        return Waveform(self.start_frequency, self.bandwidth, int(self.num_samples))


@dataclass
class GridConfig:
    origin: list = field(default_factory=lambda: [-0.126, -0.126, -0.126])
    spacing: float = 0.004
    dims: list = field(default_factory=lambda: [64, 64, 64])

    def build(self) -> VoxelGridSpec:
        return VoxelGridSpec(origin=np.asarray(self.origin), spacing=self.spacing, dims=tuple(self.dims))


@dataclass
class ArrayConfig:
    kind: str = "planar"  # "planar" | "dome"
    rows: int = 7
    cols: int = 7
    extent: float = 0.5
    distance: float = 0.35
    rings: int = 4
    per_ring: int = 8
    max_polar_deg: float = 55.0
    direction: list = field(default_factory=lambda: [0.0, 0.0, 1.0])

    def build(self) -> SensorArray:
        if self.kind == "planar":
            return planar_array(self.rows, self.cols, self.extent, self.distance, self.direction)
        if self.kind == "dome":
            return dome_array(self.rings, self.per_ring, self.distance, self.max_polar_deg, self.direction)
        raise ConfigError(f"unknown array kind {self.kind!r}")


@dataclass
class SimulateConfig:
    specular_sigma: float = 0.35
    add_noise: bool = False
    snr_db: float = 30.0


@dataclass
class VisibilityConfig:
    tau_deg: float = 40.0
    tau_h_deg: float = 90.0
    tau_v_deg: float = 90.0
    noise_sigma: float = 0.01
    dropout_fraction: float = 0.0

    def build(self) -> VisibilityParams:
        return VisibilityParams(
            tau=np.radians(self.tau_deg),
            tau_h=np.radians(self.tau_h_deg),
            tau_v=np.radians(self.tau_v_deg),
            noise_sigma=self.noise_sigma,
            dropout_fraction=self.dropout_fraction,
        )


@dataclass
class CorpusConfig:
    samples_per_object: int = 2048
    tau_deg_range: list = field(default_factory=lambda: [20.0, 60.0])
    tau_h_deg_range: list = field(default_factory=lambda: [20.0, 90.0])
    tau_v_deg_range: list = field(default_factory=lambda: [20.0, 90.0])
    noise_sigma_range: list = field(default_factory=lambda: [0.005, 0.04])
    dropout_fraction: float = 0.05
    train_fraction: float = 0.8
    # sensors for mask synthesis live in the unit-sphere frame of each object
    array_rows: int = 5
    array_cols: int = 5
    array_extent: float = 3.0
    array_distance: float = 2.5
    array_direction: list = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def build_array(self) -> SensorArray:
        return planar_array(self.array_rows, self.array_cols, self.array_extent, self.array_distance, self.array_direction)


@dataclass
class ProposalConfig:
    num_candidates: int = 16
    delta: float = 0.0  # 0 means "half the voxel spacing"

    def resolve_delta(self, spacing: float) -> float:
        return self.delta if self.delta > 0 else spacing / 2.0


@dataclass
class CompletionConfig:
    completer: str = "baseline"  # "baseline" | "external"
    exchange_dir: str = ""
    timeout_s: float = 120.0


@dataclass
class SelectionConfig:
    specular_sigma: float = 0.35
    uncertainty_threshold: float = 0.6
    flag_at_or_below: bool = True
    knn: int = 30
    score_percentile: float = 75.0


@dataclass
class MetricsConfig:
    threshold: float = 0.08
    baseline_percentile: float = 97.0


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 0  # 0 = automatic
    points_per_scene: int = 2048
    keep_intermediates: bool = False


_SECTIONS = {
    "waveform": WaveformConfig,
    "grid": GridConfig,
    "array": ArrayConfig,
    "simulate": SimulateConfig,
    "visibility": VisibilityConfig,
    "corpus": CorpusConfig,
    "proposal": ProposalConfig,
    "completion": CompletionConfig,
    "selection": SelectionConfig,
    "metrics": MetricsConfig,
    "run": RunConfig,
}


@dataclass
class PipelineConfig:
    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    array: ArrayConfig = field(default_factory=ArrayConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    visibility: VisibilityConfig = field(default_factory=VisibilityConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_text(self) -> str:
        lines = []
        for name in _SECTIONS:
            section = getattr(self, name)
            lines.append(f"[{name}]")
            for f in fields(section):
                lines.append(f"{f.name} = {json.dumps(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        data = _parse_sections(text)
        cfg = cls()
        for section_name, entries in data.items():
            if section_name not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section_name}]")
            section = getattr(cfg, section_name)
            known = {f.name for f in fields(section)}
            for key, value in entries.items():
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
                setattr(section, key, value)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        return cls.from_text(path.read_text())

    def validate(self) -> None:
        try:
            self.waveform.build()
            self.grid.build()
            self.array.build()
            self.visibility.build()
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e
        if self.completion.completer not in ("baseline", "external"):
            raise ConfigError(f"unknown completer {self.completion.completer!r}")
        if self.proposal.num_candidates < 1:
            raise ConfigError("proposal.num_candidates must be >= 1")
        if not 0 < self.corpus.train_fraction < 1:
            raise ConfigError("corpus.train_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}


def _parse_sections(text: str) -> dict[str, dict]:
    data: dict[str, dict] = {}
    current: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            current = data.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, _, value = line.partition("=")
        try:
            current[key.strip()] = json.loads(value.strip())
        except json.JSONDecodeError as e:
            raise ConfigError(f"line {lineno}: bad value for {key.strip()!r}: {e}") from e
    return data
