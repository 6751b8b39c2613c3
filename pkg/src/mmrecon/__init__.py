"""mmrecon: millimeter-wave radar imaging and occluded-object reconstruction.

Pipeline: simulate (or load) FMCW signals, backproject into a voxel image,
estimate a normal field, integrate it into a scalar potential, slice
iso-level candidate surfaces, complete each candidate, and select the final
reconstruction by signal rendering or local entropy.
"""

from .config import PipelineConfig
from .errors import ReconError
from .geometry import OrientedPointCloud, RigidScale, TriangleMesh, knn, normalize_to_unit_sphere, sample_surface
from .imaging import ComplexVolume, VoxelGridSpec, backproject, threshold_image
from .meshio import load_cloud, load_mesh, save_cloud
from .metrics import EvalReport, chamfer_distance, coverage_percent, evaluate_run, precision_recall_fscore, size_category
from .partial import VisibilityParams, anisotropic_mask, radar_facing_mask, specular_mask, synthesize_partial
from .pipeline import benchmark, generate_corpus, run_pipeline, run_pipeline_full
from .proposal import CandidateSet, NormalField, ScalarField, estimate_normal_field, integrate_potential, sample_isosurfaces
from .radar import SensorArray, SignalSet, Waveform, add_signal_noise, load_signals, save_signals, simulate_signals
from .completion import CompletionRequest, ExternalCompleter, complete_all, external_complete, mirror_baseline_complete
from .selection import entropy_score, select, select_by_entropy, select_by_rendering, uncertainty_ratio

__version__ = "0.1.0"
