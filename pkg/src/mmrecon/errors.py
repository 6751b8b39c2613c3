"""Exception types shared across the toolkit."""


class ReconError(Exception):
    """Base class for all toolkit errors."""


class ParseError(ReconError):
    """A mesh or binary artifact file is malformed."""


class EmptyMeshError(ReconError):
    """A mesh has no valid faces (after cleanup)."""


class DegenerateCloudError(ReconError):
    """A point cloud has no spatial extent usable for the operation."""


class KTooLargeError(ReconError):
    """Requested more neighbors than there are points."""


class MissingNormalsError(ReconError):
    """The operation requires per-point normals and the cloud has none."""


class SensorCoincidesWithPointError(ReconError):
    """A sensor position is (numerically) on top of a scene point."""


class EmptyPartialError(ReconError):
    """All points were masked out; the caller should resample parameters."""


class NoConfidentVoxelsError(ReconError):
    """No voxels passed the confidence gate; cannot propose surfaces."""


class NoCandidatesError(ReconError):
    """A candidate set or completion list is empty."""


class CompleterFailure(ReconError):
    """A completion strategy failed for one candidate."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"completer failed on candidate {index}: {cause}")
        self.index = index
        self.cause = cause


class ExchangeTimeout(ReconError):
    """No response arrived within the exchange-protocol deadline."""


class ProtocolError(ReconError):
    """The exchange-protocol response is malformed."""


class RemoteFailure(ReconError):
    """The remote completer reported an error record."""


class EmptyCloudError(ReconError):
    """A metric or selection operation received an empty cloud."""


class TooFewPointsError(ReconError):
    """Not enough points for the requested neighborhood size."""


class NonPositiveDimensionError(ReconError):
    """A physical dimension must be strictly positive."""


class NoMeshesError(ReconError):
    """A corpus directory contains no loadable meshes."""


class NoScenesError(ReconError):
    """A benchmark directory contains no scene fixtures."""


class ConfigError(ReconError):
    """A configuration file is malformed or violates an invariant."""


class PipelineStageError(ReconError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
