"""Exception hierarchy shared across the toolkit."""


class ReconstructionError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ReconstructionError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


class InvalidConfig(ConfigError):
    """Scene configuration violates its invariants."""


class InvalidNoiseProfile(ConfigError):
    """Negative sigma or otherwise unusable noise profile."""


class NonPositiveEpsilon(ConfigError):
    """Fusion regularizer must be strictly positive."""


class NonPositiveTargetDepth(ReconstructionError):
    """Warped 3D point landed behind (or on) the target camera plane."""


class DimensionMismatch(ReconstructionError):
    """Array operands do not share the required shape."""


class ResolutionMismatch(DimensionMismatch):
    """Token-resolution mask does not match the token grid."""


class EmptyFrame(ReconstructionError):
    """No patch in the frame has any defined depth."""


class NoNeighbors(ReconstructionError):
    """Temporal neighbor set is empty for the requested frame."""


class DegenerateConfiguration(ReconstructionError):
    """Too few or collinear effective correspondences for a rigid solve."""


class ZeroWeightMass(DegenerateConfiguration):
    """All correspondence weights are zero."""


class UndefinedDepthInRegion(ReconstructionError):
    """A pass leaves pixels undefined where the partition requires depth."""


class EmptyCloud(ReconstructionError):
    """Point cloud has no points where at least one is required."""


class LengthMismatch(ReconstructionError):
    """Trajectories being compared have different lengths."""


class InvalidDelta(ReconstructionError):
    """Relative-pose interval is out of range for the trajectory length."""


class StageError(ReconstructionError):
    """Pipeline stage failure, tagged with the stage name and frame id."""

    def __init__(self, stage: str, message: str, frame_id: int | None = None):
        self.stage = stage
        self.frame_id = frame_id
        where = stage if frame_id is None else f"{stage} (frame {frame_id})"
        super().__init__(f"[{where}] {message}")
