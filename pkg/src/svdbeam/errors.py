"""Exception hierarchy shared by all svdbeam modules."""


class SvdBeamError(Exception):
    """Base class for all svdbeam errors."""


class ConfigError(SvdBeamError):
    """Invalid configuration value or inconsistent parameter set."""


class ShapeError(SvdBeamError):
    """Mismatched array shapes or angle sets between operands."""


class WindowError(SvdBeamError):
    """A scatterer echo falls outside the simulated temporal window."""


class PatchTooSmallError(SvdBeamError):
    """Patch has fewer pixels than transmit angles; the angular law is unresolvable."""


class DegenerateError(SvdBeamError):
    """Numerically degenerate input (zero energy, zero denominator)."""


class BoundaryError(SvdBeamError):
    """A peak or profile crossing lies on or outside the grid boundary."""


class FitError(SvdBeamError):
    """Least-squares fit is rank deficient or has too few usable points."""


class PipelineStageError(SvdBeamError):
    """A pipeline stage failed; carries the stage name and the original cause."""

    def __init__(self, stage, cause):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
