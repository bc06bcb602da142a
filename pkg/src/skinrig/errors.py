"""Exception types shared across the toolkit.

Every error that maps to a CLI exit code lives here so the command layer
can translate uniformly.
"""


class SkinrigError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SkinrigError):
    """Bad or incomplete configuration (missing file, missing key, bad value)."""


# -- geometry ----------------------------------------------------------------

class MeshError(SkinrigError):
    pass


class OpenSectionError(MeshError):
    """A cross-section polyline failed to close within tolerance."""


class DegenerateMeshError(MeshError):
    """A section produced too few intersection points to be meaningful."""


class RadiusTooLargeError(SkinrigError):
    """Poisson-disc radius so large that fewer than 4 samples fit."""


# -- skin design -------------------------------------------------------------

class InfeasibleDesignError(SkinrigError):
    """Rounded-up stitch count breaks the upper stretch bound.

    Carries the offending layer and axis so the CLI can print the violated
    inequality.
    """

    def __init__(self, layer: str, axis: str, message: str):
        super().__init__(message)
        self.layer = layer
        self.axis = axis


# -- planning ----------------------------------------------------------------

class AngleInfeasibleError(SkinrigError):
    """No approach direction within the angle limit avoids the obstacles."""


# -- rig simulation ----------------------------------------------------------

class PlanExecutionError(SkinrigError):
    """A touch point is unreachable on the instrumented surface."""


class FormatVersionError(SkinrigError):
    """Dataset or config file carries an unsupported format version."""


class ChecksumError(SkinrigError):
    """Dataset file failed its integrity check (truncated or edited)."""


# -- calibration -------------------------------------------------------------

class EmptyClassError(SkinrigError):
    """A cell has zero positive training points; it cannot be localized."""


class CoverageError(SkinrigError):
    """Dataset does not cover every cell of the grid."""

    def __init__(self, uncovered: list[int]):
        super().__init__(f"{len(uncovered)} cells have no positive samples: {uncovered}")
        self.uncovered = uncovered


class DegenerateFitError(SkinrigError):
    """Force regression input has zero variance (all readings equal)."""


class SplitTooSmallError(SkinrigError):
    """Test split contains no usable in-contact frames."""


# -- control -----------------------------------------------------------------

class InfeasibleQPError(SkinrigError):
    """No joint velocity satisfies all contact constraints."""


class UncalibratedCellError(SkinrigError):
    """A frame references a cell with no calibrated field or force model."""


class FrameMismatchError(SkinrigError):
    """Displacements expressed in different frames cannot be summed."""


class TraceFormatError(SkinrigError):
    """Contact trace file is malformed."""
