# transients/exceptions.py
"""Error hierarchy for the simulator and the analytic inverse toolkit.

Input validation (scene files, configs, CLI arguments) raises Django's
``ValidationError`` instead; everything here signals a runtime failure.
"""


class LidarSimError(Exception):
    """Base class for every runtime error raised by the transients app."""


# ====================
# GEOMETRY
# ====================
class GeometryError(LidarSimError):
    pass


class DegenerateSegmentError(GeometryError):
    """Segment endpoints coincide."""


class DegenerateGeometryError(GeometryError):
    """Ellipsoid inversion with a vanishing denominator."""


class NoSolutionError(GeometryError):
    """Ellipsoid inversion has no non-negative depth on the pixel ray."""


# ====================
# RENDERING / SENSOR
# ====================
class RendererIntegrityError(LidarSimError):
    """The forward model reached a state a closed room cannot produce."""


class GateOverflowError(LidarSimError):
    """A deposit path length falls outside the histogram gate."""

    def __init__(self, message, count=0):
        super().__init__(message)
        self.count = count


class CubeGeometryMismatchError(LidarSimError):
    pass


class SensorModelError(LidarSimError):
    pass


# ====================
# FILE FORMATS
# ====================
class TransientFormatError(LidarSimError):
    pass


class BadMagicError(TransientFormatError):
    pass


class TruncatedFileError(TransientFormatError):
    pass


class VersionMismatchError(TransientFormatError):
    pass


class ManifestMismatchError(LidarSimError):
    pass


# ====================
# PIPELINE STAGES
# ====================
class PlacementError(LidarSimError):
    """Procedural placement gave up; the message names the constraint."""


class RankDeficientAnchorsError(LidarSimError):
    pass


class CarvingError(LidarSimError):
    pass


class PoseOutOfBoundsError(LidarSimError):
    pass


class MetricInputError(LidarSimError):
    pass
