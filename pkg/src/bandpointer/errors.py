"""Exception hierarchy for the tracking pipeline.

The CLI maps these onto distinct exit codes, so failure causes stay
separable all the way out of the process.
"""


class BandPointerError(Exception):
    """Base class for all pipeline errors."""


class InvalidKernelError(BandPointerError):
    """Convolution kernel violates its contract (non-positive sum, even size)."""


class NumericError(BandPointerError):
    """A numeric procedure failed to converge or produced non-finite values."""


class InsufficientCalibrationDataError(BandPointerError):
    """A color class has too few usable calibration pixels."""

    def __init__(self, label: int, count: int, required: int):
        self.label = label
        self.count = count
        self.required = required
        super().__init__(
            f"color class {label} has {count} usable calibration pixels, "
            f"needs {required}"
        )


class ConfigError(BandPointerError):
    """Configuration file is malformed or inconsistent with other inputs."""


class DetectionError(BandPointerError):
    """Base class for detection-stage failures."""


class PointerNotFoundError(DetectionError):
    """A detection stage emptied the candidate region set."""

    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        msg = f"pointer not found (stage: {stage})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InsufficientRegionsError(DetectionError):
    """Fewer than two regions available for centroid line fitting."""


class DegenerateSampleError(BandPointerError):
    """A minimal sample (line pair, homography triplet) is degenerate."""


class NoEdgesError(DetectionError):
    """No junction pixels survived the edge-image construction."""


class InsufficientEdgesError(DetectionError):
    """Fewer than two contour point pairs survived filtering."""


class AssociationError(BandPointerError):
    """Base class for data-association failures."""


class NoAssociationError(AssociationError):
    """Label alignment found no detected edge compatible with the pattern."""


class InsufficientMatchesError(AssociationError):
    """No alignment supplies the three pairings a homography needs."""


class PoseError(BandPointerError):
    """Base class for pose-estimation failures."""


class DegenerateGeometryError(PoseError):
    """Pointer axis passes through the camera center; contour offset undefined."""


class BehindCameraError(PoseError):
    """A required 3D point has non-positive camera-frame depth."""


class DegenerateInitializationError(PoseError):
    """The linear depth-initialization system is rank deficient."""


class InsufficientCorrespondencesError(PoseError):
    """Fewer than three edge correspondences available for optimization."""


class PoseFailureError(PoseError):
    """Every association hypothesis failed pose estimation."""

    def __init__(self, causes: list[Exception]):
        self.causes = causes
        summary = "; ".join(f"{type(c).__name__}: {c}" for c in causes)
        super().__init__(f"all {len(causes)} hypotheses failed ({summary})")
