"""Single-camera 3D tracking of a color-banded pointer."""

from .association import (
    Alignment,
    Correspondence,
    Homography1D,
    PointerEdge,
    PointerSpec,
    align_labels_dp,
    associate_ransac,
    fit_homography_1d,
)
from .color_model import (
    ColorClassSet,
    HueKde,
    calibrate_colors,
    classify_hue,
    classify_image,
)
from .detection import (
    DetectionParams,
    DetectionResult,
    EdgePointPair,
    detect_pointer,
)
from .errors import BandPointerError
from .imaging import (
    BinaryImage,
    DistortionModel,
    HueSatImage,
    RasterImage,
    rgb_to_hue_saturation,
)
from .pose import (
    CameraModel,
    PointerPose,
    PoseEstimate,
    estimate_pose,
    init_depths_linear,
    project_pointer_edges,
    refine_pose_lm,
)
from .synthetic import GroundTruth, SceneSpec, render, sweep

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "BandPointerError",
    "BinaryImage",
    "CameraModel",
    "ColorClassSet",
    "Correspondence",
    "DetectionParams",
    "DetectionResult",
    "DistortionModel",
    "EdgePointPair",
    "GroundTruth",
    "Homography1D",
    "HueKde",
    "HueSatImage",
    "PointerEdge",
    "PointerPose",
    "PointerSpec",
    "PoseEstimate",
    "RasterImage",
    "SceneSpec",
    "align_labels_dp",
    "associate_ransac",
    "calibrate_colors",
    "classify_hue",
    "classify_image",
    "detect_pointer",
    "estimate_pose",
    "fit_homography_1d",
    "init_depths_linear",
    "project_pointer_edges",
    "refine_pose_lm",
    "render",
    "rgb_to_hue_saturation",
    "sweep",
]
