"""Shared fixtures: cameras, pointer patterns, synthetic scene helpers."""

import numpy as np
import pytest

from bandpointer.association import (
    Correspondence,
    PointerEdge,
    PointerSpec,
    fit_homography_1d,
)
from bandpointer.detection import DetectionResult, EdgePointPair
from bandpointer.geometry import fit_line_tls
from bandpointer.pose import CameraModel, PointerPose, project_pointer_edges

RED, GREEN, BLUE = 1, 2, 3

# band colors used by the synthetic scenes; background stays low-saturation.
# the first two are exact red/green channel swaps: their hues mirror about
# h6 = 1, so blends classify symmetrically and defocus cannot push the
# detected junction off center. adjacent hues sit ~0.5 rad apart: far
# enough for ~10-sigma class separation, close enough that defocus blends
# stay inside the calibrated hue support instead of opening a background
# seam that would break the border-adjacency test
BAND_RGB = {
    RED: (0.90, 0.702, 0.06),    # orange, hue ~0.80
    GREEN: (0.702, 0.90, 0.06),  # yellow-green, hue ~1.29
    BLUE: (0.10, 0.85, 0.10),    # green, hue ~2.09
}


def build_spec(distances, bands, total_length, radius=1.5):
    side_labels = [(bands[i], bands[i + 1]) for i in range(len(distances))]
    return PointerSpec(
        edges=tuple(PointerEdge(d, radius) for d in distances),
        side_labels=tuple(side_labels),
        total_length_mm=total_length,
    )


# irregular band lengths of the 251 mm pointer pattern; 10 edges, 11 bands.
# every band is at least 20 mm so the two-pass bounding boxes keep covering
# the junctions at the far end of the depth sweep
SKEWER_DISTANCES = [22.0, 47.0, 67.0, 95.0, 116.0, 142.0, 162.0, 186.0, 209.0, 231.0]
SKEWER_BANDS_RG = [RED, GREEN, RED, GREEN, RED, GREEN, RED, GREEN, RED, GREEN, RED]
# same pointer with one blue band, as used for the reconstruction experiment
SKEWER_BANDS_RGB = [RED, GREEN, RED, BLUE, RED, GREEN, RED, GREEN, RED, GREEN, RED]
# skewer-like slenderness: junction halos stay compact blobs, which the
# orientation-selective filter handles much better than wide bent strips
POINTER_RADIUS_MM = 0.75


@pytest.fixture(scope="session")
def skewer_spec():
    return build_spec(
        SKEWER_DISTANCES, SKEWER_BANDS_RG, total_length=251.0,
        radius=POINTER_RADIUS_MM,
    )


@pytest.fixture(scope="session")
def skewer_spec_blue():
    return build_spec(
        SKEWER_DISTANCES, SKEWER_BANDS_RGB, total_length=251.0,
        radius=POINTER_RADIUS_MM,
    )


@pytest.fixture(scope="session")
def camera_full():
    """2448 x 2048 sensor, similar to the evaluation camera."""
    K = np.array([
        [3600.0, 0.0, 1223.5],
        [0.0, 3600.0, 1023.5],
        [0.0, 0.0, 1.0],
    ])
    return CameraModel(K=K)


@pytest.fixture(scope="session")
def camera_small():
    """Quarter-scale camera for fast rendering tests."""
    K = np.array([
        [600.0, 0.0, 305.5],
        [0.0, 600.0, 255.5],
        [0.0, 0.0, 1.0],
    ])
    return CameraModel(K=K)


SIZE_FULL = (2448, 2048)
SIZE_SMALL = (612, 512)

# detection parameters used by the synthetic-scene fixtures: smaller
# erosion radii than the spec defaults so the bounding boxes of pass 1
# keep covering the junctions of this slender pointer when foreshortened
FIXTURE_PARAMS = dict(r1=3, r2=2)


@pytest.fixture(scope="session")
def small_camera():
    """612 x 512 camera for fast rendered unit tests."""
    K = np.array([
        [1000.0, 0.0, 305.5],
        [0.0, 1000.0, 255.5],
        [0.0, 0.0, 1.0],
    ])
    return CameraModel(K=K)


# short 4-band pointer for small-image detection tests
QUAD_DISTANCES = [25.0, 55.0, 78.0]
QUAD_BANDS = [RED, GREEN, RED, GREEN]


@pytest.fixture(scope="session")
def quad_spec():
    return build_spec(QUAD_DISTANCES, QUAD_BANDS, total_length=100.0, radius=2.0)


def make_calibrated_colors(spec, camera, size, depth_mm=350.0):
    """Color model from a rendered, blurred calibration image + exact mask."""
    from bandpointer import synthetic
    from bandpointer.color_model import calibrate_colors

    pose = pose_at(depth_mm, 5.0, camera, spec, roll_deg=3.0)
    scene = synthetic.SceneSpec(
        pose=pose, spec=spec, band_colors=BAND_RGB, blur_sigma=2.0
    )
    img, _ = synthetic.render(scene, camera, size)
    mask = synthetic.render_class_mask(scene, camera, size)
    return calibrate_colors(img, mask, min_saturation=0.12)


@pytest.fixture(scope="session")
def small_colors(quad_spec, small_camera):
    return make_calibrated_colors(quad_spec, small_camera, SIZE_SMALL)


@pytest.fixture(scope="session")
def full_colors(skewer_spec, camera_full):
    return make_calibrated_colors(
        skewer_spec, camera_full, SIZE_FULL, depth_mm=450.0
    )


def pose_at(depth_mm, angle_deg, camera, spec, roll_deg=0.0, offset_mm=(0.0, 0.0)):
    """Pointer midpoint on the optical axis at the given depth and tilt."""
    axis = camera.R.T @ np.array([0.0, 0.0, 1.0])
    side = camera.R.T @ np.array([1.0, 0.0, 0.0])
    up = camera.R.T @ np.array([0.0, 1.0, 0.0])
    alpha = np.deg2rad(angle_deg)
    roll = np.deg2rad(roll_deg)
    d = (
        np.cos(alpha) * np.cos(roll) * side
        + np.cos(alpha) * np.sin(roll) * up
        + np.sin(alpha) * axis
    )
    mid = camera.center + depth_mm * axis + offset_mm[0] * side + offset_mm[1] * up
    tip = mid - 0.5 * spec.total_length_mm * d
    return PointerPose(tip=tip, direction=d)


def detection_from_pose(
    pose, camera, spec, indices=None, noise_px=0.0, rng=None
):
    """Exact DetectionResult + true Correspondence via the pose projector.

    Useful for tests that exercise association or optimization in
    isolation; cross-validation against the independent renderer path
    happens in the synthetic tests.
    """
    if indices is None:
        indices = list(range(len(spec.edges)))
    pairs = project_pointer_edges(pose, camera, spec, indices)
    pts = []
    for (lo, hi) in pairs:
        lo, hi = lo.copy(), hi.copy()
        if noise_px > 0:
            lo += rng.normal(0, noise_px, 2)
            hi += rng.normal(0, noise_px, 2)
        pts.append((lo, hi))
    line = fit_line_tls(np.vstack([np.vstack(p) for p in pts]))
    entries = []
    for (lo, hi), idx in zip(pts, indices):
        t = float(line.axis_coord(0.5 * (lo + hi))[0])
        entries.append((t, idx, lo, hi))
    entries.sort(key=lambda e: e[0])
    forward = entries[0][1] < entries[-1][1]

    edges = []
    mapping = []
    for det_k, (t, idx, lo, hi) in enumerate(entries):
        left, right = spec.side_labels[idx]
        if not forward:
            left, right = right, left
        edges.append(
            EdgePointPair(
                p_a=lo, p_b=hi, left_label=left, right_label=right,
                axis_coordinate=t,
            )
        )
        mapping.append((det_k, idx))
    result = DetectionResult(edges=edges, line=line)

    b = spec.distances_mm
    sample = [mapping[0], mapping[len(mapping) // 2], mapping[-1]]
    homog = fit_homography_1d(
        [(result.edges[k].axis_coordinate, b[i]) for k, i in sample]
    )
    corr = Correspondence(
        pairs=mapping,
        homography=homog,
        inlier_flags=np.ones(len(edges), dtype=bool),
        orientation="forward" if forward else "reversed",
    )
    return result, corr
