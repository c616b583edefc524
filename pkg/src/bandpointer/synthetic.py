"""Ground-truth oracle: renders a banded pointer under a known camera.

The pointer body is ray-cast per 4x-supersampled subpixel as a stack of
conical frusta (piecewise-linear radius between measured edges), so band
boundaries land exactly where the projection equations put them. Exact
junction contour points come from a projection path written separately
from the pose module, giving the tests two independent implementations
to cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .association import PointerSpec
from .detection import DetectionResult, EdgePointPair
from .errors import BehindCameraError, DegenerateGeometryError
from .geometry import fit_line_tls
from .imaging import RasterImage, distort_points, undistort_points
from .pose import CameraModel, PointerPose

SUPERSAMPLE = 4


@dataclass(frozen=True)
class HighlightStripe:
    """Desaturated patch on the pointer surface.

    Covers an axial interval; `side_fraction` optionally restricts it to a
    band of the visible width (perpendicular image offset over the local
    silhouette half-width, in [-1, 1]), the shape of a specular line
    running along the cylinder. None covers the full circumference.
    """

    start_mm: float
    end_mm: float
    desaturation: float  # 0 = untouched, 1 = white
    side_fraction: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class Occluder:
    """Axis-aligned image-space rectangle painted over the scene."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, pt: np.ndarray) -> bool:
        return bool(
            self.x0 <= pt[0] <= self.x1 and self.y0 <= pt[1] <= self.y1
        )


@dataclass(frozen=True)
class Distractor:
    center: tuple[float, float]
    radius_px: float
    color: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    pose: PointerPose
    spec: PointerSpec
    band_colors: dict[int, tuple[float, float, float]]
    background: tuple[float, float, float] = (0.45, 0.45, 0.47)
    bare_color: tuple[float, float, float] = (0.52, 0.48, 0.42)
    occluder_color: tuple[float, float, float] = (0.35, 0.35, 0.35)
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    noise_seed: int = 0
    highlights: tuple[HighlightStripe, ...] = ()
    occluders: tuple[Occluder, ...] = ()
    distractors: tuple[Distractor, ...] = ()

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_sigma < 0:
            raise ValueError("blur and noise sigmas must be non-negative")
        for rgb in list(self.band_colors.values()) + [self.background]:
            arr = np.asarray(rgb, dtype=np.float64)
            if arr.min() < 0 or arr.max() > 1:
                raise ValueError("colors must lie in [0, 1]")


@dataclass
class EdgeGroundTruth:
    index: int
    p_a: np.ndarray  # negative contour side, raw image px
    p_b: np.ndarray
    visible: bool


@dataclass
class GroundTruth:
    edges: list[EdgeGroundTruth]
    pose: PointerPose

    def visible_edges(self) -> list[EdgeGroundTruth]:
        return [e for e in self.edges if e.visible]


def _camera_center_from_p(p_mat: np.ndarray) -> np.ndarray:
    m = p_mat[:, :3]
    return -np.linalg.solve(m, p_mat[:, 3])


def _project_p(p_mat: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hom = np.hstack([pts, np.ones((len(pts), 1))]) @ p_mat.T
    if np.any(hom[:, 2] <= 0):
        raise BehindCameraError("point behind camera in ground-truth projection")
    return hom[:, :2] / hom[:, 2:3]


def ground_truth(
    scene: SceneSpec, camera: CameraModel, size: tuple[int, int]
) -> GroundTruth:
    """Exact junction contour points in raw image coordinates.

    Deliberately re-derives the projection from the camera matrix rather
    than calling the pose module, so the two stay independent checks.
    """
    width, height = size
    p_mat = camera.P
    center = _camera_center_from_p(p_mat)
    tip = scene.pose.tip
    direction = scene.pose.direction
    normal = np.cross(direction, tip - center)
    nn = np.linalg.norm(normal)
    if nn < 1e-9 * max(np.linalg.norm(tip - center), 1.0):
        raise DegenerateGeometryError("axis through camera center")
    normal = normal / nn

    edges = []
    for i, edge in enumerate(scene.spec.edges):
        axis_pt = tip + edge.distance_mm * direction
        pts = np.vstack([
            axis_pt - edge.radius_mm * normal,
            axis_pt + edge.radius_mm * normal,
        ])
        uv = _project_p(p_mat, pts)
        if camera.distortion is not None and not camera.distortion.is_identity():
            uv = distort_points(uv, camera.distortion)
        inside = bool(
            np.all(uv[:, 0] >= 0)
            and np.all(uv[:, 0] <= width - 1)
            and np.all(uv[:, 1] >= 0)
            and np.all(uv[:, 1] <= height - 1)
        )
        occluded = bool(scene.occluders) and all(
            any(occ.contains(pt) for occ in scene.occluders) for pt in uv
        )
        edges.append(
            EdgeGroundTruth(
                index=i, p_a=uv[0], p_b=uv[1], visible=inside and not occluded
            )
        )
    return GroundTruth(edges=edges, pose=scene.pose)


def _stations(spec: PointerSpec) -> tuple[np.ndarray, np.ndarray]:
    b = spec.distances_mm
    w = spec.radii_mm
    s = np.concatenate([[0.0], b, [spec.total_length_mm]])
    r = np.concatenate([[w[0]], w, [w[-1]]])
    # a final edge exactly at the pointer end would duplicate a station
    keep = np.concatenate([[True], np.diff(s) > 1e-12])
    return s[keep], r[keep]


def _roi(gt: GroundTruth, scene: SceneSpec, camera: CameraModel, size) -> tuple[int, int, int, int]:
    width, height = size
    pts = [e.p_a for e in gt.edges] + [e.p_b for e in gt.edges]
    # project tip and tail axis points through the same path
    p_mat = camera.P
    for s in (0.0, scene.spec.total_length_mm):
        axis_pt = scene.pose.tip + s * scene.pose.direction
        uv = _project_p(p_mat, axis_pt[None, :])
        if camera.distortion is not None and not camera.distortion.is_identity():
            uv = distort_points(uv, camera.distortion)
        pts.append(uv[0])
    for d in scene.distractors:
        c = np.asarray(d.center, dtype=np.float64)
        pts.append(c - d.radius_px)
        pts.append(c + d.radius_px)
    pts = np.vstack(pts)
    # cover the widest possible silhouette plus blur support
    margin = 8.0 + 4.0 * scene.blur_sigma
    margin += 4.0 * float(scene.spec.radii_mm.max()) * camera.K[0, 0] / max(
        1.0, float(camera.to_camera(scene.pose.tip[None, :])[0, 2])
    )
    x0 = max(int(np.floor(pts[:, 0].min() - margin)), 0)
    y0 = max(int(np.floor(pts[:, 1].min() - margin)), 0)
    x1 = min(int(np.ceil(pts[:, 0].max() + margin)) + 1, width)
    y1 = min(int(np.ceil(pts[:, 1].max() + margin)) + 1, height)
    return x0, y0, x1, y1


def _subpixel_rays(camera: CameraModel, px0, py0, px1, py1):
    """World-frame ray directions for subpixel centers of a pixel window."""
    ss = SUPERSAMPLE
    xs = px0 + (np.arange((px1 - px0) * ss) + 0.5) / ss - 0.5
    ys = py0 + (np.arange((py1 - py0) * ss) + 0.5) / ss - 0.5
    px, py = np.meshgrid(xs, ys)
    flat = np.column_stack([px.ravel(), py.ravel()])
    if camera.distortion is not None and not camera.distortion.is_identity():
        flat = undistort_points(flat, camera.distortion)
    k_inv = np.linalg.inv(camera.K)
    hom = np.column_stack([flat, np.ones(len(flat))]) @ k_inv.T
    dirs = hom @ camera.R  # R^T applied to rows
    return dirs.reshape(py.shape[0], px.shape[1], 3)


def _station_uv(scene: SceneSpec, camera: CameraModel):
    """Raw-image projections of the silhouette points at every station."""
    p_mat = camera.P
    center = _camera_center_from_p(p_mat)
    tip = scene.pose.tip
    direction = scene.pose.direction
    normal = np.cross(direction, tip - center)
    normal = normal / np.linalg.norm(normal)
    s_list, r_list = _stations(scene.spec)
    pts = []
    for s, r in zip(s_list, r_list):
        axis_pt = tip + s * direction
        pts.append(axis_pt - r * normal)
        pts.append(axis_pt + r * normal)
    uv = _project_p(p_mat, np.vstack(pts))
    if camera.distortion is not None and not camera.distortion.is_identity():
        uv = distort_points(uv, camera.distortion)
    return s_list, r_list, uv.reshape(len(s_list), 2, 2)


def _raycast(
    scene: SceneSpec, camera: CameraModel, x0: int, y0: int, x1: int, y1: int
) -> np.ndarray:
    """Axial station of the nearest frustum hit per subpixel ray (nan = miss).

    Each conical segment is intersected only inside its own projected
    bounding box; a z-buffer merges overlapping segments.
    """
    ss = SUPERSAMPLE
    h, w = (y1 - y0) * ss, (x1 - x0) * ss
    t_buf = np.full((h, w), np.inf)
    s_buf = np.full((h, w), np.nan)

    center = camera.center
    tip = scene.pose.tip
    d_axis = scene.pose.direction
    q = center - tip
    s0 = q @ d_axis
    q2 = q @ q

    s_list, r_list, uv = _station_uv(scene, camera)
    depth_min = camera.to_camera(
        np.vstack([tip, tip + scene.spec.total_length_mm * d_axis])
    )[:, 2].min()
    bulge = float(r_list.max()) * camera.K[0, 0] / max(depth_min, 1.0)

    for k in range(len(s_list) - 1):
        box_pts = np.vstack([uv[k], uv[k + 1]])
        margin = 3.0 + bulge
        bx0 = max(int(np.floor(box_pts[:, 0].min() - margin)), x0)
        by0 = max(int(np.floor(box_pts[:, 1].min() - margin)), y0)
        bx1 = min(int(np.ceil(box_pts[:, 0].max() + margin)) + 1, x1)
        by1 = min(int(np.ceil(box_pts[:, 1].max() + margin)) + 1, y1)
        if bx1 <= bx0 or by1 <= by0:
            continue
        dirs = _subpixel_rays(camera, bx0, by0, bx1, by1)
        d_dot_axis = dirs @ d_axis
        q_dot_d = dirs @ q
        d_norm2 = np.einsum("ijk,ijk->ij", dirs, dirs)

        s_lo, s_hi = s_list[k], s_list[k + 1]
        r_lo, r_hi = r_list[k], r_list[k + 1]
        c1 = (r_hi - r_lo) / (s_hi - s_lo)
        c0 = r_lo - c1 * s_lo
        k0 = c0 + c1 * s0
        k1 = c1 * d_dot_axis
        a = d_norm2 - d_dot_axis**2 - k1**2
        b = 2.0 * q_dot_d - 2.0 * s0 * d_dot_axis - 2.0 * k0 * k1
        c = q2 - s0**2 - k0**2
        disc = b * b - 4.0 * a * c
        valid = (disc >= 0.0) & (np.abs(a) > 1e-12)
        if not valid.any():
            continue
        sq = np.sqrt(np.where(valid, disc, 0.0))
        a_safe = np.where(valid, a, 1.0)
        sy = slice((by0 - y0) * ss, (by1 - y0) * ss)
        sx = slice((bx0 - x0) * ss, (bx1 - x0) * ss)
        t_loc = t_buf[sy, sx]
        s_loc = s_buf[sy, sx]
        for sign in (-1.0, 1.0):
            t = np.where(valid, (-b + sign * sq) / (2.0 * a_safe), np.inf)
            s_hit = s0 + np.where(valid, t, 0.0) * d_dot_axis
            ok = (
                valid
                & (t > 1e-9)
                & (t < t_loc)
                & (s_hit >= s_lo - 1e-12)
                & (s_hit <= s_hi + 1e-12)
            )
            t_loc[ok] = t[ok]
            s_loc[ok] = s_hit[ok]
    return s_buf


def render(
    scene: SceneSpec, camera: CameraModel, size: tuple[int, int]
) -> tuple[RasterImage, GroundTruth]:
    """Rasterize the scene and return it with exact junction ground truth."""
    width, height = size
    gt = ground_truth(scene, camera, size)
    cam_depth = camera.to_camera(scene.pose.tip[None, :])[0, 2]
    if cam_depth <= 0:
        raise BehindCameraError("pointer tip behind camera")

    image = np.empty((height, width, 3), dtype=np.float64)
    image[:] = np.asarray(scene.background)

    x0, y0, x1, y1 = _roi(gt, scene, camera, size)
    if x1 > x0 and y1 > y0:
        ss = SUPERSAMPLE
        colors = np.empty(((y1 - y0) * ss, (x1 - x0) * ss, 3), dtype=np.float64)
        colors[:] = np.asarray(scene.background)

        _paint_distractors(scene, colors, x0, y0)

        s_hit = _raycast(scene, camera, x0, y0, x1, y1)
        hit = np.isfinite(s_hit)
        if hit.any():
            b = scene.spec.distances_mm
            band_idx = np.searchsorted(b, np.where(hit, s_hit, 0.0), side="right")
            palette = np.array(
                [
                    scene.band_colors.get(lbl, scene.bare_color)
                    if lbl is not None
                    else scene.bare_color
                    for lbl in scene.spec.band_labels
                ],
                dtype=np.float64,
            )
            band_rgb = palette[band_idx]
            for stripe in scene.highlights:
                in_stripe = hit & (s_hit >= stripe.start_mm) & (s_hit <= stripe.end_mm)
                if stripe.side_fraction is not None and in_stripe.any():
                    frac = _silhouette_fraction(scene, camera, s_hit, x0, y0)
                    lo, hi = stripe.side_fraction
                    in_stripe &= (frac >= lo) & (frac <= hi)
                band_rgb[in_stripe] = (
                    band_rgb[in_stripe] * (1.0 - stripe.desaturation)
                    + stripe.desaturation
                )
            colors = np.where(hit[..., None], band_rgb, colors)

        down = colors.reshape(
            y1 - y0, SUPERSAMPLE, x1 - x0, SUPERSAMPLE, 3
        ).mean(axis=(1, 3))
        image[y0:y1, x0:x1] = down

    for occ in scene.occluders:
        ox0 = max(int(np.floor(occ.x0)), 0)
        oy0 = max(int(np.floor(occ.y0)), 0)
        ox1 = min(int(np.ceil(occ.x1)) + 1, width)
        oy1 = min(int(np.ceil(occ.y1)) + 1, height)
        if ox1 > ox0 and oy1 > oy0:
            image[oy0:oy1, ox0:ox1] = np.asarray(scene.occluder_color)

    if scene.blur_sigma > 0:
        # everything outside the content box is constant background, so
        # blurring an expanded crop matches the full-image filter
        pad = int(np.ceil(4.0 * scene.blur_sigma)) + 1
        bx0, by0 = max(x0 - pad, 0), max(y0 - pad, 0)
        bx1, by1 = min(x1 + pad, width), min(y1 + pad, height)
        for occ in scene.occluders:
            bx0 = min(bx0, max(int(occ.x0) - pad, 0))
            by0 = min(by0, max(int(occ.y0) - pad, 0))
            bx1 = max(bx1, min(int(occ.x1) + pad + 1, width))
            by1 = max(by1, min(int(occ.y1) + pad + 1, height))
        for ch in range(3):
            image[by0:by1, bx0:bx1, ch] = ndimage.gaussian_filter(
                image[by0:by1, bx0:bx1, ch], scene.blur_sigma, mode="nearest"
            )
    if scene.noise_sigma > 0:
        rng = np.random.default_rng(scene.noise_seed)
        image += rng.normal(0.0, scene.noise_sigma, image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    return RasterImage(image), gt


def _silhouette_fraction(
    scene: SceneSpec, camera: CameraModel, s_hit: np.ndarray, x0: int, y0: int
) -> np.ndarray:
    """Perpendicular image offset over the local silhouette half-width.

    Approximate (axis-depth based), used only to place highlight stripes.
    """
    ss = SUPERSAMPLE
    h, w = s_hit.shape
    xs = x0 + (np.arange(w) + 0.5) / ss - 0.5
    ys = y0 + (np.arange(h) + 0.5) / ss - 0.5
    px, py = np.meshgrid(xs, ys)

    p_mat = camera.P
    tip = scene.pose.tip
    a0 = _project_p(p_mat, tip[None, :])[0]
    a1 = _project_p(
        p_mat, (tip + scene.spec.total_length_mm * scene.pose.direction)[None, :]
    )[0]
    d = a1 - a0
    d = d / np.linalg.norm(d)
    perp = (py - a0[1]) * d[0] - (px - a0[0]) * d[1]

    s_safe = np.where(np.isfinite(s_hit), s_hit, 0.0)
    radius = np.interp(
        s_safe, scene.spec.distances_mm, scene.spec.radii_mm
    )
    axis_pts = tip[None, None, :] + s_safe[..., None] * scene.pose.direction
    depth = (
        axis_pts.reshape(-1, 3) @ camera.R.T + camera.t
    )[:, 2].reshape(s_hit.shape)
    halfwidth = radius * camera.K[0, 0] / np.maximum(depth, 1.0)
    return perp / np.maximum(halfwidth, 1e-9)


def _paint_distractors(scene: SceneSpec, colors: np.ndarray, x0: int, y0: int):
    ss = SUPERSAMPLE
    ss_h, ss_w, _ = colors.shape
    for d in scene.distractors:
        cx = (d.center[0] - x0 + 0.5) * ss - 0.5
        cy = (d.center[1] - y0 + 0.5) * ss - 0.5
        rad = d.radius_px * ss
        ax0 = max(int(cx - rad) - 1, 0)
        ay0 = max(int(cy - rad) - 1, 0)
        ax1 = min(int(cx + rad) + 2, ss_w)
        ay1 = min(int(cy + rad) + 2, ss_h)
        if ax1 <= ax0 or ay1 <= ay0:
            continue
        ys, xs = np.mgrid[ay0:ay1, ax0:ax1]
        inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= rad * rad
        colors[ay0:ay1, ax0:ax1][inside] = np.asarray(d.color)


def render_class_mask(
    scene: SceneSpec, camera: CameraModel, size: tuple[int, int]
) -> np.ndarray:
    """Calibration mask: a pixel carries a band's class only when every
    subpixel hits that same band (junction and silhouette blends stay 0)."""
    width, height = size
    gt = ground_truth(scene, camera, size)
    mask = np.zeros((height, width), dtype=np.uint8)
    x0, y0, x1, y1 = _roi(gt, scene, camera, size)
    if x1 <= x0 or y1 <= y0:
        return mask
    s_hit = _raycast(scene, camera, x0, y0, x1, y1)
    b = scene.spec.distances_mm
    hit = np.isfinite(s_hit)
    band_idx = np.where(hit, np.searchsorted(b, np.where(hit, s_hit, 0.0), side="right"), -1)
    labels = np.array(
        [lbl if lbl is not None else 0 for lbl in scene.spec.band_labels],
        dtype=np.int64,
    )
    sub_label = np.where(band_idx >= 0, labels[np.clip(band_idx, 0, None)], -1)
    ss = SUPERSAMPLE
    tiles = sub_label.reshape(y1 - y0, ss, x1 - x0, ss)
    first = tiles[:, 0, :, 0]
    uniform = (tiles == first[:, None, :, None]).all(axis=(1, 3)) & (first > 0)
    mask[y0:y1, x0:x1] = np.where(uniform, first, 0).astype(np.uint8)
    return mask


def ground_truth_detection(
    gt: GroundTruth,
    spec: PointerSpec,
    noise_px: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> DetectionResult:
    """DetectionResult assembled from exact (optionally perturbed) points.

    Used by the evaluation harness to exercise association and pose
    estimation without the raster detector in the loop.
    """
    visible = gt.visible_edges()
    if len(visible) < 2:
        raise ValueError("need at least two visible edges")
    pts = []
    for e in visible:
        pa, pb = e.p_a.copy(), e.p_b.copy()
        if noise_px > 0:
            if rng is None:
                rng = np.random.default_rng(0)
            pa = pa + rng.normal(0.0, noise_px, 2)
            pb = pb + rng.normal(0.0, noise_px, 2)
        pts.append((e.index, pa, pb))
    line = fit_line_tls(np.vstack([[pa, pb] for _, pa, pb in pts]).reshape(-1, 2))

    entries = []
    for idx, pa, pb in pts:
        mid = 0.5 * (pa + pb)
        entries.append((float(line.axis_coord(mid)[0]), idx, pa, pb))
    entries.sort(key=lambda e: e[0])
    spec_order = [idx for _, idx, _, _ in entries]
    forward = spec_order[0] < spec_order[-1]

    edges = []
    for t, idx, pa, pb in entries:
        left, right = spec.side_labels[idx]
        if not forward:
            left, right = right, left
        edges.append(
            EdgePointPair(
                p_a=pa, p_b=pb, left_label=left, right_label=right,
                axis_coordinate=t,
            )
        )
    return DetectionResult(edges=edges, line=line)


def scene_to_dict(scene: SceneSpec) -> dict:
    """JSON-ready scene description (pointer measurements live in the
    CLI config; this carries the pose and appearance)."""
    return {
        "tip_mm": [float(v) for v in scene.pose.tip],
        "direction": [float(v) for v in scene.pose.direction],
        "band_colors": {
            str(label): list(rgb) for label, rgb in scene.band_colors.items()
        },
        "background": list(scene.background),
        "bare_color": list(scene.bare_color),
        "occluder_color": list(scene.occluder_color),
        "blur_sigma": scene.blur_sigma,
        "noise_sigma": scene.noise_sigma,
        "noise_seed": scene.noise_seed,
        "highlights": [
            {
                "start_mm": h.start_mm,
                "end_mm": h.end_mm,
                "desaturation": h.desaturation,
                "side_fraction": list(h.side_fraction) if h.side_fraction else None,
            }
            for h in scene.highlights
        ],
        "occluders": [
            {"x0": o.x0, "y0": o.y0, "x1": o.x1, "y1": o.y1}
            for o in scene.occluders
        ],
        "distractors": [
            {"center": list(d.center), "radius_px": d.radius_px, "color": list(d.color)}
            for d in scene.distractors
        ],
    }


def scene_from_dict(data: dict, spec: PointerSpec) -> SceneSpec:
    pose = PointerPose(tip=data["tip_mm"], direction=data["direction"])
    return SceneSpec(
        pose=pose,
        spec=spec,
        band_colors={
            int(label): tuple(rgb) for label, rgb in data["band_colors"].items()
        },
        background=tuple(data.get("background", (0.45, 0.45, 0.47))),
        bare_color=tuple(data.get("bare_color", (0.52, 0.48, 0.42))),
        occluder_color=tuple(data.get("occluder_color", (0.35, 0.35, 0.35))),
        blur_sigma=float(data.get("blur_sigma", 0.0)),
        noise_sigma=float(data.get("noise_sigma", 0.0)),
        noise_seed=int(data.get("noise_seed", 0)),
        highlights=tuple(
            HighlightStripe(
                start_mm=h["start_mm"],
                end_mm=h["end_mm"],
                desaturation=h["desaturation"],
                side_fraction=tuple(h["side_fraction"]) if h.get("side_fraction") else None,
            )
            for h in data.get("highlights", [])
        ),
        occluders=tuple(
            Occluder(o["x0"], o["y0"], o["x1"], o["y1"])
            for o in data.get("occluders", [])
        ),
        distractors=tuple(
            Distractor(tuple(d["center"]), d["radius_px"], tuple(d["color"]))
            for d in data.get("distractors", [])
        ),
    )


@dataclass(frozen=True)
class SweepCell:
    depth_mm: float
    angle_deg: float
    scene: SceneSpec


def sweep(
    depths_mm: Sequence[float],
    angles_deg: Sequence[float],
    template: SceneSpec,
    camera: CameraModel,
    roll_deg: float = 0.0,
    lateral_jitter_mm: float = 0.0,
    seed: int = 0,
) -> list[SweepCell]:
    """One scene per grid cell: the pointer midpoint sits on the optical
    axis at the cell depth, tilted toward depth by the cell angle."""
    if len(depths_mm) == 0 or len(angles_deg) == 0:
        raise ValueError("sweep grid must be non-empty")
    rng = np.random.default_rng(seed)
    axis_dir = camera.R.T @ np.array([0.0, 0.0, 1.0])
    up_dir = camera.R.T @ np.array([0.0, 1.0, 0.0])
    side_dir = camera.R.T @ np.array([1.0, 0.0, 0.0])
    half = template.spec.total_length_mm / 2.0
    roll = np.deg2rad(roll_deg)

    cells = []
    for ci, depth in enumerate(depths_mm):
        for cj, angle in enumerate(angles_deg):
            alpha = np.deg2rad(angle)
            d = (
                np.cos(alpha) * np.cos(roll) * side_dir
                + np.cos(alpha) * np.sin(roll) * up_dir
                + np.sin(alpha) * axis_dir
            )
            mid = camera.center + depth * axis_dir
            if lateral_jitter_mm > 0:
                mid = mid + rng.uniform(
                    -lateral_jitter_mm, lateral_jitter_mm, 2
                ) @ np.vstack([side_dir, up_dir])
            tip = mid - half * d
            pose = PointerPose(tip=tip, direction=d)
            scene = replace(
                template,
                pose=pose,
                noise_seed=template.noise_seed + ci * len(angles_deg) + cj,
            )
            cells.append(SweepCell(depth_mm=depth, angle_deg=angle, scene=scene))
    return cells
