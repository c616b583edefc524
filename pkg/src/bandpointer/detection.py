"""Two-pass detection of band junction contour points.

Pass 1 finds candidate colored regions at a strict saturation threshold;
pass 2 re-detects inside expanded bounding boxes with a permissive
threshold, then junction halos are filtered with an orientation-selective
kernel and reduced to sub-pixel contour point pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .color_model import ColorClassSet, classify_image_masked
from .association import PointerSpec
from .errors import (
    DegenerateSampleError,
    InsufficientEdgesError,
    InsufficientRegionsError,
    NoEdgesError,
    PointerNotFoundError,
)
from .geometry import Line2D, OrientedBox, boxes_mask, fit_line_tls, line_through, principal_axes
from .imaging import (
    BinaryImage,
    HueSatImage,
    RasterImage,
    Region,
    connected_components,
    convolve_unit_sum,
    erode_disk,
    rgb_to_hue_saturation,
)

_EIGHT = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class DetectionParams:
    """Tunable thresholds; the derived distances follow the erosion radii."""

    s1: float = 0.25
    s2: float = 0.12
    r1: int = 5
    r2: int = 2
    major_expand: float = 1.1
    minor_expand: float = 1.5
    binarize_threshold: float = 0.3
    line_inlier_sigmas: float = 3.0
    pair_separation_sigmas: float = 5.0
    ransac_iterations: int = 200
    ransac_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.s2 < self.s1 <= 1.0):
            raise ValueError("need 0 <= s2 < s1 <= 1")
        if not (0 < self.r2 < self.r1):
            raise ValueError("need 0 < r2 < r1")

    def adjacency_distance(self, radius: int) -> float:
        return 2.0 * radius + 4.0

    @property
    def edge_halo(self) -> int:
        return 2 * self.r2 + 1

    @property
    def sigma_d(self) -> float:
        return float(self.edge_halo)

    @property
    def sigma_a(self) -> float:
        return np.pi / 12.0


@dataclass
class EdgePointPair:
    """Two sub-pixel contour points of one band junction."""

    p_a: np.ndarray  # negative side of the halo line
    p_b: np.ndarray
    left_label: Optional[int] = None
    right_label: Optional[int] = None
    axis_coordinate: float = 0.0

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p_a + self.p_b)

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.p_a - self.p_b))


@dataclass
class DetectionResult:
    edges: list[EdgePointPair]
    line: Line2D  # L2, fit to the pair points
    pass1_regions: list[Region] = field(default_factory=list)
    pass2_regions: list[Region] = field(default_factory=list)


def _region_crop(regions: Iterable[Region], margin: int, size: tuple[int, int]):
    """Common crop window (x0, y0, w, h) covering all region pixels."""
    width, height = size
    all_px = np.vstack([r.pixels for r in regions])
    x0 = max(int(all_px[:, 0].min()) - margin, 0)
    y0 = max(int(all_px[:, 1].min()) - margin, 0)
    x1 = min(int(all_px[:, 0].max()) + margin + 1, width)
    y1 = min(int(all_px[:, 1].max()) + margin + 1, height)
    return x0, y0, x1 - x0, y1 - y0


def _label_masks(
    regions: Iterable[Region], crop: tuple[int, int, int, int]
) -> dict[int, np.ndarray]:
    x0, y0, w, h = crop
    masks: dict[int, np.ndarray] = {}
    for reg in regions:
        mask = masks.setdefault(reg.label, np.zeros((h, w), dtype=bool))
        mask[reg.pixels[:, 1] - y0, reg.pixels[:, 0] - x0] = True
    return masks


def detect_band_regions(
    hs: HueSatImage,
    colors: ColorClassSet,
    spec_adjacency: set[frozenset[int]],
    s: float,
    r: int,
    roi: Optional[list[OrientedBox]] = None,
) -> list[Region]:
    """Classified regions that survive erosion and the color-adjacency test.

    A region stays only if some region of an adjacent pattern color comes
    within 2r + 4 pixels of its border.
    """
    roi_mask = boxes_mask(roi, hs.width, hs.height) if roi is not None else None
    labels_raster = classify_image_masked(colors, hs, s, roi_mask)

    regions: list[Region] = []
    for label in colors.labels:
        mask = labels_raster == label
        if not mask.any():
            continue
        eroded = erode_disk(BinaryImage(mask), r)
        for reg in connected_components(eroded):
            reg.label = label
            regions.append(reg)
    if not regions:
        return []

    w_adj = 2 * r + 4
    crop = _region_crop(regions, w_adj + 2, (hs.width, hs.height))
    x0, y0, _, _ = crop
    masks = _label_masks(regions, crop)
    dist_to = {
        label: ndimage.distance_transform_edt(~mask)
        for label, mask in masks.items()
    }

    neighbors: dict[int, set[int]] = {}
    for pair in spec_adjacency:
        a, b = tuple(pair)
        neighbors.setdefault(a, set()).add(b)
        neighbors.setdefault(b, set()).add(a)

    kept = []
    for reg in regions:
        ys = reg.pixels[:, 1] - y0
        xs = reg.pixels[:, 0] - x0
        for other in neighbors.get(reg.label, ()):
            if other not in dist_to:
                continue
            # center-to-center minus one: touching pixels have border
            # distance zero
            border_dist = max(float(dist_to[other][ys, xs].min()) - 1.0, 0.0)
            if border_dist <= w_adj:
                kept.append(reg)
                break
    return kept


def _region_crosses(region: Region, line: Line2D) -> bool:
    d = line.perp_distance(region.pixels.astype(np.float64))
    return bool((d > 0).any() and (d < 0).any())


def ransac_centroid_line(
    regions: list[Region], params: DetectionParams
) -> tuple[Line2D, list[Region]]:
    """Line through two region centroids maximizing the crossed-region count.

    Regions whose centroids sit within 3 sigma of the winning line are
    returned; sigma comes from the crossing regions' perpendicular
    distances, with a half-pixel floor against degenerate collinearity.
    """
    if len(regions) < 2:
        raise InsufficientRegionsError(f"{len(regions)} regions, need 2")
    centroids = np.array([r.centroid for r in regions])
    rng = np.random.default_rng(params.ransac_seed)
    best_line = None
    best_crossing: list[int] = []
    sampled_valid = False
    for _ in range(params.ransac_iterations):
        i, j = rng.choice(len(regions), size=2, replace=False)
        if np.linalg.norm(centroids[i] - centroids[j]) < 1e-9:
            continue
        sampled_valid = True
        line = line_through(centroids[i], centroids[j])
        crossing = [k for k, reg in enumerate(regions) if _region_crosses(reg, line)]
        if best_line is None or len(crossing) > len(best_crossing):
            best_line, best_crossing = line, crossing
    if not sampled_valid:
        raise DegenerateSampleError("all sampled centroid pairs coincide")

    dist = best_line.perp_distance(centroids)
    if len(best_crossing) >= 2:
        sigma = float(np.sqrt(np.mean(dist[best_crossing] ** 2)))
    else:
        sigma = float(params.r2)
    sigma = max(sigma, 0.5)
    keep = np.abs(dist) <= params.line_inlier_sigmas * sigma
    return best_line, [reg for reg, k in zip(regions, keep) if k]


def expand_bounding_boxes(
    regions: list[Region], major: float = 1.1, minor: float = 1.5
) -> list[OrientedBox]:
    """Oriented boxes from moment ellipses, stretched per axis."""
    boxes = []
    for reg in regions:
        semi, axes, center = reg.ellipse()
        boxes.append(
            OrientedBox(
                center=center,
                axes=axes,
                half_extents=np.array([major * semi[0], minor * semi[1]]),
            )
        )
    return boxes


def _orientation_kernel(phi: float, sigma_d: float, sigma_a: float) -> np.ndarray:
    """Unit-sum kernel selective for lines at angle phi through each pixel.

    The angle term uses the undirected line angle, folded into a half
    period, and is defined as zero at the central pixel.
    """
    half = int(np.ceil(3.0 * sigma_d))
    coords = np.arange(-half, half + 1, dtype=np.float64)
    x = coords[None, :]
    y = coords[:, None]
    ang = np.arctan2(y, x)
    diff = np.mod(ang - phi + np.pi / 2.0, np.pi) - np.pi / 2.0
    rad2 = x * x + y * y
    h = np.exp(-rad2 / (2.0 * sigma_d**2) - diff**2 / (2.0 * sigma_a**2))
    h[half, half] = 1.0  # radius 0, angle term defined as 0
    return h / h.sum()


@dataclass
class JunctionImages:
    """Intermediate binary images of the junction-extraction stage."""

    crop: tuple[int, int, int, int]  # x0, y0, w, h
    halo: np.ndarray  # I_b1
    filtered: np.ndarray  # I_b2
    combined: np.ndarray  # I_b3
    phi: float


def _junction_images(
    regions: list[Region],
    spec_adjacency: set[frozenset[int]],
    params: DetectionParams,
    image_size: tuple[int, int],
    fallback_axis: Optional[Line2D] = None,
) -> JunctionImages:
    e = params.edge_halo
    margin = e + int(np.ceil(3.0 * params.sigma_d)) + 2
    crop = _region_crop(regions, margin, image_size)
    masks = _label_masks(regions, crop)
    dist_to = {
        label: ndimage.distance_transform_edt(~mask)
        for label, mask in masks.items()
    }
    halo = np.zeros(masks[next(iter(masks))].shape, dtype=bool)
    for pair in spec_adjacency:
        a, b = tuple(pair)
        if a in dist_to and b in dist_to:
            halo |= (dist_to[a] <= e) & (dist_to[b] <= e)
    if not halo.any():
        raise NoEdgesError("no pixels near two adjacent band colors")

    ys, xs = np.nonzero(halo)
    pts = np.column_stack([xs, ys]).astype(np.float64)
    evals, evecs = principal_axes(pts)
    if evals[0] > 0 and (evals[0] - evals[1]) > 0.01 * evals[0]:
        second = evecs[:, 1]
        phi = float(np.arctan2(second[1], second[0]))
    elif fallback_axis is not None:
        d = fallback_axis.direction
        phi = float(np.arctan2(d[1], d[0]) + np.pi / 2.0)
    else:
        second = evecs[:, 1]
        phi = float(np.arctan2(second[1], second[0]))
    phi = float(np.mod(phi + np.pi / 2.0, np.pi) - np.pi / 2.0)

    kernel = _orientation_kernel(phi, params.sigma_d, params.sigma_a)
    response = convolve_unit_sum(BinaryImage(halo), kernel)
    filtered = response >= params.binarize_threshold
    combined = halo & filtered
    if not combined.any():
        raise NoEdgesError("junction filter response below threshold everywhere")
    return JunctionImages(
        crop=crop, halo=halo, filtered=filtered, combined=combined, phi=phi
    )


def _refine_subpixel(combined: np.ndarray, px: int, py: int) -> np.ndarray:
    """Centroid of the junction pixels in the 3x3 neighborhood."""
    h, w = combined.shape
    y0, y1 = max(py - 1, 0), min(py + 2, h)
    x0, x1 = max(px - 1, 0), min(px + 2, w)
    ys, xs = np.nonzero(combined[y0:y1, x0:x1])
    return np.array([xs.mean() + x0, ys.mean() + y0])


def extract_edge_pairs(
    regions: list[Region],
    spec_adjacency: set[frozenset[int]],
    params: DetectionParams,
    image_size: tuple[int, int],
    fallback_axis: Optional[Line2D] = None,
) -> DetectionResult:
    """Sub-pixel contour point pairs of band junctions, ordered along L2.

    See the module docstring for the stage sequence; pairs that are close
    together, not mutual nearest neighbors along the halo line, or with an
    outlying separation are rejected.
    """
    imgs = _junction_images(regions, spec_adjacency, params, image_size, fallback_axis)
    x0, y0, _, _ = imgs.crop
    offset = np.array([x0, y0], dtype=np.float64)

    ys, xs = np.nonzero(imgs.combined)
    line1 = fit_line_tls(np.column_stack([xs, ys]).astype(np.float64) + offset)

    comp_labels, n_comp = ndimage.label(imgs.filtered, structure=_EIGHT)
    raw_pairs: list[tuple[np.ndarray, np.ndarray]] = []
    for idx in range(1, n_comp + 1):
        sel = (comp_labels == idx) & imgs.combined
        sy, sx = np.nonzero(sel)
        if len(sy) == 0:
            continue
        pts = np.column_stack([sx, sy]).astype(np.float64) + offset
        perp = line1.perp_distance(pts)
        hi = int(np.argmax(perp))
        lo = int(np.argmin(perp))
        if not (perp[hi] > 0 and perp[lo] < 0):
            continue
        p_lo = _refine_subpixel(imgs.combined, sx[lo], sy[lo]) + offset
        p_hi = _refine_subpixel(imgs.combined, sx[hi], sy[hi]) + offset
        raw_pairs.append((p_lo, p_hi))

    e = params.edge_halo
    raw_pairs = [
        (a, b) for a, b in raw_pairs if np.linalg.norm(a - b) >= e
    ]
    if len(raw_pairs) >= 2:
        raw_pairs = _mutual_nearest_filter(raw_pairs, line1)
    seps = np.array([np.linalg.norm(a - b) for a, b in raw_pairs])
    if len(seps) >= 2:
        mu, sd = seps.mean(), seps.std()
        if sd > 0:
            keep = np.abs(seps - mu) <= params.pair_separation_sigmas * sd
            raw_pairs = [p for p, k in zip(raw_pairs, keep) if k]
    if len(raw_pairs) < 2:
        raise InsufficientEdgesError(
            f"{len(raw_pairs)} contour point pairs after filtering, need 2"
        )

    all_pts = np.vstack([np.vstack(p) for p in raw_pairs])
    line2 = fit_line_tls(all_pts)
    edges = []
    for p_lo, p_hi in raw_pairs:
        mid = 0.5 * (p_lo + p_hi)
        edges.append(
            EdgePointPair(
                p_a=p_lo,
                p_b=p_hi,
                axis_coordinate=float(line2.axis_coord(mid)[0]),
            )
        )
    edges.sort(key=lambda ep: ep.axis_coordinate)
    return DetectionResult(edges=edges, line=line2, pass2_regions=list(regions))


def _mutual_nearest_filter(
    pairs: list[tuple[np.ndarray, np.ndarray]], line1: Line2D
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Keep pairs whose points are mutual nearest neighbors along the line."""
    pts = np.vstack([np.vstack(p) for p in pairs])
    u = line1.axis_coord(pts)
    n = len(u)
    keep = []
    for k in range(len(pairs)):
        ia, ib = 2 * k, 2 * k + 1
        da = np.abs(u - u[ia])
        da[ia] = np.inf
        db = np.abs(u - u[ib])
        db[ib] = np.inf
        if int(np.argmin(da)) == ib and int(np.argmin(db)) == ia:
            keep.append(pairs[k])
    return keep


def label_edge_pairs(
    pairs: list[EdgePointPair],
    regions: list[Region],
    line2: Line2D,
) -> DetectionResult:
    """Attach side color labels to each junction pair.

    Regions are clipped at the junction lines; the label on a side is the
    clipped piece with the closest centroid along the axis. Regions that
    do not cross the axis line are ignored, and an equal label on both
    sides marks a leak, reported as undefined.
    """
    if not pairs:
        raise InsufficientEdgesError("no pairs to label")
    pairs = sorted(pairs, key=lambda ep: ep.axis_coordinate)
    crossing = [reg for reg in regions if _region_crosses(reg, line2)]

    junction_lines = []
    for ep in pairs:
        if np.linalg.norm(ep.p_b - ep.p_a) > 1e-9:
            jl = line_through(ep.p_a, ep.p_b)
        else:
            jl = Line2D(ep.midpoint, np.array([-line2.direction[1], line2.direction[0]]))
        normal = np.array([-jl.direction[1], jl.direction[0]])
        if normal @ line2.direction < 0:
            normal = -normal
        junction_lines.append((ep.midpoint, normal))

    raw_pieces: list[tuple[int, float, int, int]] = []  # cell, coord, label, area
    for reg in crossing:
        pts = reg.pixels.astype(np.float64)
        cell = np.zeros(len(pts), dtype=np.int64)
        for mid, normal in junction_lines:
            cell += ((pts - mid) @ normal > 0).astype(np.int64)
        for value in np.unique(cell):
            sel = pts[cell == value]
            centroid = sel.mean(axis=0)
            raw_pieces.append(
                (int(value), float(line2.axis_coord(centroid)[0]), reg.label, len(sel))
            )
    # curved junction boundaries leave slivers of a band just past its own
    # clipping line; drop pieces dwarfed by their cell's dominant piece
    cell_max: dict[int, int] = {}
    for cell, _, _, area in raw_pieces:
        cell_max[cell] = max(cell_max.get(cell, 0), area)
    pieces = [
        (coord, label)
        for cell, coord, label, area in raw_pieces
        if area >= 0.25 * cell_max[cell]
    ]

    labeled = []
    for ep in pairs:
        t = ep.axis_coordinate
        below = [(pt, lbl) for pt, lbl in pieces if pt < t]
        above = [(pt, lbl) for pt, lbl in pieces if pt > t]
        left = max(below, key=lambda p: p[0])[1] if below else None
        right = min(above, key=lambda p: p[0])[1] if above else None
        if left is not None and left == right:
            left = right = None
        labeled.append(replace(ep, left_label=left, right_label=right))
    return DetectionResult(edges=labeled, line=line2)


def detect_pointer(
    img: RasterImage,
    colors: ColorClassSet,
    spec: PointerSpec,
    params: DetectionParams,
) -> DetectionResult:
    """Full two-pass detection on one frame."""
    hs = rgb_to_hue_saturation(img)
    adjacency = spec.adjacent_label_pairs()
    size = (img.width, img.height)

    regions1 = detect_band_regions(hs, colors, adjacency, params.s1, params.r1)
    if not regions1:
        raise PointerNotFoundError("pass1-regions")
    try:
        _, surviving1 = ransac_centroid_line(regions1, params)
    except (InsufficientRegionsError, DegenerateSampleError) as exc:
        raise PointerNotFoundError("pass1-line", str(exc)) from exc
    if not surviving1:
        raise PointerNotFoundError("pass1-line", "no regions near the axis")
    boxes = expand_bounding_boxes(surviving1, params.major_expand, params.minor_expand)

    regions2 = detect_band_regions(
        hs, colors, adjacency, params.s2, params.r2, roi=boxes
    )
    if not regions2:
        raise PointerNotFoundError("pass2-regions")
    try:
        line2_centroids, surviving2 = ransac_centroid_line(regions2, params)
    except (InsufficientRegionsError, DegenerateSampleError) as exc:
        raise PointerNotFoundError("pass2-line", str(exc)) from exc
    if not surviving2:
        raise PointerNotFoundError("pass2-line", "no regions near the axis")

    extracted = extract_edge_pairs(
        surviving2, adjacency, params, size, fallback_axis=line2_centroids
    )
    result = label_edge_pairs(extracted.edges, surviving2, extracted.line)
    result.pass1_regions = surviving1
    result.pass2_regions = surviving2
    return result
