"""Raster types and the low-level image operations the detector consumes.

All rasters are numpy arrays indexed [row, col]; point coordinates are
(x, y) = (col, row) with pixel centers at integer positions. Every
operation is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .errors import InvalidKernelError, NumericError

HUE_PERIOD = 2.0 * np.pi


@dataclass(frozen=True)
class RasterImage:
    """RGB image with channels normalized to [0, 1]."""

    pixels: np.ndarray  # (H, W, 3) float64

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("RasterImage needs an (H, W, 3) array")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("channel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_bytes(cls, data: np.ndarray) -> "RasterImage":
        """Map 8-bit channels onto [0, 1] by dividing by 255."""
        return cls(np.asarray(data, dtype=np.float64) / 255.0)


@dataclass(frozen=True)
class HueSatImage:
    """Per-pixel hue (radians in [0, 2pi)) and saturation, with validity."""

    hue: np.ndarray
    saturation: np.ndarray
    hue_valid: np.ndarray
    value: np.ndarray  # max channel, kept for hue-uncertainty bandwidths

    @property
    def width(self) -> int:
        return self.hue.shape[1]

    @property
    def height(self) -> int:
        return self.hue.shape[0]


@dataclass(frozen=True)
class BinaryImage:
    bits: np.ndarray  # (H, W) bool

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class DistortionModel:
    """Brown-Conrady radial/tangential model in pixel units."""

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0

    def is_identity(self) -> bool:
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0


@dataclass
class Region:
    """Connected pixel set with area-weighted first and second moments."""

    pixels: np.ndarray  # (N, 2) int32 (x, y)
    label: int | None = None
    centroid: np.ndarray = field(init=False)
    area: int = field(init=False)
    # second central moments per unit area: [[mu_xx, mu_xy], [mu_xy, mu_yy]]
    moments: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.pixels)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise ValueError("Region needs an (N, 2) pixel array")
        self.pixels = pts.astype(np.int32)
        self.area = len(pts)
        fpts = pts.astype(np.float64)
        self.centroid = fpts.mean(axis=0)
        centered = fpts - self.centroid
        self.moments = centered.T @ centered / self.area

    def ellipse(self, floor: float = 0.5) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Moment ellipse: (semi_axes desc, axis directions as rows, center).

        Semi-axes use sqrt(3 * eigenvalue) so a uniform rectangle maps to
        an ellipse spanning its half extents; floored for tiny regions.
        """
        w, v = np.linalg.eigh(self.moments)
        order = np.argsort(w)[::-1]
        w = np.clip(w[order], 0.0, None)
        semi = np.maximum(np.sqrt(3.0 * w), floor)
        axes = v[:, order].T.copy()
        return semi, axes, self.centroid.copy()


def rgb_to_hue_saturation(img: RasterImage) -> HueSatImage:
    """Hexcone hue/saturation; hue is undefined where max = min channel."""
    px = img.pixels
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    cmax = px.max(axis=2)
    cmin = px.min(axis=2)
    delta = cmax - cmin
    valid = delta > 0.0

    safe = np.where(valid, delta, 1.0)
    h6 = np.zeros_like(cmax)
    rmax = valid & (cmax == r)
    gmax = valid & ~rmax & (cmax == g)
    bmax = valid & ~rmax & ~gmax
    h6 = np.where(rmax, (g - b) / safe, h6)
    h6 = np.where(gmax, (b - r) / safe + 2.0, h6)
    h6 = np.where(bmax, (r - g) / safe + 4.0, h6)
    hue = np.mod(h6, 6.0) * (np.pi / 3.0)
    hue = np.where(hue >= HUE_PERIOD, 0.0, hue)

    sat = np.where(cmax > 0.0, delta / np.where(cmax > 0.0, cmax, 1.0), 0.0)
    return HueSatImage(hue=hue, saturation=sat, hue_valid=valid, value=cmax)


def erode_disk(b: BinaryImage, radius: int) -> BinaryImage:
    """Erosion with a Euclidean disk; pixels outside the image count as 0.

    A pixel survives iff every pixel within distance <= radius is 1, which
    equals thresholding the distance transform to the nearest 0.
    """
    if radius < 0 or int(radius) != radius:
        raise ValueError("radius must be a non-negative integer")
    radius = int(radius)
    bits = b.bits
    if radius == 0 or not bits.any():
        return BinaryImage(bits.copy())

    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    pad = radius + 1
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    # work on the content bounding box; the zero pad stands in for both
    # real zero pixels and out-of-bounds pixels, which erode identically
    crop = np.zeros((r1 - r0 + 2 * pad, c1 - c0 + 2 * pad), dtype=bool)
    crop[pad:-pad, pad:-pad] = bits[r0:r1, c0:c1]
    dist = ndimage.distance_transform_edt(crop)
    eroded_crop = dist > radius

    out = np.zeros_like(bits)
    out[r0:r1, c0:c1] = eroded_crop[pad:-pad, pad:-pad]
    return BinaryImage(out)


_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def connected_components(b: BinaryImage) -> list[Region]:
    """8-connected components with centroid and second central moments."""
    labeled, count = ndimage.label(b.bits, structure=_EIGHT_CONNECTED)
    if count == 0:
        return []
    regions = []
    objects = ndimage.find_objects(labeled)
    for idx, sl in enumerate(objects, start=1):
        ys, xs = np.nonzero(labeled[sl] == idx)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        regions.append(Region(pixels=np.column_stack([xs, ys])))
    return regions


def convolve_unit_sum(b: BinaryImage, kernel: np.ndarray) -> np.ndarray:
    """True 2D convolution with zero padding; kernel must be odd, unit sum."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise InvalidKernelError("kernel must be 2D with odd dimensions")
    total = kernel.sum()
    if total <= 0.0:
        raise InvalidKernelError(f"kernel sum must be positive, got {total}")
    src = b.bits.astype(np.float64)
    out = fftconvolve(src, kernel, mode="same")
    # fft round-off can leave values a hair outside [0, 1]
    np.clip(out, 0.0, 1.0, out=out)
    return out


def _distort_normalized(xu: np.ndarray, yu: np.ndarray, m: DistortionModel):
    r2 = xu * xu + yu * yu
    radial = 1.0 + r2 * (m.k1 + r2 * (m.k2 + r2 * m.k3))
    xd = xu * radial + 2.0 * m.p1 * xu * yu + m.p2 * (r2 + 2.0 * xu * xu)
    yd = yu * radial + m.p1 * (r2 + 2.0 * yu * yu) + 2.0 * m.p2 * xu * yu
    return xd, yd


def distort_points(pts: np.ndarray, model: DistortionModel) -> np.ndarray:
    """Forward Brown-Conrady mapping from ideal to distorted pixels."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if model.is_identity():
        return pts.copy()
    xu = (pts[:, 0] - model.cx) / model.fx
    yu = (pts[:, 1] - model.cy) / model.fy
    xd, yd = _distort_normalized(xu, yu, model)
    return np.column_stack([xd * model.fx + model.cx, yd * model.fy + model.cy])


UNDISTORT_TOL_PX = 1e-3
UNDISTORT_MAX_ITER = 20


def undistort_points(pts: np.ndarray, model: DistortionModel) -> np.ndarray:
    """Invert the distortion by fixed-point iteration to within 1e-3 px."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    if model.is_identity():
        return pts.copy()
    xd = (pts[:, 0] - model.cx) / model.fx
    yd = (pts[:, 1] - model.cy) / model.fy
    xu, yu = xd.copy(), yd.copy()
    for _ in range(UNDISTORT_MAX_ITER):
        r2 = xu * xu + yu * yu
        radial = 1.0 + r2 * (model.k1 + r2 * (model.k2 + r2 * model.k3))
        dx = 2.0 * model.p1 * xu * yu + model.p2 * (r2 + 2.0 * xu * xu)
        dy = model.p1 * (r2 + 2.0 * yu * yu) + 2.0 * model.p2 * xu * yu
        xu = (xd - dx) / radial
        yu = (yd - dy) / radial
    bx, by = _distort_normalized(xu, yu, model)
    err = np.hypot((bx - xd) * model.fx, (by - yd) * model.fy)
    if not np.all(np.isfinite(err)) or err.max() > UNDISTORT_TOL_PX:
        bad = int(np.argmax(np.where(np.isfinite(err), err, np.inf)))
        raise NumericError(
            f"undistortion did not converge for point {pts[bad].tolist()}"
        )
    return np.column_stack([xu * model.fx + model.cx, yu * model.fy + model.cy])


def load_ppm(path) -> RasterImage:
    """Read a binary PPM (P6, maxval 255)."""
    data, maxval, channels = _read_pnm(path, b"P6")
    if channels != 3:
        raise ValueError("P6 carries 3 channels")
    return RasterImage.from_bytes(data)


def save_ppm(img: RasterImage, path) -> None:
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        f.write(data.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval 255) as a uint8 label raster."""
    data, maxval, channels = _read_pnm(path, b"P5")
    return data


def save_pgm(raster: np.ndarray, path) -> None:
    raster = np.asarray(raster, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (raster.shape[1], raster.shape[0]))
        f.write(raster.tobytes())


def load_image(path) -> RasterImage:
    """Load a PPM image; PNG works too when pillow is installed."""
    spath = str(path)
    if spath.lower().endswith(".png"):
        try:
            from PIL import Image
        except ImportError as exc:
            raise ValueError(
                "PNG support requires the optional pillow dependency"
            ) from exc
        arr = np.asarray(Image.open(spath).convert("RGB"))
        return RasterImage.from_bytes(arr)
    return load_ppm(spath)


def _read_pnm(path, magic: bytes):
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(magic):
        raise ValueError(f"expected {magic.decode()} file: {path}")
    # header tokens may be separated by whitespace and '#' comments
    tokens = []
    pos = len(magic)
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    body = raw[pos : pos + need]
    if len(body) != need:
        raise ValueError(f"truncated {magic.decode()} payload in {path}")
    data = np.frombuffer(body, dtype=np.uint8)
    if channels == 3:
        data = data.reshape(height, width, 3)
    else:
        data = data.reshape(height, width)
    return data, maxval, channels
