"""Hue density models for the pointer's band colors.

One circular kernel density estimator per band color, built from a single
annotated image; pixels classify to the densest class or to a uniform
background. Bandwidths vary per sample with the hue uncertainty implied
by low saturation and low intensity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientCalibrationDataError
from .imaging import HUE_PERIOD, HueSatImage, RasterImage, rgb_to_hue_saturation

LUT_BINS = 1024
BACKGROUND_DENSITY = 1.0 / HUE_PERIOD
BANDWIDTH_FLOOR = 0.01
BANDWIDTH_CAP = 0.5
MEDIAN_TARGET_BANDWIDTH = 0.05
MIN_CLASS_PIXELS = 100
BACKGROUND_LABEL = 0


def _wrapped_gaussian_lut(samples: np.ndarray, bandwidths: np.ndarray) -> np.ndarray:
    """Mean wrapped-Gaussian density sampled on the hue lookup grid.

    Three period images bound the wrapping error below 1e-9 for
    bandwidths under 1 radian.
    """
    grid = np.arange(LUT_BINS, dtype=np.float64) * (HUE_PERIOD / LUT_BINS)
    lut = np.zeros(LUT_BINS, dtype=np.float64)
    norm = 1.0 / (np.sqrt(2.0 * np.pi) * bandwidths)
    block = 4096
    for start in range(0, len(samples), block):
        mu = samples[start : start + block, None]
        bw = bandwidths[start : start + block, None]
        nm = norm[start : start + block, None]
        d = np.mod(grid[None, :] - mu + np.pi, HUE_PERIOD) - np.pi
        acc = np.zeros_like(d)
        for k in (-HUE_PERIOD, 0.0, HUE_PERIOD):
            acc += np.exp(-0.5 * ((d + k) / bw) ** 2)
        lut += (nm * acc).sum(axis=0)
    return lut / len(samples)


@dataclass(frozen=True)
class HueKde:
    """Circular hue density backed by a precomputed lookup table."""

    samples: np.ndarray  # hue radians, empty when deserialized
    bandwidths: np.ndarray
    lut: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        bandwidths = np.asarray(self.bandwidths, dtype=np.float64)
        lut = self.lut
        if lut is None:
            if len(samples) == 0:
                raise ValueError("HueKde needs samples or a lookup table")
            lut = _wrapped_gaussian_lut(samples, bandwidths)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "bandwidths", bandwidths)
        object.__setattr__(self, "lut", np.asarray(lut, dtype=np.float64))

    def density(self, theta) -> np.ndarray | float:
        """Linear interpolation on the 2pi-periodic lookup table."""
        theta = np.asarray(theta, dtype=np.float64)
        pos = np.mod(theta, HUE_PERIOD) * (LUT_BINS / HUE_PERIOD)
        i0 = np.floor(pos).astype(np.int64) % LUT_BINS
        i1 = (i0 + 1) % LUT_BINS
        frac = pos - np.floor(pos)
        out = self.lut[i0] * (1.0 - frac) + self.lut[i1] * frac
        return float(out) if out.ndim == 0 else out

    def integral(self) -> float:
        """Numeric integral over one period (trapezoid on the LUT)."""
        return float(self.lut.mean() * HUE_PERIOD)

    def modal_hue(self) -> float:
        return float(np.argmax(self.lut) * (HUE_PERIOD / LUT_BINS))


@dataclass(frozen=True)
class ColorClassSet:
    """Band color KDEs (ordered by class label) plus the uniform background."""

    classes: tuple[tuple[int, HueKde], ...]
    background_density: float = BACKGROUND_DENSITY

    def __post_init__(self):
        labels = [label for label, _ in self.classes]
        if len(labels) != len(set(labels)):
            raise ValueError("class labels must be unique")
        if len(labels) < 2:
            raise ValueError("need at least 2 color classes")
        if any(label <= BACKGROUND_LABEL for label in labels):
            raise ValueError("class labels must be positive integers")
        ordered = tuple(sorted(self.classes, key=lambda c: c[0]))
        object.__setattr__(self, "classes", ordered)

    @property
    def labels(self) -> list[int]:
        return [label for label, _ in self.classes]

    def kde(self, label: int) -> HueKde:
        for lbl, kde in self.classes:
            if lbl == label:
                return kde
        raise KeyError(label)


def calibrate_colors(
    img: RasterImage, mask: np.ndarray, min_saturation: float
) -> ColorClassSet:
    """Build one hue KDE per labeled class in the calibration mask.

    Mask value 0 marks unlabeled pixels; value n marks class n. Pixels
    with saturation below the threshold or without a defined hue are
    unusable; each class needs at least 100 usable pixels.
    """
    mask = np.asarray(mask)
    if mask.shape != (img.height, img.width):
        raise ValueError("mask dimensions must match the image")
    hs = rgb_to_hue_saturation(img)
    usable = hs.hue_valid & (hs.saturation >= min_saturation)

    labels = sorted(int(v) for v in np.unique(mask) if v != BACKGROUND_LABEL)
    per_class: list[tuple[int, np.ndarray, np.ndarray]] = []
    inv_sv_all: list[np.ndarray] = []
    for label in labels:
        sel = (mask == label) & usable
        count = int(sel.sum())
        if count < MIN_CLASS_PIXELS:
            raise InsufficientCalibrationDataError(label, count, MIN_CLASS_PIXELS)
        hues = hs.hue[sel]
        inv_sv = 1.0 / np.maximum(hs.saturation[sel] * hs.value[sel], 1e-6)
        per_class.append((label, hues, inv_sv))
        inv_sv_all.append(inv_sv)

    if not per_class:
        raise InsufficientCalibrationDataError(BACKGROUND_LABEL, 0, MIN_CLASS_PIXELS)

    # scale the uncertainty proxy so the pooled median bandwidth lands on
    # the target, then clamp per sample
    pooled = np.concatenate(inv_sv_all)
    scale = MEDIAN_TARGET_BANDWIDTH / float(np.median(pooled))
    classes = []
    for label, hues, inv_sv in per_class:
        bw = np.clip(scale * inv_sv, BANDWIDTH_FLOOR, BANDWIDTH_CAP)
        classes.append((label, HueKde(samples=hues, bandwidths=bw)))
    return ColorClassSet(classes=tuple(classes))


def classify_hue(color_set: ColorClassSet, theta: float) -> int:
    """Class label with the highest density at the hue, or 0 for background.

    Ties between classes resolve to the lower label; a tie with the
    background resolves to the background.
    """
    densities = np.array([kde.density(theta) for _, kde in color_set.classes])
    best = int(np.argmax(densities))
    if densities[best] <= color_set.background_density:
        return BACKGROUND_LABEL
    return color_set.classes[best][0]


def classify_image(
    color_set: ColorClassSet, hs: HueSatImage, s_min: float
) -> np.ndarray:
    """Label raster for a whole image; 0 where saturation gates a pixel out."""
    return classify_image_masked(color_set, hs, s_min, None)


def classify_image_masked(
    color_set: ColorClassSet,
    hs: HueSatImage,
    s_min: float,
    roi_mask: np.ndarray | None,
) -> np.ndarray:
    """classify_image restricted to an optional boolean region of interest."""
    out = np.zeros(hs.hue.shape, dtype=np.uint8)
    valid = hs.hue_valid & (hs.saturation >= s_min)
    if roi_mask is not None:
        valid &= roi_mask
    if not valid.any():
        return out
    hues = hs.hue[valid]
    stack = np.empty((len(color_set.classes) + 1, hues.size), dtype=np.float64)
    stack[0] = color_set.background_density
    for i, (_, kde) in enumerate(color_set.classes):
        stack[i + 1] = kde.density(hues)
    # background first so argmax prefers it on exact ties
    pick = stack.argmax(axis=0)
    labels = np.array([BACKGROUND_LABEL] + color_set.labels, dtype=np.uint8)
    out[valid] = labels[pick]
    return out


def serialize_color_set(color_set: ColorClassSet) -> dict:
    return {
        "lut_bins": LUT_BINS,
        "classes": [
            {"label": label, "lut": kde.lut.tolist()}
            for label, kde in color_set.classes
        ],
    }


def deserialize_color_set(data: dict) -> ColorClassSet:
    if data.get("lut_bins") != LUT_BINS:
        raise ValueError("unsupported lookup table size")
    classes = tuple(
        (
            int(entry["label"]),
            HueKde(
                samples=np.empty(0),
                bandwidths=np.empty(0),
                lut=np.asarray(entry["lut"], dtype=np.float64),
            ),
        )
        for entry in data["classes"]
    )
    return ColorClassSet(classes=classes)
