"""Command-line interface: calibrate colors, probe frames, track, evaluate.

Commands share a JSON config carrying the camera, the pointer
measurements and the detection parameters. Failure causes map to
distinct exit codes so batch callers can tell them apart.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import synthetic
from .association import (
    PointerEdge,
    PointerSpec,
    align_labels_dp,
    associate_ransac,
)
from .color_model import (
    ColorClassSet,
    calibrate_colors,
    deserialize_color_set,
    serialize_color_set,
)
from .detection import DetectionParams, detect_pointer
from .errors import (
    AssociationError,
    BandPointerError,
    ConfigError,
    DetectionError,
    PoseError,
)
from .imaging import DistortionModel, load_image, load_pgm
from .pose import CameraModel, PoseEstimate, estimate_pose

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_POINTER_NOT_FOUND = 2
EXIT_NO_ASSOCIATION = 3
EXIT_POSE_FAILURE = 4

ENV_CONFIG = "BANDPOINTER_CONFIG"
ENV_COLOR_MODEL = "BANDPOINTER_COLOR_MODEL"


@dataclass
class Config:
    """Typed view of the JSON config; to_dict/from_dict round-trip exactly."""

    camera: CameraModel
    image_size: tuple[int, int]
    pointer: PointerSpec
    detection: DetectionParams
    color_names: dict[str, int]  # name -> class id
    band_names: list[Optional[str]]
    edge_diameters_mm: list[float]

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        try:
            cam = data["camera"]
            k = np.array(cam["k_row_major"], dtype=np.float64).reshape(3, 3)
            rot = np.array(cam["rotation_row_major"], dtype=np.float64).reshape(3, 3)
            trans = np.array(cam["translation_mm"], dtype=np.float64)
            dist = cam.get("distortion", {})
            distortion = DistortionModel(
                k1=dist.get("k1", 0.0),
                k2=dist.get("k2", 0.0),
                k3=dist.get("k3", 0.0),
                p1=dist.get("p1", 0.0),
                p2=dist.get("p2", 0.0),
                fx=k[0, 0],
                fy=k[1, 1],
                cx=k[0, 2],
                cy=k[1, 2],
            )
            camera = CameraModel(K=k, R=rot, t=trans, distortion=distortion)
            size = tuple(int(v) for v in cam["image_size_px"])

            ptr = data["pointer"]
            colors = {str(k2): int(v) for k2, v in data["colors"].items()}
            band_names = list(ptr["band_colors"])
            band_ids = [
                colors[name] if name is not None else None for name in band_names
            ]
            distances = [float(v) for v in ptr["edge_distances_mm"]]
            diameters = [float(v) for v in ptr["edge_diameters_mm"]]
            if len(band_ids) != len(distances) + 1:
                raise ConfigError("need one band color per band (edges + 1)")
            if len(diameters) != len(distances):
                raise ConfigError("need one diameter per edge")
            spec = PointerSpec(
                edges=tuple(
                    PointerEdge(d, w / 2.0) for d, w in zip(distances, diameters)
                ),
                side_labels=tuple(
                    (band_ids[i], band_ids[i + 1]) for i in range(len(distances))
                ),
                total_length_mm=float(ptr["total_length_mm"]),
            )
            det = data.get("detection", {})
            params = DetectionParams(**det)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        return cls(
            camera=camera,
            image_size=size,
            pointer=spec,
            detection=params,
            color_names=colors,
            band_names=band_names,
            edge_diameters_mm=diameters,
        )

    def to_dict(self) -> dict:
        dist = self.camera.distortion or DistortionModel()
        return {
            "camera": {
                "image_size_px": [self.image_size[0], self.image_size[1]],
                "k_row_major": [float(v) for v in self.camera.K.ravel()],
                "rotation_row_major": [float(v) for v in self.camera.R.ravel()],
                "translation_mm": [float(v) for v in self.camera.t],
                "distortion": {
                    "k1": dist.k1, "k2": dist.k2, "k3": dist.k3,
                    "p1": dist.p1, "p2": dist.p2,
                },
            },
            "pointer": {
                "total_length_mm": self.pointer.total_length_mm,
                "edge_distances_mm": [e.distance_mm for e in self.pointer.edges],
                "edge_diameters_mm": list(self.edge_diameters_mm),
                "band_colors": list(self.band_names),
            },
            "colors": dict(self.color_names),
            "detection": {
                "s1": self.detection.s1,
                "s2": self.detection.s2,
                "r1": self.detection.r1,
                "r2": self.detection.r2,
                "major_expand": self.detection.major_expand,
                "minor_expand": self.detection.minor_expand,
                "binarize_threshold": self.detection.binarize_threshold,
                "line_inlier_sigmas": self.detection.line_inlier_sigmas,
                "pair_separation_sigmas": self.detection.pair_separation_sigmas,
                "ransac_iterations": self.detection.ransac_iterations,
                "ransac_seed": self.detection.ransac_seed,
            },
        }


def load_config(path) -> Config:
    with open(path) as f:
        return Config.from_dict(json.load(f))


def save_color_model(color_set: ColorClassSet, path) -> None:
    with open(path, "w") as f:
        json.dump(serialize_color_set(color_set), f)


def load_color_model(path) -> ColorClassSet:
    with open(path) as f:
        return deserialize_color_set(json.load(f))


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) mm
    frame_indices: np.ndarray
    rms_px: np.ndarray
    filtered_flags: np.ndarray = field(default=None)  # type: ignore[assignment]
    filter_skipped: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.frame_indices = np.asarray(self.frame_indices, dtype=np.int64)
        self.rms_px = np.asarray(self.rms_px, dtype=np.float64)
        if self.filtered_flags is None:
            self.filtered_flags = np.zeros(len(self.points), dtype=bool)

    def kept_points(self) -> np.ndarray:
        return self.points[~self.filtered_flags]


MAD_FILTER_FACTOR = 5.0
MAD_FILTER_MIN_POINTS = 5


def filter_point_cloud(cloud: PointCloud) -> PointCloud:
    """Flag points far from the componentwise median.

    A point is an outlier when its distance to the median point exceeds
    five times the median of those distances. Fewer than five points
    skips filtering with a warning flag.
    """
    n = len(cloud.points)
    if n < MAD_FILTER_MIN_POINTS:
        return replace(
            cloud,
            filtered_flags=np.zeros(n, dtype=bool),
            filter_skipped=True,
        )
    median = np.median(cloud.points, axis=0)
    dist = np.linalg.norm(cloud.points - median, axis=1)
    mad = float(np.median(dist))
    flags = dist > MAD_FILTER_FACTOR * mad
    return replace(cloud, filtered_flags=flags, filter_skipped=False)


def write_ply(points: np.ndarray, quality: np.ndarray, path) -> None:
    """ASCII PLY with x, y, z floats and a quality property per vertex."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    quality = np.asarray(quality, dtype=np.float64)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property float quality",
        "end_header",
    ]
    for (x, y, z), q in zip(points, quality):
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {q:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def run_pipeline(
    img, colors: ColorClassSet, config: Config
) -> PoseEstimate:
    """Detect, associate and estimate pose for one frame."""
    result = detect_pointer(img, colors, config.pointer, config.detection)
    labels = [(e.left_label, e.right_label) for e in result.edges]
    alignments = align_labels_dp(labels, config.pointer)
    hypotheses = associate_ransac(
        result,
        config.pointer,
        alignments,
        seed=config.detection.ransac_seed,
    )
    return estimate_pose(result, hypotheses, config.camera, config.pointer)


def _classify_error(exc: BandPointerError) -> tuple[int, str]:
    if isinstance(exc, DetectionError):
        return EXIT_POINTER_NOT_FOUND, "pointer-not-found"
    if isinstance(exc, AssociationError):
        return EXIT_NO_ASSOCIATION, "no-association"
    if isinstance(exc, PoseError):
        return EXIT_POSE_FAILURE, "pose-failure"
    return EXIT_ERROR, "error"


def cmd_calibrate(args) -> int:
    config = load_config(args.config)
    img = load_image(args.image)
    mask = load_pgm(args.mask)
    if mask.shape != (img.height, img.width):
        print("error: mask dimensions do not match the image", file=sys.stderr)
        return EXIT_ERROR
    known_ids = set(config.color_names.values())
    present = {int(v) for v in np.unique(mask) if v != 0}
    unknown = present - known_ids
    if unknown:
        print(
            f"error: mask references class ids {sorted(unknown)} absent from config",
            file=sys.stderr,
        )
        return EXIT_ERROR
    color_set = calibrate_colors(img, mask, min_saturation=config.detection.s2)
    save_color_model(color_set, args.out)
    id_to_name = {v: k for k, v in config.color_names.items()}
    for label, kde in color_set.classes:
        name = id_to_name.get(label, str(label))
        print(
            f"class {label} ({name}): {len(kde.samples)} samples, "
            f"modal hue {kde.modal_hue():.3f} rad"
        )
    print(f"color model written to {args.out}")
    return EXIT_OK


def format_pose_record(estimate: PoseEstimate) -> str:
    t = estimate.pose.tip
    d = estimate.pose.direction
    return (
        f"tip_mm={t[0]:.6f},{t[1]:.6f},{t[2]:.6f} "
        f"dir={d[0]:.8f},{d[1]:.8f},{d[2]:.8f} "
        f"rms_px={estimate.rms_px:.6f} "
        f"inliers={len(estimate.correspondence.pairs)}"
    )


def cmd_probe(args) -> int:
    config = load_config(args.config)
    colors = load_color_model(args.color_model)
    img = load_image(args.image)
    try:
        estimate = run_pipeline(img, colors, config)
    except BandPointerError as exc:
        code, kind = _classify_error(exc)
        print(f"{kind}: {exc}", file=sys.stderr)
        return code
    print(format_pose_record(estimate))
    return EXIT_OK


def _track_one(frame_path: str, config: Config, colors: ColorClassSet):
    try:
        img = load_image(frame_path)
        estimate = run_pipeline(img, colors, config)
    except BandPointerError as exc:
        return (frame_path, _classify_error(exc)[1], None)
    except OSError as exc:
        return (frame_path, f"io-error ({exc})", None)
    return (frame_path, "ok", estimate)


def _track_one_star(packed):
    return _track_one(*packed)


def cmd_track(args) -> int:
    config = load_config(args.config)
    colors = load_color_model(args.color_model)
    frame_dir = Path(args.frames)
    frames = sorted(
        str(p) for p in frame_dir.iterdir()
        if p.suffix.lower() in (".ppm", ".png")
    )
    if not frames:
        print(f"error: no frames in {frame_dir}", file=sys.stderr)
        return EXIT_ERROR

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(
                pool.map(_track_one_star, [(f, config, colors) for f in frames])
            )
    else:
        results = [_track_one(f, config, colors) for f in frames]

    out_prefix = Path(args.out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_prefix.with_suffix(".csv")
    points, indices, rms = [], [], []
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([
            "frame", "status", "tip_x_mm", "tip_y_mm", "tip_z_mm",
            "dir_x", "dir_y", "dir_z", "rms_px", "inliers",
        ])
        for idx, (frame, status, estimate) in enumerate(results):
            name = Path(frame).name
            if estimate is None:
                writer.writerow([name, status] + [""] * 8)
                continue
            t = estimate.pose.tip
            d = estimate.pose.direction
            writer.writerow([
                name, "ok",
                f"{t[0]:.6f}", f"{t[1]:.6f}", f"{t[2]:.6f}",
                f"{d[0]:.8f}", f"{d[1]:.8f}", f"{d[2]:.8f}",
                f"{estimate.rms_px:.6f}", len(estimate.correspondence.pairs),
            ])
            points.append(t)
            indices.append(idx)
            rms.append(estimate.rms_px)

    cloud = PointCloud(
        points=np.array(points).reshape(-1, 3),
        frame_indices=np.array(indices, dtype=np.int64),
        rms_px=np.array(rms),
    )
    cloud = filter_point_cloud(cloud)
    if cloud.filter_skipped:
        print("warning: too few points for outlier filtering", file=sys.stderr)
    write_ply(cloud.points, cloud.rms_px, out_prefix.parent / (out_prefix.name + "_raw.ply"))
    keep = ~cloud.filtered_flags
    write_ply(
        cloud.points[keep], cloud.rms_px[keep],
        out_prefix.parent / (out_prefix.name + "_filtered.ply"),
    )
    ok = sum(1 for _, status, _ in results if status == "ok")
    print(f"{ok}/{len(frames)} frames tracked; outputs at {out_prefix}*")
    return EXIT_OK


def evaluate_sweep(
    config: Config,
    depths_mm: Sequence[float],
    angles_deg: Sequence[float],
    trials: int,
    noise_px: float,
    seed: int,
    roll_deg: float = 4.0,
) -> list[dict]:
    """Monte-Carlo pose evaluation on exact rendered-geometry junctions.

    Detections come from the synthetic ground truth (the raster detector
    is exercised by its own tests); noise perturbs the detected points.
    Returns one record per grid cell.
    """
    palette = {
        label: (0.5, 0.5, 0.5) for label in config.color_names.values()
    }
    template = synthetic.SceneSpec(
        pose=None,  # type: ignore[arg-type]
        spec=config.pointer,
        band_colors=palette,
    )
    # template pose gets replaced per cell
    cells = []
    for depth in depths_mm:
        for angle in angles_deg:
            cells.append((float(depth), float(angle)))

    records = []
    for cell_idx, (depth, angle) in enumerate(cells):
        rng = np.random.default_rng(seed + cell_idx)
        pose = _sweep_pose(depth, angle, roll_deg, config)
        scene = replace(template, pose=pose)
        gt = synthetic.ground_truth(scene, config.camera, config.image_size)
        tips = []
        failures = 0
        for _ in range(max(trials, 1)):
            try:
                det = synthetic.ground_truth_detection(
                    gt, config.pointer, noise_px=noise_px, rng=rng
                )
                labels = [(e.left_label, e.right_label) for e in det.edges]
                alignments = align_labels_dp(labels, config.pointer)
                hypotheses = associate_ransac(
                    det, config.pointer, alignments, seed=seed + cell_idx
                )
                estimate = estimate_pose(
                    det, hypotheses, config.camera, config.pointer
                )
                tips.append(estimate.pose.tip)
            except BandPointerError:
                failures += 1
        record = {
            "depth_mm": depth,
            "angle_deg": angle,
            "trials": max(trials, 1),
            "failures": failures,
            "rms_tip_error_mm": float("nan"),
            "pc1": (float("nan"),) * 3,
        }
        if tips:
            tips_arr = np.array(tips)
            err = tips_arr - pose.tip
            record["rms_tip_error_mm"] = float(
                np.sqrt(np.mean(np.sum(err**2, axis=1)))
            )
            centered = tips_arr - tips_arr.mean(axis=0)
            if len(tips_arr) > 1:
                _, _, vt = np.linalg.svd(centered, full_matrices=False)
                record["pc1"] = tuple(float(v) for v in vt[0])
        records.append(record)
    return records


def _sweep_pose(depth, angle, roll_deg, config: Config):
    from .pose import PointerPose

    camera = config.camera
    axis = camera.R.T @ np.array([0.0, 0.0, 1.0])
    side = camera.R.T @ np.array([1.0, 0.0, 0.0])
    up = camera.R.T @ np.array([0.0, 1.0, 0.0])
    alpha = np.deg2rad(angle)
    roll = np.deg2rad(roll_deg)
    d = (
        np.cos(alpha) * np.cos(roll) * side
        + np.cos(alpha) * np.sin(roll) * up
        + np.sin(alpha) * axis
    )
    mid = camera.center + depth * axis
    tip = mid - 0.5 * config.pointer.total_length_mm * d
    return PointerPose(tip=tip, direction=d)


def cmd_eval(args) -> int:
    config = load_config(args.config)
    with open(args.sweep) as f:
        sweep_spec = json.load(f)
    records = evaluate_sweep(
        config,
        depths_mm=sweep_spec["depths_mm"],
        angles_deg=sweep_spec["angles_deg"],
        trials=int(sweep_spec.get("trials", 1)),
        noise_px=float(sweep_spec.get("noise_px", 0.0)),
        seed=int(sweep_spec.get("seed", args.seed)),
        roll_deg=float(sweep_spec.get("roll_deg", 4.0)),
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([
            "depth_mm", "angle_deg", "trials", "failures",
            "rms_tip_error_mm", "pc1_x", "pc1_y", "pc1_z",
        ])
        for rec in records:
            writer.writerow([
                f"{rec['depth_mm']:.3f}", f"{rec['angle_deg']:.3f}",
                rec["trials"], rec["failures"],
                f"{rec['rms_tip_error_mm']:.6f}",
                f"{rec['pc1'][0]:.6f}", f"{rec['pc1'][1]:.6f}", f"{rec['pc1'][2]:.6f}",
            ])
    print(f"evaluation report written to {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandpointer",
        description="Single-camera 3D tracking of a color-banded pointer",
    )
    parser.add_argument(
        "--config",
        default=os.environ.get(ENV_CONFIG),
        help=f"JSON config path (or ${ENV_CONFIG})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="build the hue color model")
    p_cal.add_argument("--image", required=True, help="calibration image (PPM)")
    p_cal.add_argument("--mask", required=True, help="class-id mask (PGM)")
    p_cal.add_argument("--out", required=True, help="output color model JSON")

    p_probe = sub.add_parser("probe", help="estimate the pose in one image")
    p_probe.add_argument("--image", required=True)
    p_probe.add_argument(
        "--color-model",
        default=os.environ.get(ENV_COLOR_MODEL),
        help=f"color model JSON (or ${ENV_COLOR_MODEL})",
    )

    p_track = sub.add_parser("track", help="track a directory of frames")
    p_track.add_argument("--frames", required=True)
    p_track.add_argument(
        "--color-model", default=os.environ.get(ENV_COLOR_MODEL)
    )
    p_track.add_argument("--out-prefix", required=True)
    p_track.add_argument("--jobs", type=int, default=1)

    p_eval = sub.add_parser("eval", help="synthetic sweep evaluation")
    p_eval.add_argument("--sweep", required=True, help="sweep spec JSON")
    p_eval.add_argument("--out", required=True, help="report CSV path")
    p_eval.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        print("error: --config required", file=sys.stderr)
        return EXIT_ERROR
    handlers = {
        "calibrate": cmd_calibrate,
        "probe": cmd_probe,
        "track": cmd_track,
        "eval": cmd_eval,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except BandPointerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
