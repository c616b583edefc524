"""Tests for the config, CLI commands and point-cloud handling."""

import json

import numpy as np
import pytest

from conftest import (
    BAND_RGB,
    GREEN,
    RED,
    SIZE_SMALL,
    build_spec,
    make_calibrated_colors,
    pose_at,
)

from bandpointer import synthetic
from bandpointer.cli import (
    Config,
    EXIT_ERROR,
    EXIT_NO_ASSOCIATION,
    EXIT_OK,
    EXIT_POINTER_NOT_FOUND,
    PointCloud,
    evaluate_sweep,
    filter_point_cloud,
    load_color_model,
    main,
    save_color_model,
    write_ply,
)
from bandpointer.imaging import save_pgm, save_ppm
from bandpointer.pose import CameraModel


def make_config_dict():
    return {
        "camera": {
            "image_size_px": [612, 512],
            "k_row_major": [1000.0, 0.0, 305.5, 0.0, 1000.0, 255.5, 0.0, 0.0, 1.0],
            "rotation_row_major": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            "translation_mm": [0.0, 0.0, 0.0],
            "distortion": {"k1": 0.0, "k2": 0.0, "k3": 0.0, "p1": 0.0, "p2": 0.0},
        },
        "pointer": {
            "total_length_mm": 100.0,
            "edge_distances_mm": [25.0, 55.0, 78.0],
            "edge_diameters_mm": [4.0, 4.0, 4.0],
            "band_colors": ["red", "green", "red", "green"],
        },
        "colors": {"red": 1, "green": 2},
        "detection": {
            "s1": 0.25,
            "s2": 0.12,
            "r1": 3,
            "r2": 2,
            "major_expand": 1.1,
            "minor_expand": 1.5,
            "binarize_threshold": 0.3,
            "line_inlier_sigmas": 3.0,
            "pair_separation_sigmas": 5.0,
            "ransac_iterations": 200,
            "ransac_seed": 0,
        },
    }


@pytest.fixture(scope="module")
def cli_spec():
    return build_spec([25.0, 55.0, 78.0], [RED, GREEN, RED, GREEN], 100.0, radius=2.0)


@pytest.fixture(scope="module")
def cli_camera():
    return CameraModel(
        K=np.array([[1000.0, 0, 305.5], [0, 1000.0, 255.5], [0, 0, 1.0]])
    )


@pytest.fixture(scope="module")
def cli_colors(cli_spec, cli_camera):
    return make_calibrated_colors(cli_spec, cli_camera, SIZE_SMALL)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, cli_spec, cli_camera, cli_colors):
    """Config, color model and a rendered probe frame on disk."""
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "config.json"
    config_path.write_text(json.dumps(make_config_dict()))
    colors_path = root / "colors.json"
    save_color_model(cli_colors, colors_path)

    pose = pose_at(330.0, 8.0, cli_camera, cli_spec, roll_deg=4.0)
    scene = synthetic.SceneSpec(pose=pose, spec=cli_spec, band_colors=BAND_RGB)
    img, gt = synthetic.render(scene, cli_camera, SIZE_SMALL)
    frame_path = root / "frame.ppm"
    save_ppm(img, frame_path)
    return {
        "root": root,
        "config": config_path,
        "colors": colors_path,
        "frame": frame_path,
        "pose": pose,
        "scene": scene,
    }


class TestConfig:
    def test_round_trip_identity(self):
        data = make_config_dict()
        config = Config.from_dict(data)
        assert config.to_dict() == data
        # parse -> serialize -> parse is also stable
        again = Config.from_dict(config.to_dict())
        assert again.to_dict() == data

    def test_radii_are_half_diameters(self):
        config = Config.from_dict(make_config_dict())
        assert config.pointer.edges[0].radius_mm == pytest.approx(2.0)

    def test_unknown_band_color_rejected(self):
        data = make_config_dict()
        data["pointer"]["band_colors"][0] = "purple"
        from bandpointer.errors import ConfigError
        with pytest.raises((ConfigError, KeyError)):
            Config.from_dict(data)


class TestCalibrateCommand:
    def test_calibrate_writes_model(
        self, workspace, cli_spec, cli_camera, capsys, tmp_path
    ):
        pose = pose_at(330.0, 5.0, cli_camera, cli_spec, roll_deg=3.0)
        scene = synthetic.SceneSpec(
            pose=pose, spec=cli_spec, band_colors=BAND_RGB, blur_sigma=2.0
        )
        img, _ = synthetic.render(scene, cli_camera, SIZE_SMALL)
        mask = synthetic.render_class_mask(scene, cli_camera, SIZE_SMALL)
        img_path = tmp_path / "cal.ppm"
        mask_path = tmp_path / "cal_mask.pgm"
        out_path = tmp_path / "model.json"
        save_ppm(img, img_path)
        save_pgm(mask, mask_path)
        code = main([
            "--config", str(workspace["config"]),
            "calibrate", "--image", str(img_path),
            "--mask", str(mask_path), "--out", str(out_path),
        ])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "class 1" in out and "class 2" in out
        model = load_color_model(out_path)
        assert model.labels == [1, 2]
        # modal hues land near the rendered band hues
        assert model.kde(1).modal_hue() == pytest.approx(0.80, abs=0.05)
        assert model.kde(2).modal_hue() == pytest.approx(1.29, abs=0.05)

    def test_unknown_mask_class_is_config_mismatch(self, workspace, tmp_path):
        px = np.full((SIZE_SMALL[1], SIZE_SMALL[0], 3), 0.5)
        img_path = tmp_path / "cal.ppm"
        mask_path = tmp_path / "mask.pgm"
        from bandpointer.imaging import RasterImage
        save_ppm(RasterImage(px), img_path)
        mask = np.zeros((SIZE_SMALL[1], SIZE_SMALL[0]), dtype=np.uint8)
        mask[10:30, 10:30] = 7  # class 7 not in config
        save_pgm(mask, mask_path)
        code = main([
            "--config", str(workspace["config"]),
            "calibrate", "--image", str(img_path),
            "--mask", str(mask_path), "--out", str(tmp_path / "m.json"),
        ])
        assert code == EXIT_ERROR

    def test_grayscale_image_insufficient(self, workspace, tmp_path):
        px = np.full((SIZE_SMALL[1], SIZE_SMALL[0], 3), 0.5)
        from bandpointer.imaging import RasterImage
        img_path = tmp_path / "gray.ppm"
        mask_path = tmp_path / "mask.pgm"
        save_ppm(RasterImage(px), img_path)
        mask = np.zeros((SIZE_SMALL[1], SIZE_SMALL[0]), dtype=np.uint8)
        mask[:100] = 1
        mask[100:200] = 2
        save_pgm(mask, mask_path)
        code = main([
            "--config", str(workspace["config"]),
            "calibrate", "--image", str(img_path),
            "--mask", str(mask_path), "--out", str(tmp_path / "m.json"),
        ])
        assert code == EXIT_ERROR


class TestProbeCommand:
    def test_probe_success_record(self, workspace, capsys):
        code = main([
            "--config", str(workspace["config"]),
            "probe", "--image", str(workspace["frame"]),
            "--color-model", str(workspace["colors"]),
        ])
        assert code == EXIT_OK
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1
        record = out[0]
        assert record.startswith("tip_mm=")
        tip = np.array([float(v) for v in record.split()[0].split("=")[1].split(",")])
        # raster detection accuracy is in the low millimeters
        assert np.linalg.norm(tip - workspace["pose"].tip) < 5.0

    def test_probe_without_pointer_exits_not_found(self, workspace, tmp_path, capsys):
        from bandpointer.imaging import RasterImage
        px = np.full((SIZE_SMALL[1], SIZE_SMALL[0], 3), 0.45)
        path = tmp_path / "empty.ppm"
        save_ppm(RasterImage(px), path)
        code = main([
            "--config", str(workspace["config"]),
            "probe", "--image", str(path),
            "--color-model", str(workspace["colors"]),
        ])
        assert code == EXIT_POINTER_NOT_FOUND
        assert capsys.readouterr().out == ""

    def test_probe_two_visible_edges_insufficient(
        self, workspace, cli_spec, cli_camera, tmp_path, capsys
    ):
        # occlude the first junction; two junctions stay visible, below
        # the three-correspondence minimum
        scene = workspace["scene"]
        gt = synthetic.ground_truth(scene, cli_camera, SIZE_SMALL)
        e0 = gt.edges[0]
        lo = np.minimum(e0.p_a, e0.p_b) - 12
        hi = np.maximum(e0.p_a, e0.p_b) + 12
        occluded = synthetic.SceneSpec(
            pose=scene.pose,
            spec=cli_spec,
            band_colors=BAND_RGB,
            occluders=(synthetic.Occluder(lo[0], lo[1], hi[0], hi[1]),),
        )
        img, _ = synthetic.render(occluded, cli_camera, SIZE_SMALL)
        path = tmp_path / "occluded.ppm"
        save_ppm(img, path)
        code = main([
            "--config", str(workspace["config"]),
            "probe", "--image", str(path),
            "--color-model", str(workspace["colors"]),
        ])
        err = capsys.readouterr().err
        assert code == EXIT_NO_ASSOCIATION
        assert "three" in err or "insufficient" in err.lower()


class TestTrackCommand:
    def test_identical_frames_identical_rows(self, workspace, tmp_path, capsys):
        frames_dir = tmp_path / "frames"
        frames_dir.mkdir()
        src = workspace["frame"].read_bytes()
        for i in range(5):
            (frames_dir / f"frame_{i:03d}.ppm").write_bytes(src)
        # one corrupted frame: uniform background
        from bandpointer.imaging import RasterImage
        blank = RasterImage(np.full((SIZE_SMALL[1], SIZE_SMALL[0], 3), 0.45))
        save_ppm(blank, frames_dir / "frame_002.ppm")

        prefix = tmp_path / "out" / "run"
        code = main([
            "--config", str(workspace["config"]),
            "track", "--frames", str(frames_dir),
            "--color-model", str(workspace["colors"]),
            "--out-prefix", str(prefix),
        ])
        assert code == EXIT_OK
        rows = (prefix.with_suffix(".csv")).read_text().strip().splitlines()
        assert len(rows) == 6  # header + 5 frames
        ok_rows = [r for r in rows[1:] if ",ok," in r]
        fail_rows = [r for r in rows[1:] if ",pointer-not-found," in r]
        assert len(ok_rows) == 4 and len(fail_rows) == 1
        # determinism: identical frames give byte-identical records
        payloads = {r.split(",", 1)[1] for r in ok_rows}
        assert len(payloads) == 1
        raw_ply = (prefix.parent / "run_raw.ply").read_text()
        assert "element vertex 4" in raw_ply

    def test_outputs_byte_identical_across_runs(self, workspace, tmp_path):
        frames_dir = tmp_path / "frames"
        frames_dir.mkdir()
        src = workspace["frame"].read_bytes()
        for i in range(3):
            (frames_dir / f"f{i}.ppm").write_bytes(src)
        outputs = []
        for run in range(2):
            prefix = tmp_path / f"out{run}" / "run"
            code = main([
                "--config", str(workspace["config"]),
                "track", "--frames", str(frames_dir),
                "--color-model", str(workspace["colors"]),
                "--out-prefix", str(prefix),
            ])
            assert code == EXIT_OK
            outputs.append((
                prefix.with_suffix(".csv").read_bytes(),
                (prefix.parent / "run_raw.ply").read_bytes(),
                (prefix.parent / "run_filtered.ply").read_bytes(),
            ))
        assert outputs[0] == outputs[1]

    def test_parallel_jobs_match_serial(self, workspace, tmp_path):
        frames_dir = tmp_path / "frames"
        frames_dir.mkdir()
        src = workspace["frame"].read_bytes()
        for i in range(3):
            (frames_dir / f"f{i}.ppm").write_bytes(src)
        csvs = []
        for jobs in (1, 2):
            prefix = tmp_path / f"j{jobs}" / "run"
            code = main([
                "--config", str(workspace["config"]),
                "track", "--frames", str(frames_dir),
                "--color-model", str(workspace["colors"]),
                "--out-prefix", str(prefix), "--jobs", str(jobs),
            ])
            assert code == EXIT_OK
            csvs.append(prefix.with_suffix(".csv").read_bytes())
        assert csvs[0] == csvs[1]


class TestEvalCommand:
    def test_zero_noise_sweep_tiny_rms(self, workspace, tmp_path):
        config = Config.from_dict(make_config_dict())
        records = evaluate_sweep(
            config,
            depths_mm=[330.0, 400.0],
            angles_deg=[0.0, 30.0],
            trials=1,
            noise_px=0.0,
            seed=0,
        )
        assert all(r["failures"] == 0 for r in records)
        assert all(r["rms_tip_error_mm"] < 0.01 for r in records)

    def test_noisy_sweep_rms_grows_with_depth(self):
        config = Config.from_dict(make_config_dict())
        depths = [300.0, 420.0, 560.0, 700.0]
        records = evaluate_sweep(
            config,
            depths_mm=depths,
            angles_deg=[10.0],
            trials=40,
            noise_px=0.5,
            seed=3,
        )
        rms = [r["rms_tip_error_mm"] for r in records]
        # Spearman rank correlation over the depth grid
        ranks = np.argsort(np.argsort(rms))
        rho = np.corrcoef(np.arange(len(rms)), ranks)[0, 1]
        assert rho > 0

    def test_eval_command_writes_deterministic_csv(self, workspace, tmp_path):
        sweep_path = tmp_path / "sweep.json"
        sweep_path.write_text(json.dumps({
            "depths_mm": [330.0, 420.0],
            "angles_deg": [0.0, 25.0],
            "trials": 10,
            "noise_px": 0.5,
            "seed": 7,
        }))
        outs = []
        for run in range(2):
            out_path = tmp_path / f"report{run}.csv"
            code = main([
                "--config", str(workspace["config"]),
                "eval", "--sweep", str(sweep_path), "--out", str(out_path),
            ])
            assert code == EXIT_OK
            outs.append(out_path.read_bytes())
        assert outs[0] == outs[1]
        header = outs[0].decode().splitlines()[0]
        assert header.startswith("depth_mm,angle_deg,trials,failures")


class TestFilterPointCloud:
    def make_cloud(self, points):
        points = np.asarray(points, dtype=np.float64)
        return PointCloud(
            points=points,
            frame_indices=np.arange(len(points)),
            rms_px=np.zeros(len(points)),
        )

    def test_identical_points_keep_all(self):
        cloud = self.make_cloud(np.tile([1.0, 2.0, 3.0], (8, 1)))
        out = filter_point_cloud(cloud)
        assert not out.filtered_flags.any()
        assert not out.filter_skipped

    def test_single_far_outlier_flagged(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(0, 1.0, (99, 3))
        pts = np.vstack([pts, [500.0, 0.0, 0.0]])
        out = filter_point_cloud(self.make_cloud(pts))
        # oracle: distance to componentwise median over 5x median distance
        med = np.median(pts, axis=0)
        d = np.linalg.norm(pts - med, axis=1)
        expected = d > 5 * np.median(d)
        np.testing.assert_array_equal(out.filtered_flags, expected)
        assert out.filtered_flags.sum() == 1
        assert out.filtered_flags[-1]

    def test_square_perimeter_none_filtered(self):
        # points spread over a 37 mm square boundary
        t = np.linspace(0, 1, 50, endpoint=False)
        side = 37.0
        edges = []
        for k in range(4):
            if k == 0:
                edges.append(np.column_stack([t * side, np.zeros(50)]))
            elif k == 1:
                edges.append(np.column_stack([np.full(50, side), t * side]))
            elif k == 2:
                edges.append(np.column_stack([side - t * side, np.full(50, side)]))
            else:
                edges.append(np.column_stack([np.zeros(50), side - t * side]))
        xy = np.vstack(edges)
        pts = np.column_stack([xy, np.full(len(xy), 480.0)])
        out = filter_point_cloud(self.make_cloud(pts))
        assert not out.filtered_flags.any()

    def test_too_few_points_skips(self):
        cloud = self.make_cloud(np.zeros((4, 3)))
        out = filter_point_cloud(cloud)
        assert out.filter_skipped
        assert not out.filtered_flags.any()

    def test_ply_written(self, tmp_path):
        pts = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        path = tmp_path / "cloud.ply"
        write_ply(pts, np.array([0.1, 0.2]), path)
        text = path.read_text()
        assert text.startswith("ply\nformat ascii 1.0\nelement vertex 2\n")
        assert "1.000000 2.000000 3.000000 0.100000" in text
