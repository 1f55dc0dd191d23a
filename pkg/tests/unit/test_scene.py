import math

import numpy as np
import pytest
from conftest import DEFAULT_CONFIG, TINY_FRAMES, TINY_SIGN, TINY_SIZE, tiny_scene_config

from physgan_lab.config import load_config
from physgan_lab.errors import ConfigurationError, ContractError, GeometryError, IngestionError
from physgan_lab.scene import (
    Pose,
    SceneConfig,
    billboard_corners,
    builtin_sign,
    color_augment,
    ground_truth_angle,
    load_sign,
    load_slice,
    pose_at_frame,
    project_billboard,
    quantize,
    render_scene,
    render_view,
    road_to_world,
    save_sign,
    save_slice,
    scene_sequence,
    slices_equal,
    world_to_road,
)


def pinhole_quad(cfg: SceneConfig, s_cam: float) -> np.ndarray:
    """Billboard corners projected from the lane centre at arc length s_cam, via the arc's circle."""
    width, height = cfg.billboard_size_m
    inner, outer = cfg.lateral_offset_m, cfg.lateral_offset_m + width
    lateral = [inner, outer, outer, inner] if cfg.billboard_side == "right" else [-outer, -inner, -inner, -outer]
    top = cfg.billboard_bottom_m + height
    heights = [top, top, cfg.billboard_bottom_m, cfg.billboard_bottom_m]

    def on_road(s, e):
        if cfg.lane == "straight":
            return np.array([e, s])
        radius = cfg.curve_radius_m
        return np.array([radius - (radius - e) * math.cos(s / radius), (radius - e) * math.sin(s / radius)])

    heading = 0.0 if cfg.lane == "straight" else s_cam / cfg.curve_radius_m
    right = np.array([math.cos(heading), -math.sin(heading)])
    forward = np.array([math.sin(heading), math.cos(heading)])
    camera = on_road(s_cam, 0.0)
    cx, cy = cfg.centre
    corners = []
    for e, y in zip(lateral, heights):
        d = on_road(cfg.initial_distance_m, e) - camera
        depth = float(d @ forward)
        u = cx + cfg.focal_length_px * float(d @ right) / depth
        v = cy + cfg.focal_length_px * (cfg.camera_height_m - y) / depth
        corners.append([u, v])
    return np.array(corners)


class TestSceneConfig:
    def test_defaults_are_valid(self):
        """Test the default scene validates cleanly."""
        assert SceneConfig().validate() == []

    def test_curvature_sign(self):
        """Test positive radius turns right and straights have zero curvature."""
        assert SceneConfig(lane="curve", curve_radius_m=50.0).curvature == pytest.approx(0.02)
        assert SceneConfig(lane="curve", curve_radius_m=-50.0).curvature == pytest.approx(-0.02)
        assert SceneConfig(lane="straight", curve_radius_m=50.0).curvature == 0.0

    def test_validate_collects_every_problem(self):
        """Test validate lists each invalid field."""
        cfg = SceneConfig(lane="zigzag", speed_mps=0.0, frames=0, billboard_side="top")

        errors = cfg.validate()

        assert len(errors) == 4
        assert any("lane must be one of" in e for e in errors)

    def test_tight_curve_rejected(self):
        """Test a radius inside the lane width is rejected."""
        errors = SceneConfig(lane="curve", curve_radius_m=3.0).validate()

        assert any("curve_radius_m" in e for e in errors)

    def test_principal_point_defaults_to_centre(self):
        """Test the principal point defaults to the pixel-centre image middle."""
        assert SceneConfig(image_size=(64, 48)).centre == (31.5, 23.5)

    def test_dict_round_trip(self):
        """Test from_dict(to_dict()) keeps every value."""
        cfg = SceneConfig(name="c", lane="curve", curve_radius_m=-70.0, billboard_side="left")

        again = SceneConfig.from_dict(cfg.to_dict())

        assert again.to_dict() == cfg.to_dict()
        assert isinstance(again.image_size, tuple)


class TestGroundTruth:
    def test_straight_is_zero(self):
        """Test a straight lane needs zero steering."""
        assert ground_truth_angle(SceneConfig()) == 0.0

    def test_curve_uses_bicycle_geometry(self):
        """Test a curve needs atan(wheelbase / radius) degrees."""
        cfg = SceneConfig(lane="curve", curve_radius_m=60.0, wheelbase_m=2.5)

        assert ground_truth_angle(cfg) == pytest.approx(math.degrees(math.atan(2.5 / 60.0)))

    def test_left_curve_is_negative(self):
        """Test left curves give negative angles."""
        assert ground_truth_angle(SceneConfig(lane="curve", curve_radius_m=-60.0)) < 0.0


class TestRoadGeometry:
    @pytest.mark.parametrize("kappa", [0.0, 1 / 60.0, -1 / 45.0])
    def test_road_world_round_trip(self, kappa):
        """Test world_to_road inverts road_to_world ahead of the start."""
        s = np.array([0.0, 5.0, 20.0, 35.0])
        e = np.array([0.0, 1.5, -2.0, 4.0])

        x, z = road_to_world(kappa, s, e)
        s2, e2 = world_to_road(kappa, x, z)

        np.testing.assert_allclose(s2, s, atol=1e-9)
        np.testing.assert_allclose(e2, e, atol=1e-9)

    def test_billboard_sides(self):
        """Test left-side billboards sit at negative lateral offsets."""
        right_x, _, _ = billboard_corners(SceneConfig(billboard_side="right"))
        left_x, _, _ = billboard_corners(SceneConfig(billboard_side="left"))

        assert right_x.min() > 0
        assert left_x.max() < 0

    def test_billboard_grows_as_camera_approaches(self):
        """Test the projected quad gets larger frame by frame."""
        cfg = SceneConfig()
        far = project_billboard(cfg, Pose(s=0.0))
        near = project_billboard(cfg, Pose(s=10.0))

        assert near.signed_area() > far.signed_area()

    def test_billboard_behind_camera_is_none(self):
        """Test a pose past the billboard yields no quad."""
        assert project_billboard(SceneConfig(), Pose(s=30.0)) is None

    def test_rendered_quads_match_pinhole_projection(self, scene_cfg, tiny_slice):
        """Test every rendered quad agrees with a separately derived projection within 1e-6 px."""
        for i, quad in enumerate(tiny_slice.quads):
            s_cam = scene_cfg.speed_mps * i / scene_cfg.frame_rate_hz

            np.testing.assert_allclose(quad.points, pinhole_quad(scene_cfg, s_cam), rtol=0.0, atol=1e-6)

    def test_default_scenes_grow_every_frame(self):
        """Test all seven default scenes project the billboard with strictly growing area over 20 frames."""
        scenes = load_config(DEFAULT_CONFIG).scenes

        assert len(scenes) == 7
        for cfg in scenes:
            quads = [project_billboard(cfg, pose_at_frame(cfg, i)) for i in range(cfg.frames)]
            areas = [q.signed_area() for q in quads]
            assert len(areas) == 20
            assert all(later > earlier for earlier, later in zip(areas, areas[1:])), cfg.name
            for i, quad in enumerate(quads):
                expected = pinhole_quad(cfg, cfg.speed_mps * i / cfg.frame_rate_hz)
                np.testing.assert_allclose(quad.points, expected, rtol=0.0, atol=1e-6)



class TestRendering:
    def test_slice_shapes(self, tiny_slice):
        """Test render_scene yields n frames, n angles and n quads."""
        assert tiny_slice.frames.shape == (TINY_FRAMES, 3, TINY_SIZE, TINY_SIZE)
        assert tiny_slice.angles.shape == (TINY_FRAMES,)
        assert len(tiny_slice.quads) == TINY_FRAMES
        tiny_slice.validate()

    def test_frames_are_quantized(self, tiny_slice):
        """Test rendered frames lie on the 8-bit grid."""
        np.testing.assert_array_equal(quantize(tiny_slice.frames), tiny_slice.frames)

    def test_rendering_is_deterministic(self, scene_cfg):
        """Test two renders of one config are identical."""
        sign = builtin_sign("ring", TINY_SIGN)

        assert slices_equal(render_scene(scene_cfg, sign), render_scene(scene_cfg, sign))

    def test_texture_seed_changes_background(self):
        """Test another texture seed gives another background."""
        sign = builtin_sign("ring", TINY_SIGN)
        a = render_scene(tiny_scene_config(texture_seed=1), sign)
        b = render_scene(tiny_scene_config(texture_seed=2), sign)

        assert not np.array_equal(a.frames, b.frames)

    def test_default_scene_renders_twenty_frames(self):
        """Test the default 64x64 scene keeps the billboard in view for 20 frames."""
        slice_ = render_scene(SceneConfig(), builtin_sign("ring"))

        assert len(slice_) == 20
        assert all(q.within(64, 64) for q in slice_.quads)

    def test_right_curve_with_left_billboard_renders(self):
        """Test the right-curve layout used by the default experiment stays in frame."""
        cfg = SceneConfig(lane="curve", curve_radius_m=60.0, billboard_side="left")

        slice_ = render_scene(cfg, builtin_sign("arches"))

        assert slice_.angles[0] > 0

    def test_billboard_leaving_frame_is_configuration_error(self):
        """Test a billboard that leaves the frame raises ConfigurationError with guidance."""
        cfg = tiny_scene_config(lateral_offset_m=6.0)

        with pytest.raises(ConfigurationError) as exc_info:
            render_scene(cfg, builtin_sign("ring", TINY_SIGN))

        assert "leaves the 16x16 frame" in str(exc_info.value)

    def test_billboard_behind_camera_is_configuration_error(self, scene_cfg, mocker):
        """Test a frame without a visible billboard raises ConfigurationError naming the frame."""
        mocker.patch("physgan_lab.scene.project_billboard", return_value=None)

        with pytest.raises(ConfigurationError) as exc_info:
            render_scene(scene_cfg, builtin_sign("ring", TINY_SIGN))

        assert "behind the camera at frame 0" in str(exc_info.value)

    def test_render_view_drops_billboard_past_it(self, scene_cfg):
        """Test render_view returns no quad once the billboard is behind the camera."""
        frame, quad = render_view(scene_cfg, builtin_sign("ring", TINY_SIGN), Pose(s=20.0))

        assert quad is None
        assert frame.shape == (3, TINY_SIZE, TINY_SIZE)


class TestSigns:
    @pytest.mark.parametrize("name", ["ring", "arches"])
    def test_builtin_signs(self, name):
        """Test built-in signs are quantized RGB images of the requested size."""
        sign = builtin_sign(name, 16)

        assert sign.shape == (3, 16, 16)
        np.testing.assert_array_equal(quantize(sign), sign)

    def test_unknown_builtin(self):
        """Test an unknown asset name raises ConfigurationError listing the choices."""
        with pytest.raises(ConfigurationError) as exc_info:
            builtin_sign("stop")

        assert "ring" in str(exc_info.value)

    def test_sign_png_round_trip(self, tmp_path):
        """Test a quantized sign survives PNG storage exactly."""
        sign = builtin_sign("arches", 8)

        np.testing.assert_array_equal(load_sign(save_sign(sign, tmp_path / "s.png")), sign)


class TestAugmentation:
    def test_color_augment_keeps_geometry(self, tiny_slice):
        """Test augmentation keeps angles and quads and stays in [0, 1]."""
        out = color_augment(tiny_slice, seed=3, strength=0.5)

        np.testing.assert_array_equal(out.angles, tiny_slice.angles)
        assert out.quads == tiny_slice.quads
        assert out.frames.min() >= 0.0 and out.frames.max() <= 1.0

    def test_zero_strength_is_identity(self, tiny_slice):
        """Test strength 0 leaves the frames unchanged."""
        np.testing.assert_array_equal(color_augment(tiny_slice, 1, 0.0).frames, tiny_slice.frames)

    def test_strength_out_of_range(self, tiny_slice):
        """Test strength outside [0, 1] raises ContractError."""
        with pytest.raises(ContractError):
            color_augment(tiny_slice, 1, 1.5)


class TestSliceDirectories:
    def test_round_trip_is_exact(self, tiny_slice, slice_dir):
        """Test save_slice then load_slice reproduces the slice bit for bit."""
        loaded = load_slice(slice_dir)

        assert slices_equal(loaded, tiny_slice)
        assert loaded.meta.name == "tiny"

    def test_layout(self, slice_dir):
        """Test the directory holds numbered PNGs plus the three side files."""
        names = sorted(p.name for p in slice_dir.iterdir())

        assert names == [
            "angles.csv",
            "corners.csv",
            "frame_0000.png",
            "frame_0001.png",
            "frame_0002.png",
            "frame_0003.png",
            "meta.toml",
        ]

    def test_missing_directory(self, tmp_path):
        """Test a missing directory raises IngestionError."""
        with pytest.raises(IngestionError):
            load_slice(tmp_path / "absent")

    def test_missing_angles(self, slice_dir):
        """Test a missing angles.csv raises IngestionError naming it."""
        (slice_dir / "angles.csv").unlink()

        with pytest.raises(IngestionError) as exc_info:
            load_slice(slice_dir)

        assert "angles.csv" in str(exc_info.value)

    def test_non_finite_angle(self, slice_dir):
        """Test a NaN angle raises IngestionError naming angles.csv and the frame."""
        (slice_dir / "angles.csv").write_text("frame_index,angle_deg\n0,0.0\n1,0.0\n2,nan\n3,0.0\n")

        with pytest.raises(IngestionError) as exc_info:
            load_slice(slice_dir)

        assert "angles.csv" in str(exc_info.value)
        assert "frame 2" in str(exc_info.value)

    def test_invalid_quad_after_loading(self, slice_dir, mocker):
        """Test a quad rejected by slice validation surfaces as IngestionError naming corners.csv and the frame."""
        mocker.patch(
            "physgan_lab.scene.VideoSlice.validate", side_effect=GeometryError("Quad is not strictly convex", 1)
        )

        with pytest.raises(IngestionError) as exc_info:
            load_slice(slice_dir)

        assert "corners.csv" in str(exc_info.value)
        assert "frame 1" in str(exc_info.value)
        assert isinstance(exc_info.value.__cause__, GeometryError)

    def test_inconsistent_slice_after_loading(self, slice_dir, mocker):
        """Test a slice contract failure surfaces as IngestionError naming the directory."""
        mocker.patch(
            "physgan_lab.scene.VideoSlice.validate", side_effect=ContractError("Slice contains non-finite values")
        )

        with pytest.raises(IngestionError) as exc_info:
            load_slice(slice_dir)

        assert str(slice_dir) in str(exc_info.value)
        assert "non-finite" in str(exc_info.value)

    def test_count_mismatch(self, slice_dir):
        """Test a missing frame is reported as a count mismatch."""
        (slice_dir / "frame_0003.png").unlink()

        with pytest.raises(IngestionError) as exc_info:
            load_slice(slice_dir)

        assert "3 frames" in str(exc_info.value)

    def test_gap_in_numbering(self, slice_dir):
        """Test a gap in frame numbering names the expected frame."""
        (slice_dir / "frame_0001.png").unlink()

        with pytest.raises(IngestionError) as exc_info:
            load_slice(slice_dir)

        assert "frame 1" in str(exc_info.value)

    def test_unreadable_frame(self, slice_dir):
        """Test a corrupt PNG raises IngestionError naming the frame."""
        (slice_dir / "frame_0002.png").write_bytes(b"not a png")

        with pytest.raises(IngestionError) as exc_info:
            load_slice(slice_dir)

        assert "frame 2" in str(exc_info.value)

    def test_save_quantizes_with_warning(self, tiny_slice, tmp_path, caplog):
        """Test saving off-grid frames warns and stores the quantized values."""
        off_grid = tiny_slice.with_frames(np.clip(tiny_slice.frames + 0.001, 0.0, 1.0))

        save_slice(off_grid, tmp_path / "q")

        assert "quantized" in caplog.text
        np.testing.assert_array_equal(load_slice(tmp_path / "q").frames, quantize(off_grid.frames))


class TestSceneSequence:
    def test_duplicate_names(self):
        """Test duplicate scene names raise ConfigurationError."""
        with pytest.raises(ConfigurationError) as exc_info:
            scene_sequence([SceneConfig(name="a"), SceneConfig(name="a")])

        assert "a" in str(exc_info.value)

    def test_order_is_kept(self):
        """Test names come back in config order."""
        assert scene_sequence([SceneConfig(name="b"), SceneConfig(name="a")]) == ["b", "a"]
