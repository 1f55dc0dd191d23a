"""Synthetic drive-by scenes, slice ingestion and color augmentation.

The renderer is a pinhole camera above a flat road. The road is either straight
or a constant-curvature arc; positions along it are given in road coordinates
(arc length `s`, lateral offset `e` to the right of the lane centre). A
rectangular billboard stands beside the road at arc length
`initial_distance_m` and shows the sign asset through `warp.composite`.

Angles are in degrees, positive for steering to the right.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd
import tomli_w
from PIL import Image

from .errors import ConfigurationError, ContractError, GeometryError, IngestionError
from .tensor import make_rng
from .warp import Quad, composite, read_corners, write_corners

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

logger = logging.getLogger(__name__)

LANES = ("straight", "curve")
SIDES = ("right", "left")
SIGN_ASSETS = ("ring", "arches")
NEAR_PLANE_M = 0.5
FAR_PLANE_M = 150.0

SKY = np.array([0.55, 0.70, 0.90])
HAZE = np.array([0.72, 0.76, 0.80])
ASPHALT = np.array([0.33, 0.33, 0.35])
GRASS = np.array([0.24, 0.42, 0.20])
PAINT = np.array([0.92, 0.92, 0.88])


@dataclass
class SceneConfig:
    """Geometry and appearance of one synthetic drive-by scene."""

    name: str = "straight1"
    lane: str = "straight"
    curve_radius_m: float = 60.0
    speed_mps: float = 6.0
    frame_rate_hz: float = 10.0
    frames: int = 20
    initial_distance_m: float = 21.0
    billboard_size_m: tuple[float, float] = (3.0, 2.5)
    billboard_bottom_m: float = 1.0
    lateral_offset_m: float = 2.5
    billboard_side: str = "right"
    camera_height_m: float = 1.5
    focal_length_px: float = 48.0
    principal_point: Optional[tuple[float, float]] = None
    image_size: tuple[int, int] = (64, 64)
    lane_half_width_m: float = 1.8
    wheelbase_m: float = 2.5
    texture_seed: int = 0
    sign_asset: str = "ring"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SceneConfig":
        values = dict(data)
        for key in ("billboard_size_m", "principal_point", "image_size"):
            if values.get(key) is not None:
                values[key] = tuple(values[key])
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["principal_point"] = list(self.centre)
        data["billboard_size_m"] = list(self.billboard_size_m)
        data["image_size"] = list(self.image_size)
        return data

    @property
    def width(self) -> int:
        return int(self.image_size[0])

    @property
    def height(self) -> int:
        return int(self.image_size[1])

    @property
    def centre(self) -> tuple[float, float]:
        if self.principal_point is not None:
            return (float(self.principal_point[0]), float(self.principal_point[1]))
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    @property
    def curvature(self) -> float:
        """Signed road curvature in 1/m (positive turns right)."""
        return 0.0 if self.lane == "straight" else 1.0 / self.curve_radius_m

    def validate(self) -> list[str]:
        """Validate scene config, return list of errors."""
        errors = []
        if self.lane not in LANES:
            errors.append(f"scene '{self.name}': lane must be one of {LANES}, got '{self.lane}'")
        if self.speed_mps <= 0:
            errors.append(f"scene '{self.name}': speed_mps must be > 0, got {self.speed_mps}")
        if self.frame_rate_hz <= 0:
            errors.append(f"scene '{self.name}': frame_rate_hz must be > 0, got {self.frame_rate_hz}")
        if self.frames < 1:
            errors.append(f"scene '{self.name}': frames must be >= 1, got {self.frames}")
        if self.initial_distance_m <= 0:
            errors.append(f"scene '{self.name}': initial_distance_m must be > 0, got {self.initial_distance_m}")
        if min(self.billboard_size_m) <= 0:
            errors.append(f"scene '{self.name}': billboard_size_m must be positive, got {self.billboard_size_m}")
        if self.focal_length_px <= 0:
            errors.append(f"scene '{self.name}': focal_length_px must be > 0")
        if min(self.image_size) < 2:
            errors.append(f"scene '{self.name}': image_size must be at least 2x2, got {self.image_size}")
        if self.lane == "curve" and abs(self.curve_radius_m) <= 2 * self.lane_half_width_m:
            errors.append(
                f"scene '{self.name}': |curve_radius_m| must exceed the path width "
                f"{2 * self.lane_half_width_m} m, got {self.curve_radius_m}"
            )
        if self.billboard_side not in SIDES:
            errors.append(f"scene '{self.name}': billboard_side must be one of {SIDES}")
        if self.sign_asset not in SIGN_ASSETS and not Path(self.sign_asset).suffix:
            errors.append(f"scene '{self.name}': sign_asset must be one of {SIGN_ASSETS} or an image path")
        return errors


@dataclass
class SliceMeta:
    name: str = "slice"
    seed: int = 0
    lane: str = "straight"
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass(eq=False)
class VideoSlice:
    """n frames (n, c, h, w) in [0, 1], per-frame angles in degrees and sign quads."""

    frames: np.ndarray
    angles: np.ndarray
    quads: list[Quad]
    meta: SliceMeta = field(default_factory=SliceMeta)

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.angles = np.asarray(self.angles, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def geometry(self) -> tuple[int, int, int]:
        """(channels, height, width) of every frame."""
        _, c, h, w = self.frames.shape
        return (int(c), int(h), int(w))

    def validate(self) -> None:
        """Check the slice invariants.

        Raises:
            ContractError: If counts, shapes or value ranges are wrong.
            GeometryError: If a quad is degenerate (carries the frame index).
        """
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ContractError(f"Slice frames must have shape (n>=1, c, h, w), got {self.frames.shape}")
        n = self.frames.shape[0]
        if self.angles.shape != (n,) or len(self.quads) != n:
            raise ContractError(f"Slice has {n} frames, {self.angles.size} angles and {len(self.quads)} quads")
        if not np.all(np.isfinite(self.frames)) or not np.all(np.isfinite(self.angles)):
            raise ContractError("Slice contains non-finite values")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ContractError("Slice pixel values must lie in [0, 1]")
        _, h, w = self.geometry
        for i, quad in enumerate(self.quads):
            try:
                quad.validate()
            except GeometryError as e:
                raise GeometryError(str(e), frame_index=i) from e
            if not quad.within(w, h):
                logger.warning(f"Slice '{self.meta.name}': quad of frame {i} leaves the frame; it will be clipped")

    def with_frames(self, frames: np.ndarray) -> "VideoSlice":
        return VideoSlice(frames, self.angles.copy(), list(self.quads), self.meta)


def slices_equal(a: VideoSlice, b: VideoSlice) -> bool:
    """Exact equality of frames, angles and quads."""
    return (
        a.frames.shape == b.frames.shape
        and bool(np.array_equal(a.frames, b.frames))
        and bool(np.array_equal(a.angles, b.angles))
        and len(a.quads) == len(b.quads)
        and all(qa.equals(qb) for qa, qb in zip(a.quads, b.quads))
    )


# ---- sign assets ---------------------------------------------------------


def builtin_sign(name: str, size: int = 32) -> np.ndarray:
    """Procedural stand-in logos: 'ring' (white ring on green) and 'arches' (yellow arches on red)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = (xx + 0.5) / size
    v = (yy + 0.5) / size
    if name == "ring":
        field_color, glyph_color = np.array([0.10, 0.55, 0.25]), np.array([0.97, 0.97, 0.97])
        r = np.hypot(u - 0.5, v - 0.5)
        glyph = (r > 0.22) & (r < 0.34)
    elif name == "arches":
        field_color, glyph_color = np.array([0.80, 0.10, 0.10]), np.array([1.00, 0.78, 0.05])
        glyph = np.zeros_like(u, dtype=bool)
        for cx in (0.34, 0.66):
            r = np.hypot((u - cx) / 0.16, (v - 0.55) / 0.38)
            glyph |= (r > 0.7) & (r < 1.0) & (v < 0.85)
        glyph |= (v >= 0.55) & (v < 0.85) & ((np.abs(u - 0.18) < 0.045) | (np.abs(u - 0.82) < 0.045))
    else:
        raise ConfigurationError(f"Unknown built-in sign asset '{name}'\nAvailable assets: {', '.join(SIGN_ASSETS)}")
    sign = np.where(glyph[None], glyph_color[:, None, None], field_color[:, None, None])
    return quantize(sign)


def load_sign(path: Path) -> np.ndarray:
    """Read an RGB image as a (3, h, w) sign in [0, 1]."""
    if not path.exists():
        raise FileNotFoundError(f"Sign image not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0


def save_sign(sign: np.ndarray, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_png(np.asarray(sign), path)
    return path


def resolve_sign_asset(asset: str, size: int = 32) -> np.ndarray:
    if asset in SIGN_ASSETS:
        return builtin_sign(asset, size)
    return load_sign(Path(asset))


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap values to the 8-bit grid k/255 so PNG storage is lossless."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


# ---- road geometry -------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """Camera pose in road coordinates: arc length, lateral offset (m) and heading error (rad)."""

    s: float = 0.0
    lateral: float = 0.0
    heading: float = 0.0


def _centreline(kappa: float, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World (x, z) of the lane centre and its heading at arc length s."""
    s = np.asarray(s, dtype=np.float64)
    if kappa == 0.0:
        return np.zeros_like(s), s.copy(), np.zeros_like(s)
    theta = kappa * s
    return (1.0 - np.cos(theta)) / kappa, np.sin(theta) / kappa, theta


def road_to_world(kappa: float, s: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cx, cz, theta = _centreline(kappa, s)
    return cx + e * np.cos(theta), cz - e * np.sin(theta)


def world_to_road(kappa: float, x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of road_to_world for points ahead of the arc's start."""
    if kappa == 0.0:
        return z.copy(), x.copy()
    radius = 1.0 / kappa
    px, pz = x - radius, z
    sign = np.sign(kappa)
    theta = np.arctan2(pz * sign, -px * sign)
    rho = np.hypot(px, pz)
    return theta * radius, sign * (abs(radius) - rho)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera placed at a road pose."""

    x: float
    z: float
    heading: float
    height: float
    focal: float
    cx: float
    cy: float

    @classmethod
    def at(cls, cfg: SceneConfig, pose: Pose) -> "Camera":
        x, z = road_to_world(cfg.curvature, np.array(pose.s), np.array(pose.lateral))
        theta = cfg.curvature * pose.s
        cx, cy = cfg.centre
        return cls(float(x), float(z), theta + pose.heading, cfg.camera_height_m, cfg.focal_length_px, cx, cy)

    def to_camera(self, x: np.ndarray, z: np.ndarray, height: np.ndarray) -> tuple[np.ndarray, ...]:
        dx, dz = x - self.x, z - self.z
        sin_h, cos_h = np.sin(self.heading), np.cos(self.heading)
        xc = dx * cos_h - dz * sin_h
        zc = dx * sin_h + dz * cos_h
        yc = self.height - height
        return xc, yc, zc

    def project(self, xc: np.ndarray, yc: np.ndarray, zc: np.ndarray) -> np.ndarray:
        return np.stack([self.cx + self.focal * xc / zc, self.cy + self.focal * yc / zc], axis=-1)


def billboard_corners(cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World x, z and height of the billboard corners in TL, TR, BR, BL order."""
    width, height = cfg.billboard_size_m
    inner, outer = cfg.lateral_offset_m, cfg.lateral_offset_m + width
    if cfg.billboard_side == "right":
        left_e, right_e = inner, outer
    else:
        left_e, right_e = -outer, -inner
    e = np.array([left_e, right_e, right_e, left_e])
    top = cfg.billboard_bottom_m + height
    heights = np.array([top, top, cfg.billboard_bottom_m, cfg.billboard_bottom_m])
    s = np.full(4, cfg.initial_distance_m)
    x, z = road_to_world(cfg.curvature, s, e)
    return x, z, heights


def project_billboard(cfg: SceneConfig, pose: Pose) -> Optional[Quad]:
    """Image quad of the billboard seen from `pose`, or None when it is behind the near plane."""
    cam = Camera.at(cfg, pose)
    xc, yc, zc = cam.to_camera(*billboard_corners(cfg))
    if np.any(zc <= NEAR_PLANE_M):
        return None
    return Quad(cam.project(xc, yc, zc))


def ground_truth_angle(cfg: SceneConfig) -> float:
    """Steering angle that holds the lane: 0 on straights, atan(wheelbase / radius) on curves."""
    if cfg.lane == "straight":
        return 0.0
    return float(np.degrees(np.arctan(cfg.wheelbase_m / cfg.curve_radius_m)))


def pose_at_frame(cfg: SceneConfig, index: int) -> Pose:
    return Pose(s=cfg.speed_mps * index / cfg.frame_rate_hz)


# ---- rendering -----------------------------------------------------------


class ValueNoise:
    """Seeded two-octave value noise on a wrapping lattice."""

    def __init__(self, seed: int, lattice: int = 64) -> None:
        rng = make_rng(seed)
        self.coarse = rng.random((lattice, lattice))
        self.fine = rng.random((lattice, lattice))
        self.lattice = lattice

    def _sample(self, grid: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a0 = np.floor(a)
        b0 = np.floor(b)
        fa, fb = a - a0, b - b0
        n = self.lattice
        i0, j0 = a0.astype(np.int64) % n, b0.astype(np.int64) % n
        i1, j1 = (i0 + 1) % n, (j0 + 1) % n
        return (
            grid[i0, j0] * (1 - fa) * (1 - fb)
            + grid[i1, j0] * fa * (1 - fb)
            + grid[i0, j1] * (1 - fa) * fb
            + grid[i1, j1] * fa * fb
        )

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return 0.65 * self._sample(self.coarse, a, b) + 0.35 * self._sample(self.fine, a * 4.0, b * 4.0)


def render_background(cfg: SceneConfig, pose: Pose, noise: Optional[ValueNoise] = None) -> np.ndarray:
    """Sky, horizon haze, textured road with lane markings and grass, seen from `pose`."""
    noise = noise or ValueNoise(cfg.texture_seed)
    cam = Camera.at(cfg, pose)
    h, w = cfg.height, cfg.width
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = (cols - cam.cx) / cam.focal
    dy = (rows - cam.cy) / cam.focal

    image = np.broadcast_to(SKY[:, None, None], (3, h, w)).copy()
    ground = dy > 0
    depth = np.where(ground, cam.height / np.where(ground, dy, 1.0), np.inf)
    visible = ground & (depth < FAR_PLANE_M)
    image[:, ground & ~visible] = HAZE[:, None]
    if not np.any(visible):
        return image

    zc = depth[visible]
    xc = dx[visible] * zc
    sin_h, cos_h = np.sin(cam.heading), np.cos(cam.heading)
    wx = cam.x + xc * cos_h + zc * sin_h
    wz = cam.z - xc * sin_h + zc * cos_h
    s, e = world_to_road(cfg.curvature, wx, wz)

    texture = noise(s, e)
    road_half = cfg.lane_half_width_m + 0.6
    on_road = np.abs(e) <= road_half
    grain = texture[:, None] - 0.5
    colors = np.where(on_road[:, None], ASPHALT + 0.12 * grain, GRASS + 0.2 * grain)
    solid = np.abs(e - cfg.lane_half_width_m) < 0.08
    dashed = (np.abs(e + cfg.lane_half_width_m) < 0.08) & (np.mod(s, 6.0) < 3.0)
    colors[solid | dashed] = PAINT
    image[:, visible] = colors.T
    return np.clip(image, 0.0, 1.0)


def render_view(
    cfg: SceneConfig, sign: np.ndarray, pose: Pose, noise: Optional[ValueNoise] = None
) -> tuple[np.ndarray, Optional[Quad]]:
    """Render one quantized frame from `pose` with the billboard showing `sign`.

    The billboard is skipped when any corner is behind the near plane; the
    returned quad is then None.
    """
    background = render_background(cfg, pose, noise)
    quad = project_billboard(cfg, pose)
    if quad is None:
        return quantize(background), None
    try:
        quad.validate()
    except GeometryError:
        return quantize(background), None
    framed = composite(background, sign, quad).data
    return quantize(framed), quad


def render_scene(cfg: SceneConfig, sign_asset: np.ndarray) -> VideoSlice:
    """Render the nominal approach trajectory as a VideoSlice.

    Raises:
        ConfigurationError: If the config is invalid, the billboard is behind the
            camera at some frame, or it leaves the frame.
    """
    errors = cfg.validate()
    if errors:
        raise ConfigurationError("Scene configuration invalid:\n" + "\n".join(f"  - {e}" for e in errors))
    noise = ValueNoise(cfg.texture_seed)
    frames = []
    quads = []
    for i in range(cfg.frames):
        frame, quad = render_view(cfg, sign_asset, pose_at_frame(cfg, i), noise)
        if quad is None:
            raise ConfigurationError(
                f"scene '{cfg.name}': billboard is behind the camera at frame {i}\n"
                "Increase initial_distance_m or reduce speed_mps / frames."
            )
        if not quad.within(cfg.width, cfg.height):
            raise ConfigurationError(
                f"scene '{cfg.name}': billboard leaves the {cfg.width}x{cfg.height} frame at frame {i}\n"
                "Reduce lateral_offset_m, billboard_size_m or the number of frames, "
                "or move the billboard to the other side of the road."
            )
        frames.append(frame)
        quads.append(quad)
    angle = ground_truth_angle(cfg)
    meta = SliceMeta(name=cfg.name, seed=cfg.texture_seed, lane=cfg.lane, extra={"scene": cfg.to_dict()})
    logger.info(f"Rendered scene '{cfg.name}': {cfg.frames} frames, lane={cfg.lane}, angle={angle:.3f} deg")
    return VideoSlice(np.stack(frames), np.full(cfg.frames, angle), quads, meta)


# ---- augmentation --------------------------------------------------------


def augment_frames(frames: np.ndarray, rng: np.random.Generator, strength: float) -> np.ndarray:
    """clamp(c * x + b, 0, 1) with c ~ U[1 - s/2, 1 + s/2] and b ~ U[-s/5, s/5]."""
    contrast = rng.uniform(1.0 - 0.5 * strength, 1.0 + 0.5 * strength)
    brightness = rng.uniform(-0.2 * strength, 0.2 * strength)
    return np.clip(contrast * frames + brightness, 0.0, 1.0)


def color_augment(slice_: VideoSlice, seed: int, strength: float) -> VideoSlice:
    """Per-slice random contrast and brightness; quads and angles are untouched."""
    if not 0.0 <= strength <= 1.0:
        raise ContractError(f"Augmentation strength must lie in [0, 1], got {strength}")
    return slice_.with_frames(augment_frames(slice_.frames, make_rng(seed), strength))


# ---- slice directories ---------------------------------------------------


def _write_png(image: np.ndarray, path: Path) -> None:
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.shape[0] == 1:
        Image.fromarray(data[0], mode="L").save(path)
    else:
        Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(path)


def save_slice(slice_: VideoSlice, path: Path) -> Path:
    """Write frames as lossless PNGs plus angles.csv, corners.csv and meta.toml."""
    path.mkdir(parents=True, exist_ok=True)
    snapped = quantize(slice_.frames)
    if not np.array_equal(snapped, slice_.frames):
        logger.warning(f"Slice '{slice_.meta.name}' is not on the 8-bit grid; frames were quantized when saved")
    for i, frame in enumerate(snapped):
        _write_png(frame, path / f"frame_{i:04d}.png")
    pd.DataFrame({"frame_index": np.arange(len(slice_)), "angle_deg": slice_.angles}).to_csv(
        path / "angles.csv", index=False
    )
    write_corners(path / "corners.csv", slice_.quads)
    c, h, w = slice_.geometry
    meta = {
        "name": slice_.meta.name,
        "seed": int(slice_.meta.seed),
        "lane": slice_.meta.lane,
        "geometry": {"frames": len(slice_), "channels": c, "height": h, "width": w},
        "extra": slice_.meta.extra,
    }
    with open(path / "meta.toml", "wb") as f:
        tomli_w.dump(meta, f)
    logger.debug(f"Saved slice '{slice_.meta.name}' to {path}")
    return path


def _read_frame(path: Path, index: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            data = np.asarray(img)
    except (OSError, ValueError) as e:
        raise IngestionError(f"frame {index}: unreadable image {path}: {e}") from e
    if data.ndim == 2:
        data = data[:, :, None]
    return data.transpose(2, 0, 1).astype(np.float64) / 255.0


def load_slice(path: Path) -> VideoSlice:
    """Read a slice directory written by save_slice or annotated externally.

    Raises:
        IngestionError: On missing files, count mismatches, unreadable images or
            degenerate quads; the message names the offending frame or file.
    """
    if not path.is_dir():
        raise IngestionError(f"Slice directory not found: {path}")
    frame_paths = sorted(path.glob("frame_*.png"))
    if not frame_paths:
        raise IngestionError(f"No frame_%04d.png images in {path}")
    for i, p in enumerate(frame_paths):
        if p.name != f"frame_{i:04d}.png":
            raise IngestionError(f"frame {i}: expected frame_{i:04d}.png, found {p.name}")

    angles_path = path / "angles.csv"
    corners_path = path / "corners.csv"
    for required in (angles_path, corners_path):
        if not required.exists():
            raise IngestionError(f"Missing {required.name} in slice directory {path}")
    angles = pd.read_csv(angles_path, float_precision="round_trip")
    if list(angles.columns) != ["frame_index", "angle_deg"]:
        raise IngestionError(f"{angles_path} must have header frame_index,angle_deg")
    try:
        quads = read_corners(corners_path)
    except GeometryError as e:
        raise IngestionError(f"Degenerate quad in {corners_path}: {e}") from e

    n = len(frame_paths)
    if len(angles) != n or len(quads) != n:
        raise IngestionError(
            f"Slice {path} has {n} frames but {len(angles)} angles and {len(quads)} corner rows\n"
            "Every frame needs exactly one angle and one corner record."
        )

    frames = [_read_frame(p, i) for i, p in enumerate(frame_paths)]
    for i, frame in enumerate(frames):
        if frame.shape != frames[0].shape:
            raise IngestionError(f"frame {i}: size {frame.shape} differs from frame 0 {frames[0].shape}")

    meta = SliceMeta(name=path.name)
    meta_path = path / "meta.toml"
    if meta_path.exists():
        with open(meta_path, "rb") as f:
            raw = tomllib.load(f)
        meta = SliceMeta(
            name=raw.get("name", path.name),
            seed=int(raw.get("seed", 0)),
            lane=raw.get("lane", "straight"),
            extra=raw.get("extra", {}),
        )
    values = angles["angle_deg"].to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise IngestionError(f"frame {bad[0]}: non-finite angle in {angles_path}")
    slice_ = VideoSlice(np.stack(frames), values, quads, meta)
    try:
        slice_.validate()
    except GeometryError as e:
        raise IngestionError(f"{corners_path}: {e}") from e
    except ContractError as e:
        raise IngestionError(f"Slice directory {path} is inconsistent: {e}") from e
    return slice_


def scene_sequence(cfgs: Sequence[SceneConfig]) -> list[str]:
    """Scene names in config order, rejecting duplicates."""
    names = [c.name for c in cfgs]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise ConfigurationError(f"Duplicate scene names: {', '.join(duplicates)}")
    return names
