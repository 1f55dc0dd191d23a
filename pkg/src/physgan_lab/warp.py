"""Four-point homographies and differentiable sign compositing.

Pixel (row i, column j) has its centre at (x=j, y=i) and covers the unit square
around it. A sign of width W and height H covers the pixel-area rectangle
(-0.5, -0.5) - (W-0.5, H-0.5), and that rectangle is what maps onto a quad, so
the quad outline is the outline of the printed sign. A quad equal to the
rectangle shifted by integers pastes the sign pixels unchanged. Compositing and
rectification share the mapping. Sign pixel centres lie half a sign pixel
inside the quad, so when the quad is at least as large as the sign on screen,
rectify reads covered frame pixels only.

Corners are always ordered top-left, top-right, bottom-right, bottom-left.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import ContractError, GeometryError, IngestionError
from .tensor import Function, Tensor, as_tensor, stack

if TYPE_CHECKING:
    from .scene import VideoSlice

logger = logging.getLogger(__name__)

AREA_EPS = 1e-6
DET_EPS = 1e-12
SNAP_EPS = 1e-9
CORNER_COLUMNS = ["frame_index", "x1", "y1", "x2", "y2", "x3", "y3", "x4", "y4"]


@dataclass(frozen=True, eq=False)
class Quad:
    """Four corners (TL, TR, BR, BL) in frame pixel coordinates."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (4, 2):
            raise GeometryError(f"A quad needs 4 (x, y) corners, got array of shape {pts.shape}")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "Quad":
        return cls(np.asarray(values, dtype=np.float64).reshape(4, 2))

    @classmethod
    def rectangle(cls, width: int, height: int, x0: float = 0.0, y0: float = 0.0) -> "Quad":
        """Outline of the pixel area of a width x height grid whose top-left pixel centre is (x0, y0)."""
        x1 = x0 + width - 0.5
        y1 = y0 + height - 0.5
        x0 = x0 - 0.5
        y0 = y0 - 0.5
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64))

    def flat(self) -> list[float]:
        return [float(v) for v in self.points.reshape(-1)]

    def signed_area(self) -> float:
        """Shoelace area; positive for TL, TR, BR, BL order with y pointing down."""
        x, y = self.points[:, 0], self.points[:, 1]
        return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def equals(self, other: "Quad", atol: float = 0.0) -> bool:
        return bool(np.allclose(self.points, other.points, rtol=0.0, atol=atol))

    def validate(self) -> None:
        """Raise GeometryError unless the quad is finite, convex and wound TL, TR, BR, BL."""
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("Quad has non-finite corners")
        area = self.signed_area()
        if area <= AREA_EPS:
            raise GeometryError(
                f"Degenerate or mis-ordered quad (signed area {area:.3g} px²)\n"
                "Corners must be listed top-left, top-right, bottom-right, bottom-left."
            )
        edges = np.roll(self.points, -1, axis=0) - self.points
        turns = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if np.any(turns <= DET_EPS):
            raise GeometryError("Quad is not strictly convex (three corners collinear or a reflex corner)")

    def contains(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Cross-product inside test; centres exactly on an edge count as inside."""
        inside = np.ones(np.broadcast(xs, ys).shape, dtype=bool)
        for k in range(4):
            ax, ay = self.points[k]
            bx, by = self.points[(k + 1) % 4]
            inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
        return inside

    def within(self, width: int, height: int) -> bool:
        """True when every corner lies inside the frame's pixel area."""
        x, y = self.points[:, 0], self.points[:, 1]
        return bool(np.all((x >= -0.5) & (x <= width - 0.5) & (y >= -0.5) & (y <= height - 0.5)))


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map normalised so that the bottom-right entry is 1."""

    matrix: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        homo = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1) @ self.matrix.T
        return homo[:, :2] / homo[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(_normalise(np.linalg.inv(self.matrix)))

    def compose(self, other: "Homography") -> "Homography":
        """self after other."""
        return Homography(_normalise(self.matrix @ other.matrix))


def _normalise(matrix: np.ndarray) -> np.ndarray:
    if abs(matrix[2, 2]) < DET_EPS:
        raise GeometryError("Homography has a vanishing bottom-right entry")
    return matrix / matrix[2, 2]


def _conditioning(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    centre = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centre, axis=1))
    scale = np.sqrt(2.0) / spread
    return np.array([[scale, 0.0, -scale * centre[0]], [0.0, scale, -scale * centre[1]], [0.0, 0.0, 1.0]])


def homography_from_corners(src: Quad, dst: Quad) -> Homography:
    """Solve the 8x8 direct linear system mapping the corners of `src` onto `dst`.

    Raises:
        GeometryError: If either quad is degenerate or the system is singular.
    """
    src.validate()
    dst.validate()
    t_src = _conditioning(src.points)
    t_dst = _conditioning(dst.points)
    s = Homography(t_src).apply(src.points)
    d = Homography(t_dst).apply(dst.points)

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(s, d)):
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as e:
        raise GeometryError(f"Singular homography system: {e}") from e
    conditioned = np.append(h, 1.0).reshape(3, 3)
    matrix = _normalise(np.linalg.inv(t_dst) @ conditioned @ t_src)
    if abs(np.linalg.det(matrix)) <= DET_EPS:
        raise GeometryError("Homography is not invertible")
    return Homography(matrix)


@dataclass(frozen=True, eq=False)
class PastePlan:
    """Covered frame pixels and their bilinear taps into the sign, for one quad."""

    frame_shape: tuple[int, int, int]
    sign_shape: tuple[int, int, int]
    ys: np.ndarray
    xs: np.ndarray
    taps: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]

    @property
    def covered(self) -> int:
        return int(self.ys.size)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.frame_shape[1:], dtype=bool)
        m[self.ys, self.xs] = True
        return m


def _bilinear_taps(u: np.ndarray, v: np.ndarray, width: int, height: int) -> tuple[tuple[np.ndarray, ...], ...]:
    """Indices and weights of the four neighbours of each (u, v), clamped to the grid."""
    u = np.clip(u, 0.0, width - 1)
    v = np.clip(v, 0.0, height - 1)
    u = np.where(np.abs(u - np.round(u)) < SNAP_EPS, np.round(u), u)
    v = np.where(np.abs(v - np.round(v)) < SNAP_EPS, np.round(v), v)
    u0 = np.minimum(np.floor(u).astype(np.intp), max(width - 2, 0))
    v0 = np.minimum(np.floor(v).astype(np.intp), max(height - 2, 0))
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    fu = u - u0
    fv = v - v0
    return (
        (v0, u0, (1.0 - fu) * (1.0 - fv)),
        (v0, u1, fu * (1.0 - fv)),
        (v1, u0, (1.0 - fu) * fv),
        (v1, u1, fu * fv),
    )


def plan_composite(frame_shape: Sequence[int], sign_shape: Sequence[int], quad: Quad) -> PastePlan:
    """Precompute which frame pixels a quad covers and where they sample the sign."""
    c, h, w = (int(v) for v in frame_shape)
    sc, sh, sw = (int(v) for v in sign_shape)
    if sh < 2 or sw < 2:
        raise GeometryError(f"Sign must be at least 2x2 pixels, got {sw}x{sh}")
    if sc != c:
        raise GeometryError(f"Sign has {sc} channels but the frame has {c}")
    to_quad = homography_from_corners(Quad.rectangle(sw, sh), quad)
    to_sign = to_quad.inverse()

    x_lo = max(int(np.ceil(quad.points[:, 0].min())), 0)
    x_hi = min(int(np.floor(quad.points[:, 0].max())), w - 1)
    y_lo = max(int(np.ceil(quad.points[:, 1].min())), 0)
    y_hi = min(int(np.floor(quad.points[:, 1].max())), h - 1)
    if x_lo > x_hi or y_lo > y_hi:
        empty = np.zeros(0, dtype=np.intp)
        return PastePlan((c, h, w), (sc, sh, sw), empty, empty, ())

    gy, gx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
    inside = quad.contains(gx.astype(np.float64), gy.astype(np.float64))
    ys = gy[inside].astype(np.intp)
    xs = gx[inside].astype(np.intp)
    uv = to_sign.apply(np.stack([xs, ys], axis=1).astype(np.float64))
    taps = _bilinear_taps(uv[:, 0], uv[:, 1], sw, sh)
    return PastePlan((c, h, w), (sc, sh, sw), ys, xs, taps)  # type: ignore[arg-type]


class Paste(Function):
    """Replace the covered frame pixels by bilinear samples of the sign."""

    def forward(self, frame: np.ndarray, sign: np.ndarray, plan: PastePlan) -> np.ndarray:  # type: ignore[override]
        if frame.shape != plan.frame_shape or sign.shape != plan.sign_shape:
            raise GeometryError(
                f"Paste plan built for frame {plan.frame_shape} / sign {plan.sign_shape}, "
                f"got {frame.shape} / {sign.shape}"
            )
        self.plan = plan
        out = frame.copy()
        if plan.covered:
            sampled = np.zeros((sign.shape[0], plan.covered))
            for v_idx, u_idx, weight in plan.taps:
                sampled = sampled + weight * sign[:, v_idx, u_idx]
            out[:, plan.ys, plan.xs] = sampled
        return out

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        plan = self.plan
        g_frame = grad.copy()
        g_sign = np.zeros(plan.sign_shape)
        if plan.covered:
            covered = grad[:, plan.ys, plan.xs]
            g_frame[:, plan.ys, plan.xs] = 0.0
            for v_idx, u_idx, weight in plan.taps:
                np.add.at(g_sign, (slice(None), v_idx, u_idx), covered * weight)
        return g_frame, g_sign


def composite(
    frame: Union[Tensor, np.ndarray], sign: Union[Tensor, np.ndarray], quad: Quad, plan: Optional[PastePlan] = None
) -> Tensor:
    """Perspective-map `sign` onto `quad` inside `frame`.

    Pixels whose centre lies inside the quad are replaced by bilinear samples
    of the sign through the inverse rectangle-to-quad homography; every other
    pixel is copied bit for bit. The result is linear in the sign values and is
    recorded on the tape of its inputs.
    """
    frame_t = as_tensor(frame)
    sign_t = as_tensor(sign)
    if plan is None:
        plan = plan_composite(frame_t.shape, sign_t.shape, quad)
    return Paste.apply(frame_t, sign_t, plan=plan)


def rectify(frame: Union[Tensor, np.ndarray], quad: Quad, out_resolution: tuple[int, int]) -> np.ndarray:
    """Resample the interior of `quad` into an axis-aligned (height, width) patch.

    Patch pixel centres go through the same rectangle-to-quad map that
    `composite` inverts, so rectifying a pasted sign returns it up to
    interpolation error.
    """
    data = frame.data if isinstance(frame, Tensor) else np.asarray(frame, dtype=np.float64)
    out_h, out_w = out_resolution
    to_quad = homography_from_corners(Quad.rectangle(out_w, out_h), quad)
    gy, gx = np.mgrid[0:out_h, 0:out_w]
    xy = to_quad.apply(np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1).astype(np.float64))
    _, h, w = data.shape
    patch = np.zeros((data.shape[0], out_h * out_w))
    for v_idx, u_idx, weight in _bilinear_taps(xy[:, 0], xy[:, 1], w, h):
        patch += weight * data[:, v_idx, u_idx]
    return patch.reshape(data.shape[0], out_h, out_w)


def plan_slice(frame_shape: Sequence[int], sign_shape: Sequence[int], quads: Sequence[Quad]) -> list[PastePlan]:
    """One paste plan per frame; geometry errors carry the frame index."""
    plans = []
    for i, quad in enumerate(quads):
        try:
            plans.append(plan_composite(frame_shape, sign_shape, quad))
        except GeometryError as e:
            raise GeometryError(str(e), frame_index=i) from e
    return plans


def substitute_frames(
    frames: Union[Tensor, np.ndarray],
    sign: Union[Tensor, np.ndarray],
    quads: Sequence[Quad],
    plans: Optional[Sequence[PastePlan]] = None,
) -> Tensor:
    """Composite `sign` into each of the (n, c, h, w) frames with that frame's quad."""
    frames_t = as_tensor(frames)
    sign_t = as_tensor(sign)
    if frames_t.ndim != 4 or len(quads) != frames_t.shape[0]:
        raise ContractError(f"Need one quad per frame: frames {frames_t.shape}, {len(quads)} quads")
    if plans is None:
        plans = plan_slice(frames_t.shape[1:], sign_t.shape, quads)
    return stack([Paste.apply(frames_t[i], sign_t, plan=plan) for i, plan in enumerate(plans)])


def substitute_slice(slice_: "VideoSlice", sign: Union[Tensor, np.ndarray]) -> "VideoSlice":
    """X_adv: the slice with `sign` mapped into every frame; angles and quads are kept."""
    frames = substitute_frames(slice_.frames, sign, slice_.quads).data
    return slice_.with_frames(frames)


def write_corners(path: Path, quads: Sequence[Quad]) -> Path:
    """Write one `frame_index,x1,y1,...,x4,y4` row per frame."""
    rows = [[i] + q.flat() for i, q in enumerate(quads)]
    frame = pd.DataFrame(rows, columns=CORNER_COLUMNS)
    frame["frame_index"] = frame["frame_index"].astype(int)
    frame.to_csv(path, index=False)
    return path


def read_corners(path: Path) -> list[Quad]:
    """Read a corner-track file; rows must be in frame order starting at 0.

    Raises:
        IngestionError: If the header is missing or frame indices are out of order.
        GeometryError: If a quad is degenerate (carries the frame index).
    """
    try:
        table = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestionError(f"Cannot read corner file {path}: {e}") from e
    if list(table.columns) != CORNER_COLUMNS:
        raise IngestionError(
            f"Corner file {path} has header {list(table.columns)}\n" f"Expected header: {','.join(CORNER_COLUMNS)}"
        )
    quads = []
    for expected, row in enumerate(table.itertuples(index=False)):
        if int(row[0]) != expected:
            raise IngestionError(f"Corner file {path}: row {expected} has frame_index {row[0]}")
        quad = Quad.from_flat([float(v) for v in row[1:]])
        try:
            quad.validate()
        except GeometryError as e:
            raise GeometryError(str(e), frame_index=expected) from e
        quads.append(quad)
    return quads
