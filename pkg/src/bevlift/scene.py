"""Synthetic scenes, point-cloud ingestion, per-pixel depth/height maps and
the analyses built on them (histograms, camera-height error law)."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraRig, Intrinsics, Pixel, make_rig, project_many
from .discretization import BinSpec, bin_index
from .errors import EmptyCloud, ParseError
from .lifting import lift_pixel_height

ROADSIDE_INTRINSICS = Intrinsics(1000.0, 1000.0, 960.0, 540.0)
ROADSIDE_IMAGE = (1920, 1080)


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive: {self}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.theta)):
            raise ValueError(f"box pose must be finite: {self}")

    @classmethod
    def on_ground(cls, x, y, l, w, h, theta=0.0) -> "Box3D":
        return cls(x, y, h / 2.0, l, w, h, theta)


@dataclass(frozen=True)
class Scene:
    boxes: tuple = ()
    density: float = 100.0  # surface samples per m^2 on boxes
    ground_radius: float = 60.0
    ground_density: float | None = None  # defaults to ``density``
    ground_center: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.density > 0 or (self.ground_density is not None and not self.ground_density > 0):
            raise ValueError("sampling density must be positive")


def _stratified(rng: np.random.Generator, a: float, b: float, spacing: float) -> np.ndarray:
    """Jittered grid samples on [0, a] x [0, b], one per cell."""
    na, nb = max(1, math.ceil(a / spacing)), max(1, math.ceil(b / spacing))
    ia, ib = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    ja = rng.random(ia.shape)
    jb = rng.random(ib.shape)
    return np.stack([(ia + ja).ravel() * (a / na), (ib + jb).ravel() * (b / nb)], axis=1)


def sample_box(box: Box3D, density: float, rng: np.random.Generator) -> np.ndarray:
    """Points on all six faces of a box, in ego coordinates."""
    s = 1.0 / math.sqrt(density)
    hl, hw, hh = box.l / 2, box.w / 2, box.h / 2
    faces = []
    for sign in (-1.0, 1.0):
        uv = _stratified(rng, box.l, box.w, s)
        faces.append(np.column_stack([uv[:, 0] - hl, uv[:, 1] - hw, np.full(len(uv), sign * hh)]))
        uv = _stratified(rng, box.l, box.h, s)
        faces.append(np.column_stack([uv[:, 0] - hl, np.full(len(uv), sign * hw), uv[:, 1] - hh]))
        uv = _stratified(rng, box.w, box.h, s)
        faces.append(np.column_stack([np.full(len(uv), sign * hl), uv[:, 0] - hw, uv[:, 1] - hh]))
    local = np.concatenate(faces)
    c, sn = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array([box.x, box.y, box.z])


def sample_ground(scene: Scene, rng: np.random.Generator) -> np.ndarray:
    r = scene.ground_radius
    s = 1.0 / math.sqrt(scene.ground_density or scene.density)
    xy = _stratified(rng, 2 * r, 2 * r, s) - r
    xy = xy[np.hypot(xy[:, 0], xy[:, 1]) <= r] + np.asarray(scene.ground_center)
    return np.column_stack([xy, np.zeros(len(xy))])


def sample_scene(scene: Scene, seed: int = 0) -> np.ndarray:
    """All surface samples (ground first, then boxes in order) as (N, 3)."""
    rng = np.random.default_rng(seed)
    parts = [sample_ground(scene, rng)] if scene.ground_radius > 0 else []
    parts += [sample_box(b, scene.density, rng) for b in scene.boxes]
    return np.concatenate(parts) if parts else np.zeros((0, 3))


@dataclass(frozen=True, eq=False)
class PixelMaps:
    depth: np.ndarray  # (H', W') metres, 0 where invalid
    height: np.ndarray  # (H', W') metres above ground, 0 where invalid
    valid: np.ndarray  # (H', W') bool
    stride: int = 1
    stats: dict = field(default_factory=dict)

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    def stacked(self) -> np.ndarray:
        """(3, H', W') float64: depth, height, validity as 0/1."""
        return np.stack([self.depth, self.height, self.valid.astype(np.float64)])

    @classmethod
    def from_stacked(cls, arr: np.ndarray, stride: int = 1, stats: dict | None = None) -> "PixelMaps":
        return cls(arr[0].copy(), arr[1].copy(), arr[2] > 0.5, stride, stats or {})


def points_to_maps(points: np.ndarray, rig: CameraRig, stride: int = 1) -> PixelMaps:
    """Z-buffer ego-frame points into per-pixel depth and height maps.

    The nearest point wins each pixel; exact depth ties go to the smaller
    point index, so the result does not depend on evaluation order.
    """
    if rig.image_size is None:
        raise ValueError("rig needs image_size to render maps")
    w_img, h_img = rig.image_size
    wp, hp = math.ceil(w_img / stride), math.ceil(h_img / stride)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    u, v, z = project_many(rig, rig.extrinsics.ego_to_camera(pts))
    front = z > 0
    with np.errstate(invalid="ignore"):
        col = np.floor((u + 0.5) / stride)
        row = np.floor((v + 0.5) / stride)
        inside = front & (col >= 0) & (col < wp) & (row >= 0) & (row < hp)
    idx = np.flatnonzero(inside)
    pid = (row[idx] * wp + col[idx]).astype(np.int64)
    order = np.lexsort((idx, z[idx]))
    first_pid, first = np.unique(pid[order], return_index=True)
    winners = idx[order[first]]
    depth = np.zeros(hp * wp)
    height = np.zeros(hp * wp)
    valid = np.zeros(hp * wp, dtype=bool)
    depth[first_pid] = z[winners]
    height[first_pid] = pts[winners, 2]
    valid[first_pid] = True
    stats = {
        "points_in": int(len(pts)),
        "behind_camera": int((~front).sum()),
        "outside_image": int((front & ~inside).sum()),
        "valid_pixels": int(valid.sum()),
    }
    return PixelMaps(depth.reshape(hp, wp), height.reshape(hp, wp), valid.reshape(hp, wp), stride, stats)


def render_maps(scene: Scene, rig: CameraRig, seed: int = 0, stride: int = 1) -> PixelMaps:
    return points_to_maps(sample_scene(scene, seed), rig, stride)


def format_points(points: np.ndarray) -> str:
    lines = ["# x,y,z (metres, ego frame)"]
    lines += [f"{x!r},{y!r},{z!r}" for x, y, z in np.asarray(points, dtype=np.float64).tolist()]
    return "\n".join(lines) + "\n"


def write_points(points: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(format_points(points))


def parse_points(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split(",")
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 3 comma-separated values, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric value in {s!r}") from None
        if not all(math.isfinite(x) for x in vals):
            raise ParseError(f"line {lineno}: non-finite value")
        rows.append(vals)
    if not rows:
        raise EmptyCloud("point file contains no points")
    return np.array(rows, dtype=np.float64)


def ingest_points(path: str | Path, rig: CameraRig, stride: int = 1) -> PixelMaps:
    return points_to_maps(parse_points(Path(path).read_text()), rig, stride)


class Quantity:
    DEPTH = "depth"
    HEIGHT = "height"


def histogram(maps: PixelMaps, quantity: str, bins: BinSpec) -> np.ndarray:
    """Counts of valid pixels per bin; out-of-range values clamp to the end bins."""
    if quantity not in (Quantity.DEPTH, Quantity.HEIGHT):
        raise ValueError(f"unknown quantity {quantity!r}")
    values = maps.depth if quantity == Quantity.DEPTH else maps.height
    idx = bin_index(bins, values[maps.valid])
    return np.bincount(np.atleast_1d(idx), minlength=bins.n_bins).astype(np.int64)


def histogram_csv(bins: BinSpec, counts: np.ndarray) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["bin_center", "count"])
    for c, n in zip(bins.centers.tolist(), counts.tolist()):
        wr.writerow([repr(c), n])
    return buf.getvalue()


def support(maps: PixelMaps, quantity: str) -> tuple[float, float]:
    values = (maps.depth if quantity == Quantity.DEPTH else maps.height)[maps.valid]
    return float(values.min()), float(values.max())


@dataclass(frozen=True, eq=False)
class ErrorLaw:
    true_point: np.ndarray
    perturbed_point: np.ndarray
    range_error: float  # horizontal distance between the two lifts
    closed_form: float  # |dh| * r_true / (H - h_true)
    r_true: float
    pixel: Pixel | None = None


def error_law(rig: CameraRig, pixel: Pixel, h_true: float, delta_h: float) -> ErrorLaw:
    """Ground-plane displacement caused by a height error of ``delta_h`` at one pixel."""
    p_true = lift_pixel_height(rig, pixel, h_true)
    p_pert = lift_pixel_height(rig, pixel, h_true + delta_h)
    foot = rig.extrinsics.camera_center[:2]
    r_true = float(np.hypot(*(p_true[:2] - foot)))
    return ErrorLaw(
        true_point=p_true,
        perturbed_point=p_pert,
        range_error=float(np.hypot(*(p_pert[:2] - p_true[:2]))),
        closed_form=abs(delta_h) * r_true / (rig.ground_height - h_true),
        r_true=r_true,
        pixel=Pixel(float(pixel[0]), float(pixel[1])),
    )


def error_law_at_range(camera_height: float, ground_range: float, h_true: float = 0.0,
                       delta_h: float = 0.1, intrinsics: Intrinsics = ROADSIDE_INTRINSICS) -> ErrorLaw:
    """Error law for one object point at ``ground_range`` seen from a camera at ``camera_height``.

    The camera looks along ego +x, pitched so its optical axis passes
    through the object point; the pixel is that point's projection.
    """
    pitch = math.degrees(math.atan2(camera_height - h_true, ground_range))
    rig = make_rig(camera_height, pitch, intrinsics=intrinsics)
    target = np.array([ground_range, 0.0, h_true])
    u, v, _ = project_many(rig, rig.extrinsics.ego_to_camera(target[None]))
    return error_law(rig, Pixel(float(u[0]), float(v[0])), h_true, delta_h)


def roadside_rig(height: float = 5.0, pitch_deg: float = 15.0) -> CameraRig:
    return make_rig(height, pitch_deg, intrinsics=ROADSIDE_INTRINSICS, image_size=ROADSIDE_IMAGE)


def roadside_scene(n_objects: int = 20, near: float = 10.0, far: float = 100.0, seed: int = 0,
                   lateral: float = 8.0, density: float = 100.0, ground_radius: float = 100.0,
                   ground_density: float | None = 4.0, ground_center: tuple = (100.0, 0.0)) -> Scene:
    """Vehicles (<= 2 m tall) spaced evenly in range along ego +x, on a ground
    patch that by default reaches 200 m ahead of the camera."""
    rng = np.random.default_rng(seed)
    ranges = np.linspace(near, far, n_objects)
    boxes = []
    for r in ranges:
        h = rng.uniform(1.4, 2.0)
        boxes.append(Box3D.on_ground(float(r), float(rng.uniform(-lateral, lateral)),
                                     float(rng.uniform(3.8, 4.8)), float(rng.uniform(1.7, 2.0)),
                                     float(h), float(rng.uniform(-math.pi, math.pi))))
    return Scene(tuple(boxes), density, ground_radius, ground_density, tuple(ground_center))
