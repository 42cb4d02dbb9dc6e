"""Height-based and depth-based 2D -> 3D lifting into wedge volumes.

The height lift intersects each pixel ray with the horizontal plane at a
hypothesised height. Working in the virtual frame (camera origin, +y down)
the ray point on the depth-1 reference plane is scaled by similar triangles:

    P_virt = (H - h) / y_ref * P_ref_virt,   P_ref_virt = T_cam^virt K^-1 [u, v, 1]^T

and then moved to ego coordinates.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraRig, Pixel, back_project_many
from .discretization import BinSpec
from .errors import AboveCamera, HorizonRay, NonPositiveDepth, ShapeMismatch
from .maps import DistributionMap, FeatureMap

EPS_RAY = 1e-6
EPS_HEIGHT = 1e-3
# fixed work-block size so outputs do not depend on the worker count
BLOCK_CELLS = 256


class Source(str, enum.Enum):
    HEIGHT = "height"
    DEPTH = "depth"


@dataclass(frozen=True)
class LiftConfig:
    rig: CameraRig
    bins: BinSpec
    feature_stride: int = 16

    def __post_init__(self):
        if int(self.feature_stride) != self.feature_stride or self.feature_stride < 1:
            raise ValueError(f"feature_stride must be an integer >= 1, got {self.feature_stride}")


def cell_to_pixel(x, y, stride: int):
    """Image coordinates of the centre of feature cell (x, y)."""
    return (np.asarray(x, np.float64) + 0.5) * stride - 0.5, (np.asarray(y, np.float64) + 0.5) * stride - 0.5


def reference_points_virtual(rig: CameraRig, u, v) -> np.ndarray:
    """Depth-1 reference-plane points of pixels, in the virtual frame, (..., 3)."""
    ref_cam = back_project_many(rig, u, v, 1.0)
    return ref_cam @ rig.cam_to_virtual.T


def lift_height_virtual(rig: CameraRig, p: Pixel, h: float) -> np.ndarray:
    """Height lift of one pixel, returned in the virtual frame."""
    ref = reference_points_virtual(rig, p[0], p[1])
    y_ref = ref[1]
    if not y_ref > EPS_RAY:
        raise HorizonRay(f"pixel {tuple(p)} has virtual y_ref={y_ref:.3e}")
    if not h < rig.ground_height - EPS_HEIGHT:
        raise AboveCamera(f"height {h} is not below the camera at {rig.ground_height}")
    return (rig.ground_height - h) / y_ref * ref


def lift_pixel_height(cfg: LiftConfig | CameraRig, p: Pixel, h: float) -> np.ndarray:
    """Ego-frame point where pixel ``p``'s ray meets the plane at height ``h``."""
    rig = cfg.rig if isinstance(cfg, LiftConfig) else cfg
    return rig.virtual_to_ego.apply(lift_height_virtual(rig, p, h))


def lift_pixel_depth(cfg: LiftConfig | CameraRig, p: Pixel, d: float) -> np.ndarray:
    rig = cfg.rig if isinstance(cfg, LiftConfig) else cfg
    if not d > 0:
        raise NonPositiveDepth(f"depth must be positive, got {d}")
    cam = back_project_many(rig, p[0], p[1], d)
    return rig.extrinsics.camera_to_ego(cam)


def lift_height_many(rig: CameraRig, u, v, h) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised height lift. Returns ``(points_ego, valid)``; invalid rows are NaN."""
    ref = reference_points_virtual(rig, u, v)
    h = np.asarray(h, dtype=np.float64)
    y_ref = ref[..., 1]
    ok = (y_ref > EPS_RAY) & (h < rig.ground_height - EPS_HEIGHT)
    scale = (rig.ground_height - h) / np.where(ok, y_ref, 1.0)
    pts = rig.virtual_to_ego.apply(scale[..., None] * ref)
    pts[~ok] = np.nan
    return pts, ok


@dataclass(frozen=True, eq=False)
class WedgeVolume:
    """Lifted pseudo-points in canonical order (cell row-major, bin ascending)."""

    positions: np.ndarray  # (P, 3) float64, ego frame
    pixels: np.ndarray  # (P, 2) float64 image coords (u, v)
    bins: np.ndarray  # (P,) int64
    features: np.ndarray  # (P, C_f) float32
    source: Source
    n_bins: int
    dropped_rays: int = 0
    dropped_points: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        p = len(self.positions)
        if self.positions.shape != (p, 3) or self.pixels.shape != (p, 2) or self.bins.shape != (p,):
            raise ShapeMismatch("wedge volume arrays are not aligned")
        if self.features.ndim != 2 or len(self.features) != p:
            raise ShapeMismatch("wedge volume features are not aligned with positions")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("wedge volume has non-finite positions")
        if p and (self.bins.min() < 0 or self.bins.max() >= self.n_bins):
            raise ValueError("wedge volume bin index out of range")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def canonical_order(self) -> np.ndarray:
        """Permutation sorting points by (pixel row, pixel column, bin)."""
        return np.lexsort((np.arange(len(self)), self.bins, self.pixels[:, 0], self.pixels[:, 1]))

    def take(self, order: np.ndarray) -> "WedgeVolume":
        return WedgeVolume(
            self.positions[order], self.pixels[order], self.bins[order], self.features[order],
            self.source, self.n_bins, self.dropped_rays, self.dropped_points, dict(self.metadata),
        )


def _lift_block(cfg: LiftConfig, source: Source, feats: np.ndarray, dist: np.ndarray,
                cells: np.ndarray, width: int, prob_floor: float):
    """Lift a contiguous run of cells (flat row-major indices)."""
    rig, spec = cfg.rig, cfg.bins
    ys, xs = np.divmod(cells, width)
    u, v = cell_to_pixel(xs, ys, cfg.feature_stride)
    centers = spec.centers
    nb = len(centers)
    if source is Source.HEIGHT:
        ref = reference_points_virtual(rig, u, v)
        y_ref = ref[:, 1]
        ray_ok = y_ref > EPS_RAY
        bin_ok = centers < rig.ground_height - EPS_HEIGHT
        safe_y = np.where(ray_ok, y_ref, 1.0)
        scale = (rig.ground_height - centers[None, :]) / safe_y[:, None]
        virt = scale[..., None] * ref[:, None, :]
        pos = rig.virtual_to_ego.apply(virt.reshape(-1, 3)).reshape(len(cells), nb, 3)
        keep = ray_ok[:, None] & bin_ok[None, :]
        dropped_rays = int((~ray_ok).sum())
        dropped_points = int((ray_ok[:, None] & ~bin_ok[None, :]).sum())
    else:
        cam = back_project_many(rig, u[:, None], v[:, None], centers[None, :])
        pos = rig.extrinsics.camera_to_ego(cam.reshape(-1, 3)).reshape(len(cells), nb, 3)
        keep = np.ones((len(cells), nb), dtype=bool)
        dropped_rays = dropped_points = 0
    # feats: (C, n) float32, dist: (B, n) float32
    probs = dist.T
    weighted = feats.T[:, None, :] * probs[:, :, None]  # (n, B, C) float32
    if prob_floor > 0:
        pruned = keep & (probs < prob_floor)
        dropped_points += int(pruned.sum())
        keep &= ~pruned
    flat = keep.reshape(-1)
    bins = np.broadcast_to(np.arange(nb), (len(cells), nb)).reshape(-1)[flat]
    pix = np.stack([np.repeat(u, nb), np.repeat(v, nb)], axis=1)[flat]
    return (pos.reshape(-1, 3)[flat], pix, bins, weighted.reshape(-1, feats.shape[0])[flat],
            dropped_rays, dropped_points)


def iter_lift_blocks(cfg: LiftConfig, features: FeatureMap, dist: DistributionMap,
                     source: Source | str = Source.HEIGHT, prob_floor: float = 0.0,
                     threads: int = 1):
    """Yield lifted blocks (positions, pixels, bins, features, dropped_rays,
    dropped_points) in canonical order. Block boundaries are fixed, so the
    output does not depend on ``threads``."""
    source = Source(source)
    if features.spatial != dist.spatial:
        raise ShapeMismatch(f"features {features.spatial} vs distribution {dist.spatial}")
    if dist.n_bins != cfg.bins.n_bins:
        raise ShapeMismatch(f"distribution has {dist.n_bins} bins, spec has {cfg.bins.n_bins}")
    if source is Source.DEPTH and not cfg.bins.centers.min() > 0:
        raise NonPositiveDepth("depth bins must have positive centres")
    h, w = features.spatial
    feats = features.data.reshape(features.channels, -1)
    probs = dist.data.reshape(dist.n_bins, -1)
    starts = range(0, h * w, BLOCK_CELLS)

    def run(s):
        cells = np.arange(s, min(s + BLOCK_CELLS, h * w))
        return _lift_block(cfg, source, feats[:, cells], probs[:, cells], cells, w, prob_floor)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            # bounded look-ahead keeps memory flat on large maps
            window = threads * 2
            pending = []
            for s in starts:
                pending.append(pool.submit(run, s))
                if len(pending) >= window:
                    yield pending.pop(0).result()
            for fut in pending:
                yield fut.result()
    else:
        for s in starts:
            yield run(s)


def volume_metadata(cfg: LiftConfig, source: Source, dropped_rays: int, dropped_points: int) -> dict:
    return {
        "bins": cfg.bins.to_dict(),
        "bin_value": "center",
        "rig": cfg.rig.fingerprint(),
        "feature_stride": cfg.feature_stride,
        "source": Source(source).value,
        "dropped_rays": dropped_rays,
        "dropped_points": dropped_points,
    }


def lift_map(cfg: LiftConfig, features: FeatureMap, dist: DistributionMap,
             source: Source | str = Source.HEIGHT, prob_floor: float = 0.0,
             threads: int = 1) -> WedgeVolume:
    """Lift every feature cell under every bin hypothesis.

    Each pseudo-point carries ``features[:, y, x] * dist[b, y, x]``. Cells
    whose ray does not descend below the horizon emit nothing and are
    counted in ``dropped_rays``; height bins at or above the camera are
    counted in ``dropped_points``.
    """
    source = Source(source)
    parts = list(iter_lift_blocks(cfg, features, dist, source, prob_floor, threads))
    pos, pix, bins, fts, dr, dp = zip(*parts)
    c = features.channels
    return WedgeVolume(
        positions=np.concatenate(pos),
        pixels=np.concatenate(pix),
        bins=np.concatenate(bins).astype(np.int64),
        features=np.concatenate(fts).astype(np.float32).reshape(-1, c),
        source=source,
        n_bins=cfg.bins.n_bins,
        dropped_rays=sum(dr),
        dropped_points=sum(dp),
        metadata=volume_metadata(cfg, source, sum(dr), sum(dp)),
    )
