"""Voxel pooling of wedge volumes into bird's-eye-view grids.

Determinism contract: points are first put in canonical order (see
``WedgeVolume.canonical_order``); each cell then accumulates its points in
ascending canonical index. Workers own disjoint cell ranges, so the result
is bitwise independent of the worker count.
"""
from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .lifting import WedgeVolume


class Reduction(str, enum.Enum):
    SUM = "sum"
    MEAN = "mean"
    MAX = "max"


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: float
    reduction: Reduction = Reduction.SUM

    def __post_init__(self):
        object.__setattr__(self, "reduction", Reduction(str(getattr(self.reduction, "value", self.reduction)).lower()))
        vals = (self.x_min, self.x_max, self.y_min, self.y_max, self.resolution)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidSpec("grid extent must be finite")
        if not (self.x_max > self.x_min and self.y_max > self.y_min and self.resolution > 0):
            raise InvalidSpec(f"invalid grid extent or resolution: {self}")

    @property
    def nx(self) -> int:
        return math.ceil((self.x_max - self.x_min) / self.resolution)

    @property
    def ny(self) -> int:
        return math.ceil((self.y_max - self.y_min) / self.resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nx, self.ny

    def cell_center(self, ix, iy):
        return (self.x_min + (np.asarray(ix) + 0.5) * self.resolution,
                self.y_min + (np.asarray(iy) + 0.5) * self.resolution)

    def cell_of(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(ix, iy, inside)`` for (P, 2+) ego positions; cells are half-open."""
        x, y = xy[:, 0], xy[:, 1]
        ix = np.floor((x - self.x_min) / self.resolution)
        iy = np.floor((y - self.y_min) / self.resolution)
        inside = ((x >= self.x_min) & (x < self.x_max) & (y >= self.y_min) & (y < self.y_max)
                  & (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny))
        ix = np.where(inside, ix, 0).astype(np.int64)
        iy = np.where(inside, iy, 0).astype(np.int64)
        return ix, iy, inside

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min,
                "y_max": self.y_max, "resolution": self.resolution,
                "reduction": self.reduction.value}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        try:
            return cls(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]), float(d["y_max"]),
                       float(d["resolution"]), d.get("reduction", "sum"))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed grid spec {d!r}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class BevGrid:
    spec: GridSpec
    data: np.ndarray  # (X, Y, C) float64
    occupancy: np.ndarray  # (X, Y) int64
    dropped_points: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.data.shape[:2] != self.spec.shape or self.occupancy.shape != self.spec.shape:
            raise ValueError(f"grid arrays do not match spec shape {self.spec.shape}")
        for a in (self.data, self.occupancy):
            a.setflags(write=False)

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _pool_cells(reduction: Reduction, cell_ids: np.ndarray, feats: np.ndarray,
                lo: int, hi: int, channels: int) -> np.ndarray:
    """Accumulate the points of cells [lo, hi); inputs are sorted by cell, stable."""
    out = np.zeros((hi - lo, channels), dtype=np.float64)
    local = cell_ids - lo
    if reduction is Reduction.MAX:
        out.fill(-np.inf)
        np.maximum.at(out, local, feats)
    else:
        np.add.at(out, local, feats)
    return out


def voxel_pool(volume: WedgeVolume, spec: GridSpec, threads: int = 1) -> BevGrid:
    """Collapse a wedge volume onto the ground-plane grid (z is ignored)."""
    nx, ny = spec.shape
    c = volume.feature_dim
    vol = volume.take(volume.canonical_order())
    ix, iy, inside = spec.cell_of(vol.positions)
    cell = (ix * ny + iy)[inside]
    feats = vol.features[inside].astype(np.float64)
    order = np.argsort(cell, kind="stable")
    cell, feats = cell[order], feats[order]

    n_cells = nx * ny
    occupancy = np.bincount(cell, minlength=n_cells).astype(np.int64)
    workers = max(1, int(threads))
    bounds = np.linspace(0, n_cells, workers + 1).astype(np.int64)
    split = np.searchsorted(cell, bounds)

    def run(k):
        a, b = split[k], split[k + 1]
        return _pool_cells(spec.reduction, cell[a:b], feats[a:b], bounds[k], bounds[k + 1], c)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(workers)))
    else:
        parts = [run(0)]
    data = np.concatenate(parts, axis=0)
    empty = occupancy == 0
    if spec.reduction is Reduction.MEAN:
        data = data / np.maximum(occupancy, 1)[:, None]
    data[empty] = 0.0
    dropped = int((~inside).sum())
    return BevGrid(
        spec=spec,
        data=data.reshape(nx, ny, c),
        occupancy=occupancy.reshape(nx, ny),
        dropped_points=dropped,
        metadata={"grid": spec.to_dict(), "reduction": spec.reduction.value,
                  "dropped_points": dropped, "points_in": len(volume),
                  "source": volume.source.value, **{k: v for k, v in volume.metadata.items()
                                                    if k in ("bins", "rig", "dropped_rays")}},
    )


def pool_reference(volume: WedgeVolume, spec: GridSpec) -> tuple[np.ndarray, np.ndarray, int]:
    """Sequential pooling over canonically ordered points, one point at a time.

    Slow; exists as an oracle for ``voxel_pool``.
    """
    nx, ny = spec.shape
    c = volume.feature_dim
    data = np.zeros((nx, ny, c))
    if spec.reduction is Reduction.MAX:
        data.fill(-np.inf)
    occ = np.zeros((nx, ny), dtype=np.int64)
    dropped = 0
    keys = sorted(range(len(volume)), key=lambda i: (volume.pixels[i, 1], volume.pixels[i, 0],
                                                     volume.bins[i], i))
    for i in keys:
        x, y = volume.positions[i, 0], volume.positions[i, 1]
        if not (spec.x_min <= x < spec.x_max and spec.y_min <= y < spec.y_max):
            dropped += 1
            continue
        gx = int(math.floor((x - spec.x_min) / spec.resolution))
        gy = int(math.floor((y - spec.y_min) / spec.resolution))
        if not (0 <= gx < nx and 0 <= gy < ny):
            dropped += 1
            continue
        occ[gx, gy] += 1
        for k in range(c):
            f = float(volume.features[i, k])
            if spec.reduction is Reduction.MAX:
                data[gx, gy, k] = max(data[gx, gy, k], f)
            else:
                data[gx, gy, k] += f
    if spec.reduction is Reduction.MEAN:
        nz = occ > 0
        data[nz] /= occ[nz][:, None]
    data[occ == 0] = 0.0
    return data, occ, dropped


def pool_bench(volumes: dict[str, WedgeVolume], spec: GridSpec, repetitions: int = 3,
               threads: int = 1) -> dict:
    """Time ``voxel_pool`` on each named volume and report work accounting.

    ``ratios`` gives each volume's point count relative to the first one.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    report: dict = {"repetitions": repetitions, "volumes": {}}
    base = None
    for name, vol in volumes.items():
        t0 = time.perf_counter_ns()
        for _ in range(repetitions):
            grid = voxel_pool(vol, spec, threads=threads)
        wall = (time.perf_counter_ns() - t0) / repetitions
        n = len(vol)
        entry = {
            "points_in": n,
            "points_dropped": grid.dropped_points,
            "cells_touched": int((grid.occupancy > 0).sum()),
            "wall_ns_per_rep": wall,
            "points_per_second": (n / (wall * 1e-9)) if n and wall > 0 else None,
            "status": "ok" if n else "empty",
        }
        report["volumes"][name] = entry
        if base is None:
            base = n
    if volumes:
        report["point_ratio_to_first"] = {
            name: (e["points_in"] / base if base else None) for name, e in report["volumes"].items()
        }
    return report


def lift_pool(cfg, features, dist, spec: GridSpec, source="height", prob_floor: float = 0.0,
              threads: int = 1) -> BevGrid:
    """Lift and pool block by block without materialising the whole wedge volume.

    Blocks arrive in canonical order and each is accumulated in point
    order, so the result equals ``voxel_pool(lift_map(...))`` bitwise.
    """
    from .lifting import Source, iter_lift_blocks, volume_metadata

    source = Source(source)
    nx, ny = spec.shape
    n_cells = nx * ny
    c = features.channels
    acc = np.zeros((n_cells, c), dtype=np.float64)
    if spec.reduction is Reduction.MAX:
        acc.fill(-np.inf)
    occupancy = np.zeros(n_cells, dtype=np.int64)
    points_in = dropped = rays = pts_dropped = 0
    for pos, _pix, _bins, feats, dr, dp in iter_lift_blocks(cfg, features, dist, source, prob_floor, threads):
        points_in += len(pos)
        rays += dr
        pts_dropped += dp
        ix, iy, inside = spec.cell_of(pos)
        dropped += int((~inside).sum())
        cell = (ix * ny + iy)[inside]
        f = feats[inside].astype(np.float64)
        occupancy += np.bincount(cell, minlength=n_cells)
        if spec.reduction is Reduction.MAX:
            np.maximum.at(acc, cell, f)
        else:
            np.add.at(acc, cell, f)
    empty = occupancy == 0
    if spec.reduction is Reduction.MEAN:
        acc = acc / np.maximum(occupancy, 1)[:, None]
    acc[empty] = 0.0
    meta = volume_metadata(cfg, source, rays, pts_dropped)
    return BevGrid(
        spec=spec,
        data=acc.reshape(nx, ny, c),
        occupancy=occupancy.reshape(nx, ny),
        dropped_points=dropped,
        metadata={"grid": spec.to_dict(), "reduction": spec.reduction.value,
                  "dropped_points": dropped, "points_in": points_in, "source": source.value,
                  **{k: meta[k] for k in ("bins", "rig", "dropped_rays")}},
    )
