"""Reading and writing package types through the BVT1 container."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import container
from .bev_grid import BevGrid, GridSpec
from .errors import ContainerError, ShapeMismatch
from .fusion import DeformAttnWeights
from .lifting import WedgeVolume
from .maps import DistributionMap, FeatureMap, Role
from .scene import PixelMaps


def _rank3(path) -> tuple[np.ndarray, dict]:
    arr, meta = container.read(path)
    if arr.ndim != 3:
        raise ShapeMismatch(f"{path}: expected a rank-3 tensor, got shape {arr.shape}")
    return arr, meta


def write_feature_map(fm: FeatureMap, path) -> None:
    container.write(path, fm.data, {"kind": "feature_map", "role": fm.role.value})


def read_feature_map(path) -> FeatureMap:
    arr, meta = _rank3(path)
    return FeatureMap(arr, Role(meta.get("role", "context")))


def write_distribution(dm: DistributionMap, path, bins: dict | None = None) -> None:
    meta = {"kind": "distribution"}
    if bins is not None:
        meta["bins"] = bins
    container.write(path, dm.data, meta)


def read_distribution(path) -> DistributionMap:
    arr, _ = _rank3(path)
    return DistributionMap(arr)


def occupancy_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".occupancy" + p.suffix)


def write_bev(grid: BevGrid, path) -> list[Path]:
    """Write the feature grid to ``path`` and the occupancy counts beside it."""
    meta = dict(grid.metadata)
    meta.update({"kind": "bev", "grid": grid.spec.to_dict(), "dropped_points": grid.dropped_points})
    container.write(path, np.ascontiguousarray(grid.data, dtype=np.float64), meta)
    occ = occupancy_path(path)
    container.write(occ, grid.occupancy.astype(np.float64), {"kind": "bev_occupancy"})
    return [Path(path), occ]


def read_bev(path) -> BevGrid:
    data, meta = container.read(path)
    if meta.get("kind") != "bev":
        raise ContainerError(f"{path} is not a BEV grid container")
    occ, _ = container.read(occupancy_path(path))
    return BevGrid(GridSpec.from_dict(meta["grid"]), data, occ.astype(np.int64),
                   int(meta.get("dropped_points", 0)), meta)


def write_volume(vol: WedgeVolume, stem) -> list[Path]:
    """Positions (P x 3, f64) and features (P x C, f32) as two aligned containers."""
    stem = Path(stem)
    meta = dict(vol.metadata)
    meta.update({"kind": "wedge_volume", "points": len(vol), "source": vol.source.value,
                 "dropped_rays": vol.dropped_rays, "dropped_points": vol.dropped_points})
    pos = stem.with_name(stem.name + ".positions.bvt")
    feat = stem.with_name(stem.name + ".features.bvt")
    container.write(pos, np.ascontiguousarray(vol.positions, dtype=np.float64), meta)
    container.write(feat, np.ascontiguousarray(vol.features, dtype=np.float32), {"kind": "wedge_features"})
    return [pos, feat]


def write_pixel_maps(maps: PixelMaps, path, extra: dict | None = None) -> None:
    meta = {"kind": "pixel_maps", "channels": ["depth", "height", "valid"], "stride": maps.stride,
            "stats": maps.stats}
    meta.update(extra or {})
    container.write(path, maps.stacked(), meta)


def read_pixel_maps(path) -> PixelMaps:
    arr, meta = container.read(path)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeMismatch(f"{path}: pixel maps must be 3 x H x W")
    return PixelMaps.from_stacked(arr, int(meta.get("stride", 1)), meta.get("stats"))


def write_weights(w: DeformAttnWeights, directory) -> Path:
    """One container per parameter plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name in DeformAttnWeights.PARAMS:
        arr = getattr(w, name)
        container.write(d / f"{name}.bvt", arr, {"kind": "weight", "name": name})
        tensors[name] = {"file": f"{name}.bvt", "shape": list(arr.shape)}
    manifest = {"heads": w.heads, "keys": w.keys, "channels": w.channels, "tensors": tensors}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_weights(manifest_path) -> DeformAttnWeights:
    p = Path(manifest_path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        manifest = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{p}: invalid manifest: {exc}") from exc
    arrays = {}
    for name in DeformAttnWeights.PARAMS:
        entry = manifest["tensors"][name]
        arr, _ = container.read(p.parent / entry["file"])
        if list(arr.shape) != list(entry["shape"]):
            raise ShapeMismatch(f"{name}: manifest says {entry['shape']}, file has {list(arr.shape)}")
        arrays[name] = arr
    return DeformAttnWeights(int(manifest["heads"]), int(manifest["keys"]), int(manifest["channels"]), **arrays)
