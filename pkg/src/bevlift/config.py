"""Experiment configuration: one YAML document plus command-line overrides."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .bev_grid import GridSpec
from .camera import CameraRig, load_calibration
from .discretization import BinSpec
from .errors import ConfigError, InvalidSpec
from .scene import Scene, roadside_rig, roadside_scene

DEFAULT_HEIGHT_BINS = {"strategy": "did", "v_min": -1.0, "v_max": 1.0, "n_bins": 90, "alpha": 2.0}
DEFAULT_DEPTH_BINS = {"strategy": "ud", "v_min": 1.0, "v_max": 104.0, "n_bins": 206}
DEFAULT_GRID = {"x_min": 0.0, "x_max": 102.4, "y_min": -51.2, "y_max": 51.2, "resolution": 0.8,
                "reduction": "sum"}


def derive_seed(root: int, name: str) -> int:
    """Independent per-module seed split from the root seed."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 20
    near: float = 10.0
    far: float = 100.0
    lateral: float = 8.0
    density: float = 100.0
    ground_radius: float = 100.0
    ground_density: float | None = 4.0
    ground_center: tuple = (100.0, 0.0)
    render_stride: int = 4

    def build(self, seed: int) -> Scene:
        return roadside_scene(self.n_objects, self.near, self.far, seed, self.lateral,
                              self.density, self.ground_radius, self.ground_density,
                              tuple(self.ground_center))


@dataclass(frozen=True)
class DisturbanceConfig:
    sigma_deg: float = 1.67
    seeds: int = 100


@dataclass(frozen=True)
class ErrorLawConfig:
    camera_heights: tuple = (1.5, 3.0, 5.0, 10.0)
    ground_range: float = 10.0
    h_true: float = 0.0
    delta_h: float = 0.1


@dataclass(frozen=True)
class HistogramConfig:
    height_bins: dict = field(default_factory=lambda: {"strategy": "ud", "v_min": -1.0, "v_max": 2.0, "n_bins": 30})
    depth_bins: dict = field(default_factory=lambda: {"strategy": "ud", "v_min": 0.0, "v_max": 200.0, "n_bins": 100})


@dataclass(frozen=True)
class ExperimentConfig:
    rig: CameraRig
    height_bins: BinSpec
    depth_bins: BinSpec
    grid: GridSpec
    feature_stride: int = 16
    context_channels: int = 8
    residual_source: str = "height"
    disturbance: DisturbanceConfig = DisturbanceConfig()
    scene: SceneConfig = SceneConfig()
    error_law: ErrorLawConfig = ErrorLawConfig()
    histogram: HistogramConfig = HistogramConfig()
    bench_repetitions: int = 3
    seed: int = 0
    source_path: str | None = None

    def seed_for(self, name: str) -> int:
        return derive_seed(self.seed, name)


def _section(raw: dict, key: str, cls):
    data = raw.get(key) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    try:
        obj = cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad '{key}' section: {exc}") from exc
    if cls is ErrorLawConfig:
        obj = replace(obj, camera_heights=tuple(float(h) for h in obj.camera_heights))
    return obj


def config_from_dict(raw: dict, base_dir: Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    base_dir = base_dir or Path(".")
    if "calibration" in raw and raw["calibration"] is not None:
        cal = Path(raw["calibration"])
        if not cal.is_absolute():
            cal = base_dir / cal
        if not cal.exists():
            raise ConfigError(f"calibration file {cal} does not exist")
        rig = load_calibration(cal)
    else:
        cam = raw.get("camera") or {}
        try:
            rig = roadside_rig(float(cam.get("height", 5.0)), float(cam.get("pitch_deg", 15.0)))
        except ValueError as exc:
            raise ConfigError(f"bad camera section: {exc}") from exc

    hb = dict(DEFAULT_HEIGHT_BINS, **(raw.get("height_bins") or {}))
    for flag, key in (("bins", "n_bins"), ("alpha", "alpha"), ("strategy", "strategy")):
        if flag in overrides:
            hb[key] = overrides[flag]
    db = dict(DEFAULT_DEPTH_BINS, **(raw.get("depth_bins") or {}))
    dist = _section(raw, "disturbance", DisturbanceConfig)
    if "sigma_deg" in overrides:
        dist = replace(dist, sigma_deg=float(overrides["sigma_deg"]))
    if dist.sigma_deg < 0:
        raise ConfigError("disturbance.sigma_deg must be >= 0")
    try:
        cfg = ExperimentConfig(
            rig=rig,
            height_bins=BinSpec.from_dict(hb),
            depth_bins=BinSpec.from_dict(db),
            grid=GridSpec.from_dict(dict(DEFAULT_GRID, **(raw.get("grid") or {}))),
            feature_stride=int(raw.get("feature_stride", 16)),
            context_channels=int(raw.get("context_channels", 8)),
            residual_source=str(raw.get("residual_source", "height")),
            disturbance=dist,
            scene=_section(raw, "scene", SceneConfig),
            error_law=_section(raw, "error_law", ErrorLawConfig),
            histogram=_section(raw, "histogram", HistogramConfig),
            bench_repetitions=int(raw.get("bench_repetitions", 3)),
            seed=int(overrides.get("seed", raw.get("seed", 0))),
        )
    except InvalidSpec as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.residual_source not in ("height", "depth"):
        raise ConfigError("residual_source must be 'height' or 'depth'")
    if cfg.feature_stride < 1 or cfg.context_channels < 1:
        raise ConfigError("feature_stride and context_channels must be >= 1")
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({}, Path("."), overrides)
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {p} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {p} must be a mapping")
    cfg = config_from_dict(raw, p.parent, overrides)
    return replace(cfg, source_path=str(p))
