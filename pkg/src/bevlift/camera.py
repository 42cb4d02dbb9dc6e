"""Pinhole camera model and the coordinate frames used by the lifting code.

Frames
------
ego      x forward, y left, z up; the ground plane is z = 0.
camera   x right, y down, z along the optical axis (standard pinhole).
virtual  shares the camera origin; +y points straight down (gravity), +z is
         the horizontal component of the optical axis, x = y cross z.
image    u to the right, v down, in pixels.

Extrinsics are stored camera-from-ego: ``P_cam = R @ P_ego + t``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from .errors import BehindCamera, ConfigError, DegenerateOrientation, NonPositiveDepth

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-12
# optical axis closer than this to vertical leaves the virtual-frame yaw undefined
VERTICAL_AXIS_TOL_RAD = 1e-6
GROUND_HEIGHT_WARN_M = 0.01

EGO_UP = np.array([0.0, 0.0, 1.0])

# camera-from-ego rotation of a level camera looking along ego +x
LEVEL_CAMERA_FROM_EGO = np.array(
    [[0.0, -1.0, 0.0],
     [0.0, 0.0, -1.0],
     [1.0, 0.0, 0.0]]
)


class Pixel(NamedTuple):
    u: float
    v: float


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def rot_x(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        # closed form keeps the last row exactly (0, 0, 1)
        return np.array(
            [[1.0 / self.fx, 0.0, -self.cx / self.fx],
             [0.0, 1.0 / self.fy, -self.cy / self.fy],
             [0.0, 0.0, 1.0]]
        )

    @classmethod
    def identity(cls) -> "Intrinsics":
        return cls(1.0, 1.0, 0.0, 0.0)


def check_rotation(rotation: np.ndarray, tol: float = ORTHO_TOL) -> None:
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation has non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > tol:
        raise ValueError(f"rotation determinant is {det!r}, expected 1")


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Camera-from-ego rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError(f"translation must be a finite 3-vector, got {self.translation!r}")
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(t))

    @property
    def camera_center(self) -> np.ndarray:
        """Camera origin in ego coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def implied_ground_height(self) -> float:
        return float(self.camera_center[2])

    def ego_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def camera_to_ego(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation

    @classmethod
    def from_pose(cls, rotation_cam_from_ego: np.ndarray, camera_center_ego) -> "Extrinsics":
        r = np.asarray(rotation_cam_from_ego, dtype=np.float64)
        c = np.asarray(camera_center_ego, dtype=np.float64)
        return cls(r, -r @ c)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``y = rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


def build_virtual_frame(extrinsics: Extrinsics, ground_height: float) -> tuple[np.ndarray, RigidTransform]:
    """Return ``(cam_to_virtual, virtual_to_ego)`` for a camera.

    The virtual frame keeps the camera origin, points +y along gravity and
    fixes the remaining yaw by the horizontal part of the optical axis.
    ``ground_height`` does not enter the rotation; it is accepted so callers
    can validate the pair together.
    """
    if not ground_height > 0:
        raise ValueError(f"ground_height must be positive, got {ground_height}")
    r = extrinsics.rotation
    up_cam = r @ EGO_UP
    norm = np.linalg.norm(up_cam)
    if norm <= 1e-9:
        raise DegenerateOrientation("ego up-direction vanishes in the camera frame")
    down = -up_cam / norm
    optical = np.array([0.0, 0.0, 1.0])
    horizontal = optical - (optical @ down) * down
    h_norm = np.linalg.norm(horizontal)
    # |horizontal| = sin(angle between optical axis and vertical)
    if h_norm <= math.sin(VERTICAL_AXIS_TOL_RAD):
        raise DegenerateOrientation("camera optical axis is (nearly) vertical")
    forward = horizontal / h_norm
    right = np.cross(down, forward)
    cam_to_virtual = np.stack([right, down, forward])
    virtual_to_ego = RigidTransform(r.T @ cam_to_virtual.T, extrinsics.camera_center)
    return cam_to_virtual, virtual_to_ego


@dataclass(frozen=True, eq=False)
class CameraRig:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    ground_height: float | None = None
    image_size: tuple[int, int] | None = None  # (width, height)
    cam_to_virtual: np.ndarray = field(init=False, repr=False)
    virtual_to_ego: RigidTransform = field(init=False, repr=False)

    def __post_init__(self):
        implied = self.extrinsics.implied_ground_height
        if self.ground_height is None:
            object.__setattr__(self, "ground_height", implied)
        else:
            object.__setattr__(self, "ground_height", float(self.ground_height))
            if abs(self.ground_height - implied) > GROUND_HEIGHT_WARN_M:
                logger.warning(
                    "ground_height %.4f m disagrees with extrinsics-implied camera height %.4f m",
                    self.ground_height, implied,
                )
        if not self.ground_height > 0:
            raise ValueError(f"ground_height must be positive, got {self.ground_height}")
        if self.image_size is not None:
            w, h = (int(x) for x in self.image_size)
            object.__setattr__(self, "image_size", (w, h))
        cam_to_virtual, virtual_to_ego = build_virtual_frame(self.extrinsics, self.ground_height)
        object.__setattr__(self, "cam_to_virtual", _frozen(cam_to_virtual))
        object.__setattr__(self, "virtual_to_ego", virtual_to_ego)

    def with_extrinsics(self, extrinsics: Extrinsics) -> "CameraRig":
        return CameraRig(self.intrinsics, extrinsics, self.ground_height, self.image_size)

    def to_dict(self) -> dict:
        k, e = self.intrinsics, self.extrinsics
        d = {
            "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy},
            "extrinsics": {
                "rotation": [float(x) for x in e.rotation.ravel()],
                "translation": [float(x) for x in e.translation],
            },
            "ground_height": float(self.ground_height),
        }
        if self.image_size is not None:
            d["image_size"] = {"width": self.image_size[0], "height": self.image_size[1]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        try:
            k = d["intrinsics"]
            e = d["extrinsics"]
            intr = Intrinsics(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]))
            rot = np.array(e["rotation"], dtype=np.float64)
            if rot.size != 9:
                raise ConfigError("extrinsics.rotation needs 9 row-major values")
            ext = Extrinsics(rot.reshape(3, 3), np.array(e["translation"], dtype=np.float64))
            size = d.get("image_size")
            image_size = (int(size["width"]), int(size["height"])) if size else None
            gh = d.get("ground_height")
            return cls(intr, ext, None if gh is None else float(gh), image_size)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed calibration: {exc!r}") from exc
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid calibration: {exc}") from exc

    def fingerprint(self) -> str:
        """Short stable hash of the calibration, for output metadata."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def make_rig(
    height: float,
    pitch_deg: float = 0.0,
    yaw_deg: float = 0.0,
    roll_deg: float = 0.0,
    intrinsics: Intrinsics | None = None,
    image_size: tuple[int, int] | None = None,
    position_xy=(0.0, 0.0),
) -> CameraRig:
    """Rig for a camera at ``height`` m, yawed about ego z, pitched down by ``pitch_deg``."""
    r = (
        rot_z(math.radians(roll_deg))
        @ rot_x(math.radians(pitch_deg))
        @ LEVEL_CAMERA_FROM_EGO
        @ rot_z(math.radians(yaw_deg)).T
    )
    center = np.array([position_xy[0], position_xy[1], height], dtype=np.float64)
    ext = Extrinsics.from_pose(r, center)
    return CameraRig(intrinsics or Intrinsics.identity(), ext, float(height), image_size)


def back_project(rig: CameraRig, p: Pixel, depth: float) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    k = rig.intrinsics
    return np.array([depth * (p[0] - k.cx) / k.fx, depth * (p[1] - k.cy) / k.fy, float(depth)])


def back_project_many(rig: CameraRig, u, v, depth) -> np.ndarray:
    """Vectorised back-projection; returns an (..., 3) array."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise NonPositiveDepth("all depths must be positive")
    k = rig.intrinsics
    u, v, depth = np.broadcast_arrays(np.asarray(u, np.float64), np.asarray(v, np.float64), depth)
    return np.stack([depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth], axis=-1)


def project(rig: CameraRig, point_cam) -> tuple[Pixel, float]:
    x, y, z = (float(c) for c in point_cam)
    if not z > 0:
        raise BehindCamera(f"point has camera depth {z}")
    k = rig.intrinsics
    return Pixel(k.fx * x / z + k.cx, k.fy * y / z + k.cy), z


def project_many(rig: CameraRig, points_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project (N, 3) camera-frame points; returns ``(u, v, depth)``.

    Points with depth <= 0 get NaN pixel coordinates; callers mask them.
    """
    pts = np.asarray(points_cam, dtype=np.float64)
    z = pts[..., 2]
    k = rig.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = z > 0
        u = np.where(ok, k.fx * pts[..., 0] / z + k.cx, np.nan)
        v = np.where(ok, k.fy * pts[..., 1] / z + k.cy, np.nan)
    return u, v, z


def load_calibration(path: str | Path) -> CameraRig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read calibration {path}: {exc}") from exc
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError(f"calibration {path} is not a mapping")
    return CameraRig.from_dict(data)


def save_calibration(rig: CameraRig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(rig.to_dict(), sort_keys=True))
