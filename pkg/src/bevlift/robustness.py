"""Extrinsic disturbance simulation and clean-vs-noisy association analysis.

A disturbance is a roll (about camera z) and pitch (about camera x) rotation
applied about the camera centre: ``R' = R_pitch @ R_roll @ R`` and
``t' = R_pitch @ R_roll @ t``, which leaves the mounting point fixed in ego
coordinates and makes the image-space effect an exact homography.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .camera import CameraRig, Extrinsics, project_many, rot_x, rot_z
from .errors import NoVisibleObjects

DEFAULT_SIGMA_DEG = 1.67


@dataclass(frozen=True)
class Disturbance:
    roll_deg: float
    pitch_deg: float
    seed: int = 0
    sigma_deg: float = DEFAULT_SIGMA_DEG

    def __post_init__(self):
        if not (math.isfinite(self.roll_deg) and math.isfinite(self.pitch_deg)):
            raise ValueError("disturbance angles must be finite")

    @property
    def is_zero(self) -> bool:
        return self.roll_deg == 0 and self.pitch_deg == 0

    def inverse(self) -> "Disturbance":
        return Disturbance(-self.roll_deg, -self.pitch_deg, self.seed, self.sigma_deg)

    def scaled(self, sigma_deg: float) -> "Disturbance":
        """Same standard-normal draw at a different sigma."""
        k = sigma_deg / self.sigma_deg if self.sigma_deg else 0.0
        return Disturbance(self.roll_deg * k, self.pitch_deg * k, self.seed, sigma_deg)


def sample_disturbance(sigma_deg: float = DEFAULT_SIGMA_DEG, seed: int = 0) -> Disturbance:
    """Roll and pitch drawn independently from N(0, sigma^2) degrees."""
    if sigma_deg < 0:
        raise ValueError("sigma must be >= 0")
    roll, pitch = np.random.default_rng(seed).normal(0.0, 1.0, 2) * sigma_deg
    return Disturbance(float(roll), float(pitch), seed, sigma_deg)


def sample_angles(sigma_deg: float, seed: int, n: int) -> np.ndarray:
    """(n, 2) roll/pitch draws in degrees, for statistics over many disturbances."""
    if sigma_deg < 0:
        raise ValueError("sigma must be >= 0")
    return np.random.default_rng(seed).normal(0.0, 1.0, (n, 2)) * sigma_deg


def disturbance_rotation(d: Disturbance) -> np.ndarray:
    return rot_x(math.radians(d.pitch_deg)) @ rot_z(math.radians(d.roll_deg))


def apply_disturbance(rig: CameraRig, d: Disturbance, inverse: bool = False) -> CameraRig:
    """Rotate the camera about its centre. ``inverse`` applies R_d^T, undoing ``d``."""
    if d.is_zero:
        return rig
    r_d = disturbance_rotation(d)
    if inverse:
        r_d = r_d.T
    e = rig.extrinsics
    return rig.with_extrinsics(Extrinsics(r_d @ e.rotation, r_d @ e.translation))


def warp_homography(rig: CameraRig, d: Disturbance) -> np.ndarray:
    """Homography taking clean pixel coordinates to disturbed ones: K R_d K^-1."""
    if d.is_zero:
        return np.eye(3)
    k = rig.intrinsics
    return k.matrix @ disturbance_rotation(d) @ k.inverse


def warp_pixels(h: np.ndarray, u, v) -> tuple[np.ndarray, np.ndarray]:
    pts = np.stack([np.asarray(u, np.float64), np.asarray(v, np.float64), np.ones(np.shape(u))], -1)
    out = pts @ h.T
    return out[..., 0] / out[..., 2], out[..., 1] / out[..., 2]


class Condition(str, enum.Enum):
    CLEAN = "clean"
    NOISY = "noisy"


@dataclass(frozen=True, eq=False)
class ScatterSet:
    """Per-object (v, depth, height) under both conditions, aligned by index."""

    object_ids: np.ndarray
    v: dict  # Condition -> (n,) rows
    depth: dict
    height: dict

    def rows(self):
        for cond in (Condition.CLEAN, Condition.NOISY):
            for i, oid in enumerate(self.object_ids):
                yield int(oid), cond.value, float(self.v[cond][i]), float(self.depth[cond][i]), float(self.height[cond][i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["object_id", "condition", "v", "depth", "height"])
        for oid, cond, v, d, h in self.rows():
            w.writerow([oid, cond, repr(v), repr(d), repr(h)])
        return buf.getvalue()


def association(v_ref: np.ndarray, q_ref: np.ndarray):
    """Piecewise-linear map from image row to quantity, fitted on reference samples.

    Duplicate rows are averaged; queries outside the sampled rows clamp.
    """
    rows, inv = np.unique(v_ref, return_inverse=True)
    vals = np.bincount(inv, weights=q_ref) / np.bincount(inv)
    return lambda v: np.interp(v, rows, vals)


def association_report(v_clean, q_clean, v_noisy, q_noisy) -> dict:
    """Compare the clean and noisy (v, q) samples of one quantity.

    The residual of each sample against the clean row->quantity association
    captures how well the clean pairing still explains the noisy one; the
    1-Wasserstein distance between clean and noisy residuals is the overlap
    measure.
    """
    assoc = association(v_clean, q_clean)
    r_clean = q_clean - assoc(v_clean)
    r_noisy = q_noisy - assoc(v_noisy)
    return {
        "mean_abs_shift": float(np.mean(np.abs(q_noisy - q_clean))),
        "mean_association_shift": float(np.mean(np.abs(r_noisy - r_clean))),
        "wasserstein": float(wasserstein_distance(r_clean, r_noisy)),
    }


def object_observations(centers: np.ndarray, rig: CameraRig):
    """Image row, camera depth and visibility for (n, 3) ego-frame points."""
    cam = rig.extrinsics.ego_to_camera(centers)
    u, v, z = project_many(rig, cam)
    visible = z > 0
    if rig.image_size is not None:
        w, h = rig.image_size
        with np.errstate(invalid="ignore"):
            visible &= (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    return v, z, visible


def scatter_analysis(scene, rig: CameraRig, d: Disturbance) -> tuple[ScatterSet, dict]:
    """Record every object's centre under the clean and disturbed rig and compare.

    ``scene`` needs a ``boxes`` sequence with ``x, y, z`` centres.
    """
    centers = np.array([[b.x, b.y, b.z] for b in scene.boxes], dtype=np.float64).reshape(-1, 3)
    noisy_rig = apply_disturbance(rig, d)
    v_c, z_c, vis_c = object_observations(centers, rig)
    v_n, z_n, vis_n = object_observations(centers, noisy_rig)
    keep = vis_c & vis_n
    if keep.sum() < 2:
        raise NoVisibleObjects(f"only {int(keep.sum())} objects visible in both conditions")
    ids = np.flatnonzero(keep)
    heights = centers[keep, 2]
    scatter = ScatterSet(
        object_ids=ids,
        v={Condition.CLEAN: v_c[keep], Condition.NOISY: v_n[keep]},
        depth={Condition.CLEAN: z_c[keep], Condition.NOISY: z_n[keep]},
        height={Condition.CLEAN: heights, Condition.NOISY: heights.copy()},
    )
    report = {
        "disturbance": {"roll_deg": d.roll_deg, "pitch_deg": d.pitch_deg, "seed": d.seed,
                        "sigma_deg": d.sigma_deg},
        "objects": int(keep.sum()),
        "mean_abs_v_shift": float(np.mean(np.abs(v_n[keep] - v_c[keep]))),
        "depth": association_report(v_c[keep], z_c[keep], v_n[keep], z_n[keep]),
        "height": association_report(v_c[keep], heights, v_n[keep], heights),
    }
    return scatter, report


def disturbance_sweep(scene, rig: CameraRig, sigma_deg: float, seeds) -> dict:
    """Mean overlap statistics over one disturbance per seed."""
    seeds = [int(s) for s in seeds]
    acc = {q: {"wasserstein": [], "mean_association_shift": [], "mean_abs_shift": []}
           for q in ("depth", "height")}
    for s in seeds:
        _, rep = scatter_analysis(scene, rig, sample_disturbance(sigma_deg, s))
        for q in acc:
            for k in acc[q]:
                acc[q][k].append(rep[q][k])
    return {
        "sigma_deg": sigma_deg,
        "seeds": len(seeds),
        **{q: {k: float(np.mean(vals)) for k, vals in acc[q].items()} for q in acc},
    }
