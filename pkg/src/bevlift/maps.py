"""Dense per-pixel feature and distribution grids (channel-first)."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

logger = logging.getLogger(__name__)

DIST_SUM_TOL = 1e-6
DIST_WARN_TOL = 1e-4


class Role(str, enum.Enum):
    CONTEXT = "context"
    FUSED = "fused"
    BEV = "bev"


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """C x H' x W' float32 feature grid."""

    data: np.ndarray
    role: Role = Role.CONTEXT

    def __post_init__(self):
        a = np.ascontiguousarray(self.data, dtype=np.float32)
        if a.ndim != 3 or min(a.shape) <= 0:
            raise ShapeMismatch(f"feature map must be C x H x W with positive dims, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("feature map has non-finite values")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)
        object.__setattr__(self, "role", Role(self.role))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True, eq=False)
class DistributionMap:
    """B x H' x W' per-pixel categorical distribution over bins.

    Rows that do not sum to one are renormalised on construction; a warning
    is logged when the deviation exceeds ``DIST_WARN_TOL``.
    """

    data: np.ndarray

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64)
        if a.ndim != 3 or min(a.shape) <= 0:
            raise ShapeMismatch(f"distribution map must be B x H x W with positive dims, got {a.shape}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("distribution map must be finite and nonnegative")
        sums = a.sum(axis=0)
        if np.any(sums <= 0):
            raise ValueError("distribution map has pixels with zero total mass")
        dev = float(np.abs(sums - 1.0).max())
        out = a.astype(np.float32)
        if dev > DIST_SUM_TOL:
            if dev > DIST_WARN_TOL:
                logger.warning("distribution rows off by up to %.3e; renormalising", dev)
            out = (a / sums).astype(np.float32)
        out.setflags(write=False)
        object.__setattr__(self, "data", out)

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    @classmethod
    def one_hot(cls, indices: np.ndarray, n_bins: int) -> "DistributionMap":
        idx = np.asarray(indices, dtype=np.int64)
        out = np.zeros((n_bins,) + idx.shape, dtype=np.float32)
        np.put_along_axis(out, idx[None], 1.0, axis=0)
        return cls(out)

    @classmethod
    def uniform(cls, n_bins: int, height: int, width: int) -> "DistributionMap":
        return cls(np.full((n_bins, height, width), 1.0 / n_bins))
