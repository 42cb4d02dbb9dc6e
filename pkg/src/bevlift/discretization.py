"""Scalar-range binning for height and depth hypotheses.

Four layouts share one interface: uniform (UD), log-spaced (SID),
linearly increasing widths (LID) and the power-law dynamic-increasing
layout (DID) whose edges are ``v_min + span * (i / N) ** alpha``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, InvalidSpec


class Strategy(str, enum.Enum):
    UD = "ud"
    SID = "sid"
    LID = "lid"
    DID = "did"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidSpec(f"unknown discretization strategy {value!r}") from None


@dataclass(frozen=True, eq=False)
class BinSpec:
    strategy: Strategy
    v_min: float
    v_max: float
    n_bins: int
    alpha: float = 1.0
    sid_offset: float = 0.0
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        object.__setattr__(self, "v_min", float(self.v_min))
        object.__setattr__(self, "v_max", float(self.v_max))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "sid_offset", float(self.sid_offset))
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise InvalidSpec(f"n_bins must be a positive integer, got {self.n_bins}")
        object.__setattr__(self, "n_bins", int(self.n_bins))
        if not (math.isfinite(self.v_min) and math.isfinite(self.v_max) and self.v_max > self.v_min):
            raise InvalidSpec(f"need finite v_max > v_min, got [{self.v_min}, {self.v_max}]")
        if not self.alpha > 0:
            raise InvalidSpec(f"alpha must be positive, got {self.alpha}")
        if self.strategy is Strategy.SID and not self.v_min + self.sid_offset > 0:
            raise InvalidSpec("SID needs v_min + sid_offset > 0")
        edges = _edges(self)
        if not np.all(np.diff(edges) > 0):
            raise InvalidSpec("bin edges are not strictly increasing (alpha or n_bins too large)")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    def __eq__(self, other):
        if not isinstance(other, BinSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(tuple(self.to_dict().items()))

    @property
    def span(self) -> float:
        return self.v_max - self.v_min

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "v_min": self.v_min,
            "v_max": self.v_max,
            "n_bins": self.n_bins,
            "alpha": self.alpha,
            "sid_offset": self.sid_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinSpec":
        try:
            return cls(
                strategy=d["strategy"],
                v_min=d["v_min"],
                v_max=d["v_max"],
                n_bins=d["n_bins"],
                alpha=d.get("alpha", 1.0),
                sid_offset=d.get("sid_offset", 0.0),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"malformed bin spec {d!r}: {exc!r}") from exc


def _edges(spec: BinSpec) -> np.ndarray:
    n = spec.n_bins
    i = np.arange(n + 1, dtype=np.float64)
    s = spec.strategy
    if s is Strategy.UD:
        e = spec.v_min + spec.span * (i / n)
    elif s is Strategy.DID:
        e = spec.v_min + spec.span * (i / n) ** spec.alpha
    elif s is Strategy.LID:
        e = spec.v_min + spec.span * (i * (i + 1)) / (n * (n + 1))
    else:
        lo = math.log(spec.v_min + spec.sid_offset)
        hi = math.log(spec.v_max + spec.sid_offset)
        e = np.exp(lo + (hi - lo) * (i / n)) - spec.sid_offset
    e[0], e[-1] = spec.v_min, spec.v_max
    return e


def edge_table(spec: BinSpec) -> np.ndarray:
    """The ``n_bins + 1`` bin edges, strictly increasing, endpoints exact."""
    return spec.edges.copy()


def _raw_index(spec: BinSpec, v: np.ndarray) -> np.ndarray:
    n = spec.n_bins
    t = (v - spec.v_min) / spec.span
    t = np.clip(t, 0.0, 1.0)
    s = spec.strategy
    if s is Strategy.UD:
        x = n * t
    elif s is Strategy.DID:
        x = n * t ** (1.0 / spec.alpha)
    elif s is Strategy.LID:
        # largest i with i(i+1) <= t * n(n+1)
        x = (-1.0 + np.sqrt(1.0 + 4.0 * t * n * (n + 1))) / 2.0
    else:
        lo = math.log(spec.v_min + spec.sid_offset)
        hi = math.log(spec.v_max + spec.sid_offset)
        shifted = np.maximum(v + spec.sid_offset, spec.v_min + spec.sid_offset)
        x = n * (np.log(shifted) - lo) / (hi - lo)
    return np.floor(x)


def bin_index(spec: BinSpec, value):
    """Bin holding ``value``; out-of-range values clamp to the end bins.

    The closed-form index is reconciled against the edge table so that
    values sitting within rounding of an edge land in the bin whose
    half-open interval contains them.
    """
    v = np.asarray(value, dtype=np.float64)
    # NaN has no ordering; it goes to bin 0 so the function stays total
    raw = np.nan_to_num(_raw_index(spec, v), nan=0.0)
    idx = np.clip(raw, 0, spec.n_bins - 1).astype(np.int64)
    edges = spec.edges
    idx = np.where((v < edges[idx]) & (idx > 0), idx - 1, idx)
    idx = np.where((v >= edges[np.minimum(idx + 1, spec.n_bins)]) & (idx < spec.n_bins - 1), idx + 1, idx)
    if idx.ndim == 0:
        return int(idx)
    return idx


def bin_center(spec: BinSpec, index: int) -> float:
    if not 0 <= index < spec.n_bins:
        raise IndexOutOfRange(f"bin {index} outside [0, {spec.n_bins})")
    return float(0.5 * (spec.edges[index] + spec.edges[index + 1]))
