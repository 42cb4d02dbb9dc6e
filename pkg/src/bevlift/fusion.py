"""Image-view fusion, outer-product lifting and deformable-attention BEV fusion.

Forward computations only; all weights are supplied (loaded or seeded).
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bev_grid import BevGrid
from .errors import ShapeMismatch, SpecMismatch
from .maps import DistributionMap, FeatureMap, Role

BLOCK_CELLS = 4096


class ResidualSource(str, enum.Enum):
    HEIGHT_BEV = "height"
    DEPTH_BEV = "depth"


def image_view_fuse(context: FeatureMap, height_dist: DistributionMap) -> FeatureMap:
    """Channel concatenation of context features and the height distribution."""
    if context.spatial != height_dist.spatial:
        raise ShapeMismatch(f"context {context.spatial} vs distribution {height_dist.spatial}")
    return FeatureMap(np.concatenate([context.data, height_dist.data], axis=0), Role.FUSED)


def outer_product(fused: FeatureMap, dist: DistributionMap) -> np.ndarray:
    """``out[c, b, y, x] = fused[c, y, x] * dist[b, y, x]`` as float32."""
    if fused.spatial != dist.spatial:
        raise ShapeMismatch(f"fused {fused.spatial} vs distribution {dist.spatial}")
    return fused.data[:, None, :, :] * dist.data[None, :, :, :]


def _sample(grid: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (A, B, C) grid at continuous (a, b), clamped to the border.

    Integer coordinates are cell centres. ``a`` and ``b`` share any shape S;
    returns S + (C,).
    """
    na, nb = grid.shape[:2]
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, na - 1)
    b = np.clip(np.asarray(b, dtype=np.float64), 0.0, nb - 1)
    a0 = np.floor(a).astype(np.int64)
    b0 = np.floor(b).astype(np.int64)
    a1 = np.minimum(a0 + 1, na - 1)
    b1 = np.minimum(b0 + 1, nb - 1)
    fa = (a - a0)[..., None]
    fb = (b - b0)[..., None]
    g = grid.astype(np.float64, copy=False)
    top = g[a0, b0] * (1.0 - fb) + g[a0, b1] * fb
    bot = g[a1, b0] * (1.0 - fb) + g[a1, b1] * fb
    return top * (1.0 - fa) + bot * fa


def bilinear_sample(grid: FeatureMap, location) -> np.ndarray:
    """Sample a C x H x W map at continuous ``(x, y)`` (x along width)."""
    x, y = location
    hwc = np.moveaxis(grid.data, 0, -1)
    return _sample(hwc, y, x)


@dataclass(frozen=True, eq=False)
class DeformAttnWeights:
    """Parameters of a single-scale deformable attention block.

    Shapes, with D = C // M:
      value_proj  (M, D, C)   per-head W'_m, maps C -> D
      output_proj (M, C, D)   per-head W_m,  maps D -> C
      offset_w    (M*K*2, C), offset_b (M*K*2,)   query -> (dx, dy) per head/key
      attn_w      (M*K, C),   attn_b   (M*K,)     query -> logits per head/key
      query_proj  (C, 2C),    query_b  (C,)       BEV-fusion query from [height; depth]
    """

    heads: int
    keys: int
    channels: int
    value_proj: np.ndarray
    output_proj: np.ndarray
    offset_w: np.ndarray
    offset_b: np.ndarray
    attn_w: np.ndarray
    attn_b: np.ndarray
    query_proj: np.ndarray
    query_b: np.ndarray

    PARAMS = ("value_proj", "output_proj", "offset_w", "offset_b", "attn_w", "attn_b",
              "query_proj", "query_b")

    def __post_init__(self):
        m, k, c = self.heads, self.keys, self.channels
        if m < 1 or k < 1 or c < 1 or c % m:
            raise ShapeMismatch(f"need C divisible by M, got C={c}, M={m}, K={k}")
        d = c // m
        want = {
            "value_proj": (m, d, c), "output_proj": (m, c, d),
            "offset_w": (m * k * 2, c), "offset_b": (m * k * 2,),
            "attn_w": (m * k, c), "attn_b": (m * k,),
            "query_proj": (c, 2 * c), "query_b": (c,),
        }
        for name, shape in want.items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def effective_matrix(self) -> np.ndarray:
        """sum_m W_m W'_m: the map applied to a spatially constant value field."""
        return np.einsum("mcd,mde->ce", self.output_proj, self.value_proj)

    @classmethod
    def zeros(cls, channels: int, heads: int = 1, keys: int = 1) -> "DeformAttnWeights":
        d = channels // heads
        return cls(heads, keys, channels,
                   np.zeros((heads, d, channels)), np.zeros((heads, channels, d)),
                   np.zeros((heads * keys * 2, channels)), np.zeros(heads * keys * 2),
                   np.zeros((heads * keys, channels)), np.zeros(heads * keys),
                   np.zeros((channels, 2 * channels)), np.zeros(channels))

    @classmethod
    def random(cls, channels: int, heads: int = 2, keys: int = 4, seed: int = 0,
               offset_scale: float = 2.0) -> "DeformAttnWeights":
        """Seeded non-degenerate weights for tests and demos."""
        rng = np.random.default_rng(seed)
        d = channels // heads
        s = 1.0 / np.sqrt(channels)
        return cls(heads, keys, channels,
                   rng.normal(0, s, (heads, d, channels)), rng.normal(0, 1 / np.sqrt(max(d, 1)), (heads, channels, d)),
                   rng.normal(0, s * offset_scale, (heads * keys * 2, channels)),
                   rng.normal(0, offset_scale, heads * keys * 2),
                   rng.normal(0, s, (heads * keys, channels)), rng.normal(0, 1.0, heads * keys),
                   rng.normal(0, 1 / np.sqrt(2 * channels), (channels, 2 * channels)),
                   rng.normal(0, 0.1, channels))

    def attention(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Offsets (P, M, K, 2) and softmax weights (P, M, K) for (P, C) queries."""
        q = np.asarray(queries, dtype=np.float64)
        p = q.shape[0]
        offsets = (q @ self.offset_w.T + self.offset_b).reshape(p, self.heads, self.keys, 2)
        logits = (q @ self.attn_w.T + self.attn_b).reshape(p, self.heads, self.keys)
        logits = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return offsets, e / e.sum(axis=-1, keepdims=True)


def _deform_attn_batch(queries: np.ndarray, points: np.ndarray, value: np.ndarray,
                       w: DeformAttnWeights, rows_are_y: bool = False) -> np.ndarray:
    """Batched deformable attention.

    queries (P, C); points (P, 2) as (x, y); value (A, B, C). Offsets are
    (dx, dy). By default x runs along the value grid's first axis (BEV
    layout); with ``rows_are_y`` the first axis is y (image layout).
    Returns (P, C).
    """
    offsets, attn = w.attention(queries)
    loc = points[:, None, None, :] + offsets  # (P, M, K, 2)
    if rows_are_y:
        sampled = _sample(value, loc[..., 1], loc[..., 0])
    else:
        sampled = _sample(value, loc[..., 0], loc[..., 1])  # (P, M, K, C)
    projected = np.einsum("mdc,pmkc->pmkd", w.value_proj, sampled)
    pooled = np.einsum("pmk,pmkd->pmd", attn, projected)
    return np.einsum("mcd,pmd->pc", w.output_proj, pooled)


def deform_attn(query, p, value: FeatureMap, w: DeformAttnWeights) -> np.ndarray:
    """Deformable attention of one query at reference point ``p = (x, y)`` over a C x H x W map."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (w.channels,) or value.channels != w.channels:
        raise ShapeMismatch(f"query {q.shape} / value channels {value.channels} vs C={w.channels}")
    hwc = np.moveaxis(value.data, 0, -1)
    pt = np.array([[float(p[0]), float(p[1])]])
    return _deform_attn_batch(q[None], pt, hwc, w, rows_are_y=True)[0]


def bev_queries(height_bev: BevGrid, depth_bev: BevGrid, w: DeformAttnWeights) -> np.ndarray:
    """Per-cell queries: linear projection of the concatenated grids, (X*Y, C)."""
    cat = np.concatenate([height_bev.data, depth_bev.data], axis=-1).reshape(-1, 2 * w.channels)
    return cat @ w.query_proj.T + w.query_b


def bev_fuse(height_bev: BevGrid, depth_bev: BevGrid, w: DeformAttnWeights,
             residual_source: ResidualSource | str = ResidualSource.HEIGHT_BEV,
             threads: int = 1) -> BevGrid:
    """Residual plus deformable attention over both BEV grids, per cell.

    Grid offsets are in cell units along (x-axis, y-axis) of the grid.
    """
    residual_source = ResidualSource(residual_source)
    if height_bev.spec != depth_bev.spec:
        raise SpecMismatch("height and depth BEV grids have different specs")
    if height_bev.channels != w.channels or depth_bev.channels != w.channels:
        raise SpecMismatch(f"BEV channels {height_bev.channels}/{depth_bev.channels} vs C={w.channels}")
    nx, ny = height_bev.spec.shape
    c = w.channels
    residual = (height_bev if residual_source is ResidualSource.HEIGHT_BEV else depth_bev).data
    queries = bev_queries(height_bev, depth_bev, w)
    ia, ib = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    points = np.stack([ia.ravel(), ib.ravel()], axis=1).astype(np.float64)
    n = nx * ny
    starts = range(0, n, BLOCK_CELLS)

    def run(s):
        sl = slice(s, min(s + BLOCK_CELLS, n))
        return (_deform_attn_batch(queries[sl], points[sl], height_bev.data, w)
                + _deform_attn_batch(queries[sl], points[sl], depth_bev.data, w))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    attn = np.concatenate(parts, axis=0).reshape(nx, ny, c)
    out = residual + attn
    return BevGrid(
        spec=height_bev.spec,
        data=out,
        occupancy=np.maximum(height_bev.occupancy, depth_bev.occupancy),
        metadata={"fused": True, "residual_source": residual_source.value,
                  "heads": w.heads, "keys": w.keys, "channels": c},
    )
