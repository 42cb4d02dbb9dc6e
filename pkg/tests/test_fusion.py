import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevlift.bev_grid import BevGrid, GridSpec
from bevlift.errors import ShapeMismatch, SpecMismatch
from bevlift.fusion import (DeformAttnWeights, bev_fuse, bilinear_sample, deform_attn, image_view_fuse,
                            outer_product)
from bevlift.maps import DistributionMap, FeatureMap

SPEC = GridSpec(0, 6, 0, 4, 1.0)


def grid(data, spec=SPEC):
    data = np.asarray(data, dtype=np.float64)
    return BevGrid(spec, data, np.ones(spec.shape, dtype=np.int64))


def random_dist(rng, b, h, w):
    p = rng.random((b, h, w)) + 1e-3
    return DistributionMap(p / p.sum(axis=0))


def identity_weights(c):
    w = DeformAttnWeights.zeros(c, 1, 1)
    return DeformAttnWeights(1, 1, c, np.eye(c)[None], np.eye(c)[None], w.offset_w, w.offset_b, w.attn_w, w.attn_b,
                             w.query_proj, w.query_b)


class TestImageViewFuse:
    def test_example(self):
        ctx = FeatureMap(np.array([5.0, 6.0]).reshape(2, 1, 1))
        d = DistributionMap(np.array([0.2, 0.3, 0.5]).reshape(3, 1, 1))
        out = image_view_fuse(ctx, d)
        np.testing.assert_array_equal(out.data.ravel(), np.float32([5, 6, 0.2, 0.3, 0.5]))

    def test_context_preserved_bitwise(self, rng):
        ctx = FeatureMap(rng.normal(size=(4, 5, 7)))
        d = random_dist(rng, 6, 5, 7)
        out = image_view_fuse(ctx, d)
        assert out.channels == 10
        assert np.array_equal(out.data[:4], ctx.data) and np.array_equal(out.data[4:], d.data)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            image_view_fuse(FeatureMap(np.zeros((1, 2, 2))), random_dist(rng, 3, 2, 3))


class TestOuterProduct:
    def test_example(self):
        out = outer_product(FeatureMap(np.full((1, 1, 1), 2.0)), DistributionMap(np.array([0.25, 0.75]).reshape(2, 1, 1)))
        np.testing.assert_array_equal(out.ravel(), [0.5, 1.5])

    def test_marginalisation(self, rng):
        fused = image_view_fuse(FeatureMap(rng.normal(size=(3, 6, 5))), random_dist(rng, 4, 6, 5))
        out = outer_product(fused, random_dist(rng, 9, 6, 5))
        assert out.shape == (7, 9, 6, 5)
        np.testing.assert_allclose(out.sum(axis=1), fused.data, atol=1e-6)

    def test_one_hot(self, rng):
        fused = FeatureMap(rng.normal(size=(2, 3, 3)))
        out = outer_product(fused, DistributionMap.one_hot(np.full((3, 3), 3), 5))
        assert np.all(out[:, [0, 1, 2, 4]] == 0)
        assert np.array_equal(out[:, 3], fused.data)


class TestBilinear:
    VALUES = FeatureMap(np.array([[0.0, 1.0], [2.0, 3.0]])[None])

    def test_centre_average(self):
        assert bilinear_sample(self.VALUES, (0.5, 0.5))[0] == 1.5

    @pytest.mark.parametrize("x,y,want", [(0, 0, 0), (1, 0, 1), (0, 1, 2), (1, 1, 3)])
    def test_cell_centres_exact(self, x, y, want):
        assert bilinear_sample(self.VALUES, (x, y))[0] == want

    def test_border_clamp(self):
        assert bilinear_sample(self.VALUES, (-5, -5))[0] == 0
        assert bilinear_sample(self.VALUES, (9, 9))[0] == 3

    def test_cell_value_bitwise(self, rng):
        fm = FeatureMap(rng.normal(size=(3, 4, 6)))
        np.testing.assert_array_equal(bilinear_sample(fm, (4, 2)), fm.data[:, 2, 4])


class TestDeformAttn:
    def test_collapses_to_sampling(self, rng):
        fm = FeatureMap(rng.normal(size=(3, 5, 5)))
        w = identity_weights(3)
        out = deform_attn(rng.normal(size=3), (1.25, 2.5), fm, w)
        np.testing.assert_allclose(out, bilinear_sample(fm, (1.25, 2.5)), atol=1e-7)

    def test_constant_field(self, rng):
        w = DeformAttnWeights.random(8, heads=2, keys=4, seed=3)
        c = rng.normal(size=8)
        fm = FeatureMap(np.broadcast_to(c[:, None, None], (8, 6, 6)).copy())
        c32 = fm.data[:, 0, 0].astype(np.float64)
        out = deform_attn(rng.normal(size=8), (2.3, 3.1), fm, w)
        np.testing.assert_allclose(out, w.effective_matrix() @ c32, atol=1e-6)

    def test_linearity(self, rng):
        w = DeformAttnWeights.random(6, heads=3, keys=2, seed=11)
        q = rng.normal(size=6)
        v1, v2 = rng.normal(size=(6, 7, 7)), rng.normal(size=(6, 7, 7))
        a, b = 0.7, -1.3
        fm1, fm2 = FeatureMap(v1), FeatureMap(v2)
        combo = FeatureMap(a * fm1.data.astype(np.float64) + b * fm2.data.astype(np.float64))
        lhs = deform_attn(q, (3, 3), combo, w)
        rhs = a * deform_attn(q, (3, 3), fm1, w) + b * deform_attn(q, (3, 3), fm2, w)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-6)

    def test_translation_consistent(self, rng):
        w = DeformAttnWeights.random(4, heads=2, keys=3, seed=5, offset_scale=0.3)
        base = rng.normal(size=(4, 20, 20))
        dx, dy = 3, 2
        shifted = np.zeros_like(base)
        shifted[:, dy:, dx:] = base[:, :20 - dy, :20 - dx]
        q = rng.normal(size=4) * 0.3
        a = deform_attn(q, (8.4, 7.7), FeatureMap(base), w)
        b = deform_attn(q, (8.4 + dx, 7.7 + dy), FeatureMap(shifted), w)
        np.testing.assert_allclose(a, b, atol=1e-7)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
    def test_softmax_normalised(self, heads, keys, d, seed):
        w = DeformAttnWeights.random(heads * d, heads, keys, seed=seed)
        q = np.random.default_rng(seed).normal(0, 10, (50, heads * d))
        offsets, attn = w.attention(q)
        assert offsets.shape == (50, heads, keys, 2)
        assert np.all(attn >= 0)
        assert np.abs(attn.sum(axis=-1) - 1).max() <= 1e-7

    def test_shape_checks(self):
        with pytest.raises(ShapeMismatch):
            DeformAttnWeights.zeros(5, heads=2)
        w = DeformAttnWeights.zeros(4, 2, 1)
        with pytest.raises(ShapeMismatch):
            deform_attn(np.zeros(3), (0, 0), FeatureMap(np.zeros((4, 2, 2))), w)
        with pytest.raises(ShapeMismatch):
            DeformAttnWeights(1, 1, 2, np.zeros((1, 1, 2)), np.zeros((1, 2, 2)), np.zeros((2, 2)), np.zeros(2),
                              np.zeros((1, 2)), np.zeros(1), np.zeros((2, 4)), np.zeros(2))


class TestBevFuse:
    @pytest.mark.parametrize("source", ["height", "depth"])
    def test_zero_weights_give_residual(self, rng, source):
        h, d = grid(rng.normal(size=(6, 4, 4))), grid(rng.normal(size=(6, 4, 4)))
        out = bev_fuse(h, d, DeformAttnWeights.zeros(4, 2, 3), source)
        assert np.array_equal(out.data, (h if source == "height" else d).data)

    def test_constant_fields(self, rng):
        w = DeformAttnWeights.random(4, 2, 3, seed=1)
        c = rng.normal(size=4)
        field = np.broadcast_to(c, (6, 4, 4)).copy()
        out = bev_fuse(grid(field), grid(field), w)
        want = c + 2 * w.effective_matrix() @ c
        np.testing.assert_allclose(out.data.reshape(-1, 4), np.broadcast_to(want, (24, 4)), atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 1000))
    def test_shape_preserved(self, nx, ny, seed):
        spec = GridSpec(0, nx, 0, ny, 1.0)
        rng = np.random.default_rng(seed)
        w = DeformAttnWeights.random(4, 2, 2, seed=seed)
        out = bev_fuse(grid(rng.normal(size=(nx, ny, 4)), spec), grid(rng.normal(size=(nx, ny, 4)), spec), w)
        assert out.data.shape == (nx, ny, 4) and out.spec == spec

    def test_threads_bitwise(self, rng, monkeypatch):
        import bevlift.fusion as fusion

        monkeypatch.setattr(fusion, "BLOCK_CELLS", 5)
        w = DeformAttnWeights.random(4, 2, 2, seed=9)
        h, d = grid(rng.normal(size=(6, 4, 4))), grid(rng.normal(size=(6, 4, 4)))
        assert np.array_equal(bev_fuse(h, d, w, threads=1).data, bev_fuse(h, d, w, threads=4).data)

    def test_spec_mismatch(self, rng):
        w = DeformAttnWeights.zeros(4)
        h = grid(rng.normal(size=(6, 4, 4)))
        other = grid(rng.normal(size=(3, 4, 4)), GridSpec(0, 3, 0, 4, 1.0))
        with pytest.raises(SpecMismatch):
            bev_fuse(h, other, w)
        with pytest.raises(SpecMismatch):
            bev_fuse(h, h, DeformAttnWeights.zeros(2))
