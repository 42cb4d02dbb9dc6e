import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevlift.bev_grid import GridSpec, lift_pool, voxel_pool
from bevlift.camera import CameraRig, Extrinsics, Intrinsics, LEVEL_CAMERA_FROM_EGO, Pixel, make_rig, project
from bevlift.discretization import BinSpec
from bevlift.errors import AboveCamera, HorizonRay, NonPositiveDepth, ShapeMismatch
from bevlift.lifting import (LiftConfig, Source, cell_to_pixel, lift_height_many, lift_height_virtual, lift_map,
                             lift_pixel_depth, lift_pixel_height)
from bevlift.maps import DistributionMap, FeatureMap

from conftest import random_rig, ray_plane_oracle, rigs

HEIGHT_BINS = BinSpec("did", -1, 1, 90, alpha=2.0)
DEPTH_BINS = BinSpec("ud", 1, 104, 206)


def level_rig(height=5.0, k=None):
    ext = Extrinsics(LEVEL_CAMERA_FROM_EGO, -LEVEL_CAMERA_FROM_EGO @ np.array([0.0, 0.0, height]))
    return CameraRig(k or Intrinsics.identity(), ext, height)


def steep_rig():
    # every pixel of a small map looks below the horizon
    return make_rig(5.0, 35.0, intrinsics=Intrinsics(100, 100, 32, 32), image_size=(64, 64))


def rand_maps(rng, c, b, h, w):
    feats = FeatureMap(rng.normal(size=(c, h, w)))
    p = rng.random((b, h, w)) + 0.01
    return feats, DistributionMap(p / p.sum(axis=0))


class TestHeightLift:
    def test_ray_plane_example(self):
        rig = level_rig()
        np.testing.assert_allclose(lift_height_virtual(rig, Pixel(0, 0.5), 0.0), [0, 5, 10], atol=1e-12)
        np.testing.assert_allclose(lift_height_virtual(rig, Pixel(0, 0.5), 1.0), [0, 4, 8], atol=1e-12)

    def test_ego_coordinates_of_example(self):
        np.testing.assert_allclose(lift_pixel_height(level_rig(), Pixel(0, 0.5), 0.0), [10, 0, 0], atol=1e-12)

    def test_collapse_towards_camera(self):
        rig = level_rig()
        with pytest.raises(AboveCamera):
            lift_pixel_height(rig, Pixel(0, 0.5), 5.0)
        near = lift_pixel_height(rig, Pixel(0, 0.5), 5.0 - 2e-3)
        assert np.linalg.norm(near - rig.extrinsics.camera_center) < 0.01

    @pytest.mark.parametrize("v", [0.0, -0.5, 5e-7])
    def test_horizon_ray(self, v):
        with pytest.raises(HorizonRay):
            lift_pixel_height(level_rig(), Pixel(0, v), 0.0)

    def test_accepts_lift_config(self):
        cfg = LiftConfig(level_rig(), HEIGHT_BINS, 1)
        np.testing.assert_array_equal(lift_pixel_height(cfg, Pixel(0, 0.5), 0.0),
                                      lift_pixel_height(cfg.rig, Pixel(0, 0.5), 0.0))

    def test_ray_plane_oracle_random(self, rng):
        checked = 0
        while checked < 2000:
            rig = random_rig(rng)
            u, v = rng.uniform(-200, 1500), rng.uniform(-200, 1200)
            h = rng.uniform(-2, rig.ground_height - 0.01)
            try:
                got = lift_pixel_height(rig, Pixel(u, v), h)
            except HorizonRay:
                continue
            want = ray_plane_oracle(rig, u, v, h)
            assert np.linalg.norm(got - want) <= 1e-9 * (1 + np.linalg.norm(want))
            checked += 1

    @settings(max_examples=300, deadline=None)
    @given(rigs(), st.floats(-500, 2500), st.floats(-500, 2500), st.floats(-3, 0.999))
    def test_exact_height_and_colinear(self, rig, u, v, frac):
        h = frac * rig.ground_height if frac > 0 else frac
        try:
            p = lift_pixel_height(rig, Pixel(u, v), h)
        except (HorizonRay, AboveCamera):
            return
        assert abs(p[2] - h) <= 1e-9 * max(1.0, np.linalg.norm(p)) + 1e-9
        e, k = rig.extrinsics, rig.intrinsics
        ray = e.rotation.T @ (k.inverse @ np.array([u, v, 1.0]))
        ray /= np.linalg.norm(ray)
        off = p - e.camera_center
        assert np.linalg.norm(np.cross(off, ray)) <= 1e-9 * max(1.0, np.linalg.norm(off))
        assert off @ ray > 0

    def test_depth_height_agreement(self, rng):
        for _ in range(500):
            rig = random_rig(rng)
            u, v, h = rng.uniform(0, 1000), rng.uniform(0, 800), rng.uniform(-1, 2)
            try:
                p = lift_pixel_height(rig, Pixel(u, v), h)
            except (HorizonRay, AboveCamera):
                continue
            d = rig.extrinsics.ego_to_camera(p)[2]
            q = lift_pixel_depth(rig, Pixel(u, v), d)
            assert np.linalg.norm(p - q) <= 1e-9 * (1 + np.linalg.norm(p))

    def test_monotone_range(self, rng):
        rig = make_rig(5.0, 20.0, intrinsics=Intrinsics(1000, 1000, 960, 540))
        foot = rig.extrinsics.camera_center[:2]
        for _ in range(100):
            px = Pixel(rng.uniform(0, 1920), rng.uniform(600, 1080))
            hs = np.sort(rng.uniform(-1, 4.5, 10))
            r = [np.linalg.norm(lift_pixel_height(rig, px, h)[:2] - foot) for h in hs]
            assert np.all(np.diff(r) < 0)

    def test_vectorised_marks_invalid(self):
        pts, ok = lift_height_many(level_rig(), np.array([0.0, 0.0]), np.array([0.5, -0.5]), 0.0)
        assert ok.tolist() == [True, False]
        assert np.isnan(pts[1]).all() and np.allclose(pts[0], [10, 0, 0])


class TestDepthLift:
    def test_identity(self):
        np.testing.assert_allclose(lift_pixel_depth(level_rig(), Pixel(0, 0), 7.0), [7, 0, 5], atol=1e-12)

    def test_hand_example(self):
        rig = level_rig()
        p = lift_pixel_depth(rig, Pixel(0.5, 0), 4.0)
        np.testing.assert_allclose(rig.extrinsics.ego_to_camera(p), [2, 0, 4], atol=1e-12)

    @pytest.mark.parametrize("d", [0.0, -2.0])
    def test_non_positive(self, d):
        with pytest.raises(NonPositiveDepth):
            lift_pixel_depth(level_rig(), Pixel(0, 0), d)

    @settings(max_examples=200, deadline=None)
    @given(rigs(), st.floats(-500, 2500), st.floats(-500, 2500), st.floats(0.01, 500))
    def test_projects_back(self, rig, u, v, d):
        p = lift_pixel_depth(rig, Pixel(u, v), d)
        px, z = project(rig, rig.extrinsics.ego_to_camera(p))
        assert px.u == pytest.approx(u, rel=1e-9, abs=1e-7)
        assert px.v == pytest.approx(v, rel=1e-9, abs=1e-7)
        assert z == pytest.approx(d, rel=1e-12)


class TestLiftMap:
    def test_two_bins_one_cell(self):
        cfg = LiftConfig(steep_rig(), BinSpec("ud", -1, 1, 2), 1)
        vol = lift_map(cfg, FeatureMap(np.full((1, 1, 1), 3.0)), DistributionMap(np.array([1.0, 0.0]).reshape(2, 1, 1)))
        assert len(vol) == 2
        np.testing.assert_array_equal(vol.features[:, 0], [3.0, 0.0])
        np.testing.assert_allclose(vol.positions[:, 2], [-0.5, 0.5], atol=1e-12)

    def test_count_law(self, rng):
        cfg = LiftConfig(steep_rig(), HEIGHT_BINS, 16)
        f, d = rand_maps(rng, 3, 90, 4, 4)
        vol = lift_map(cfg, f, d)
        assert len(vol) == 4 * 4 * 90 and vol.dropped_rays == 0

    def test_point_ratio(self, rng):
        rig = steep_rig()
        f, dh = rand_maps(rng, 2, 90, 4, 4)
        _, dd = rand_maps(rng, 2, 206, 4, 4)
        nh = len(lift_map(LiftConfig(rig, HEIGHT_BINS, 16), f, dh))
        nd = len(lift_map(LiftConfig(rig, DEPTH_BINS, 16), f, dd, Source.DEPTH))
        assert nh * 206 == nd * 90

    def test_horizon_cells_dropped_whole(self, rng):
        # level camera: the top half of the image never meets the ground
        rig = make_rig(5.0, 0.0, intrinsics=Intrinsics(10, 10, 4, 4))
        f, d = rand_maps(rng, 1, 5, 8, 8)
        vol = lift_map(LiftConfig(rig, BinSpec("ud", -1, 1, 5), 1), f, d)
        assert vol.dropped_rays == 8 * 5  # rows 0..4 have v <= cy
        assert len(vol) == (64 - vol.dropped_rays) * 5

    def test_bins_above_camera_dropped(self, rng):
        rig = make_rig(1.0, 30.0, intrinsics=Intrinsics(10, 10, 2, 2))
        f, d = rand_maps(rng, 1, 4, 4, 4)
        vol = lift_map(LiftConfig(rig, BinSpec("ud", 0, 2, 4), 1), f, d)
        assert vol.dropped_points == 16 * 2 and len(vol) == 16 * 2
        assert vol.positions[:, 2].max() < 1.0

    def test_weighted_features(self, rng):
        cfg = LiftConfig(steep_rig(), BinSpec("ud", -1, 1, 3), 16)
        f, d = rand_maps(rng, 2, 3, 4, 4)
        vol = lift_map(cfg, f, d)
        for i in range(0, len(vol), 7):
            x, y = np.rint((vol.pixels[i] + 0.5) / 16 - 0.5).astype(int)
            b = vol.bins[i]
            np.testing.assert_array_equal(vol.features[i], f.data[:, y, x] * d.data[b, y, x])

    def test_prob_floor(self, rng):
        cfg = LiftConfig(steep_rig(), BinSpec("ud", -1, 1, 3), 16)
        f = FeatureMap(np.ones((1, 2, 2)))
        d = DistributionMap(np.array([0.9, 0.1, 0.0]).reshape(3, 1, 1).repeat(2, 1).repeat(2, 2))
        vol = lift_map(cfg, f, d, prob_floor=0.05)
        assert len(vol) == 8 and vol.dropped_points == 4

    def test_shape_mismatch(self, rng):
        cfg = LiftConfig(steep_rig(), HEIGHT_BINS, 16)
        f, _ = rand_maps(rng, 1, 90, 4, 4)
        _, d = rand_maps(rng, 1, 90, 4, 5)
        with pytest.raises(ShapeMismatch):
            lift_map(cfg, f, d)
        _, d = rand_maps(rng, 1, 10, 4, 4)
        with pytest.raises(ShapeMismatch):
            lift_map(cfg, f, d)

    def test_pixel_centres(self):
        u, v = cell_to_pixel(np.array([0, 1]), np.array([0, 2]), 16)
        np.testing.assert_array_equal(u, [7.5, 23.5])
        np.testing.assert_array_equal(v, [7.5, 39.5])

    @pytest.mark.parametrize("threads", [2, 8])
    def test_threads_do_not_change_output(self, rng, threads):
        rig = make_rig(5.0, 15.0, intrinsics=Intrinsics(300, 300, 160, 120))
        cfg = LiftConfig(rig, HEIGHT_BINS, 8)
        f, d = rand_maps(rng, 3, 90, 30, 40)
        a, b = lift_map(cfg, f, d, threads=1), lift_map(cfg, f, d, threads=threads)
        for name in ("positions", "pixels", "bins", "features"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    @pytest.mark.parametrize("source", ["height", "depth"])
    @pytest.mark.parametrize("reduction", ["sum", "mean", "max"])
    def test_streaming_pool_matches(self, rng, source, reduction):
        rig = make_rig(5.0, 15.0, intrinsics=Intrinsics(300, 300, 160, 120))
        bins = HEIGHT_BINS if source == "height" else BinSpec("ud", 1, 60, 40)
        cfg = LiftConfig(rig, bins, 8)
        f, d = rand_maps(rng, 3, bins.n_bins, 30, 40)
        spec = GridSpec(0, 40, -20, 20, 0.5, reduction)
        a = voxel_pool(lift_map(cfg, f, d, source), spec)
        b = lift_pool(cfg, f, d, spec, source, threads=4)
        assert np.array_equal(a.data, b.data) and np.array_equal(a.occupancy, b.occupancy)
        assert a.dropped_points == b.dropped_points
