import numpy as np
import pytest

from dtofsr import (
    BilateralParams,
    FlowField,
    Pulse,
    SensorConfig,
    SensorMode,
    TimeAxis,
    candidate_select_upsample,
    compress_grid,
    confidence_from_histogram,
    confidence_fuse,
    grayscale_radiance,
    guided_bilateral_upsample,
    simulate_frame,
    temporal_fuse,
    upsample_baseline,
)
from dtofsr.errors import WrongModeError
from dtofsr.superres import _patch_mean_rgb, _peak_support_colors

from oracles import (
    brute_bilateral_upsample,
    brute_candidate_select,
    brute_spatial_upsample,
)

DARK = np.array([0.20, 0.05, 0.05])
BRIGHT = np.array([0.80, 0.80, 0.75])


def desk_config(s=8):
    return SensorConfig(downsample_factor=s,
                        axis=TimeAxis.for_depth_range(8.192, 1024),
                        pulse=Pulse.delta())


def two_patch_scene(s=8):
    """Patch A: uniform dark at 2 m. Patch B: dark 2 m left, bright 4 m right
    (unequal mass split)."""
    rgb = np.empty((s, 2 * s, 3))
    rgb[:, :] = DARK
    rgb[:, s + 5:] = BRIGHT
    depth = np.full((s, 2 * s), 2.0)
    depth[:, s + 5:] = 4.0
    return rgb, depth


class TestUpsampleBaseline:
    def test_constant(self):
        out = upsample_baseline(np.full((2, 3), 1.5), 4, "bilinear")
        assert out.shape == (8, 12)
        assert np.all(out == 1.5)

    def test_identity_at_s1(self):
        low = np.arange(6, dtype=float).reshape(2, 3)
        for method in ("nearest", "bilinear"):
            assert np.array_equal(upsample_baseline(low, 1, method), low)

    def test_bilinear_hand_case(self):
        low = np.array([[1.0, 3.0], [1.0, 3.0]])
        out = upsample_baseline(low, 2, "bilinear")
        # half-pixel convention: centers at 0.5 / 2.5, edges clamped
        for row in out:
            assert row.tolist() == [1.0, 1.5, 2.5, 3.0]

    def test_nearest_blocks(self):
        low = np.array([[1.0, 2.0]])
        out = upsample_baseline(low, 2, "nearest")
        assert out.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2]]

    def test_no_nan(self):
        rng = np.random.default_rng(0)
        out = upsample_baseline(rng.random((3, 5)), 6, "bilinear")
        assert np.isfinite(out).all()

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            upsample_baseline(np.ones((2, 2)), 2, "bicubic")


class TestGuidedBilateral:
    def test_constant_inputs(self):
        params = BilateralParams(1.0, 0.1, 2.0)
        out = guided_bilateral_upsample(np.full((3, 3), 2.0),
                                        np.full((12, 12, 3), 0.5), params, 4)
        assert out == pytest.approx(np.full((12, 12), 2.0))

    def test_matches_brute_force_full_window(self):
        rng = np.random.default_rng(21)
        s = 4
        low = rng.uniform(1, 5, size=(4, 4))
        rgb = rng.random((16, 16, 3))
        params = BilateralParams(1.5, 0.3, 8.0)  # window covers the grid
        out = guided_bilateral_upsample(low, rgb, params, s)
        guide = _patch_mean_rgb(rgb, s)
        want = brute_bilateral_upsample(low, rgb, guide, 1.5, 0.3, s)
        assert out == pytest.approx(want, rel=1e-9)

    def test_sigma_r_infinity_reduces_to_spatial(self):
        rng = np.random.default_rng(22)
        s = 4
        low = rng.uniform(1, 5, size=(4, 4))
        rgb = rng.random((16, 16, 3))
        params = BilateralParams(1.5, 1e9, 8.0)
        out = guided_bilateral_upsample(low, rgb, params, s)
        want = brute_spatial_upsample(low, 1.5, s)
        assert out == pytest.approx(want, rel=1e-6)

    def test_step_preserved_with_rgb_edge(self):
        s = 4
        low = np.full((4, 4), 1.0)
        low[:, 2:] = 3.0
        rgb = np.empty((16, 16, 3))
        rgb[:, :8] = DARK
        rgb[:, 8:] = BRIGHT
        params = BilateralParams(1.0, 0.05, 3.0)
        out = guided_bilateral_upsample(low, rgb, params, s)
        assert np.abs(out[:, :8] - 1.0).max() < 0.05
        assert np.abs(out[:, 8:] - 3.0).max() < 0.05

    def test_degenerate_weights_fall_back_to_nearest(self):
        s = 2
        low = np.array([[1.0, 3.0]])
        # one white pixel per patch keeps every patch mean away from every
        # pixel color; a tiny range sigma then kills all weights
        rgb = np.zeros((2, 4, 3))
        rgb[0, 0] = 1.0
        rgb[0, 2] = 1.0
        params = BilateralParams(0.5, 1e-3, 1.0)
        out = guided_bilateral_upsample(low, rgb, params, s)
        assert np.isfinite(out).all()
        assert out[1, 0] == 1.0  # nearest sample
        assert out[1, 3] == 3.0


class TestSupportColors:
    def test_two_surface_patch_recovers_side_colors(self):
        s = 8
        rgb, depth = two_patch_scene(s)
        config = desk_config(s)
        frame = simulate_frame(depth, grayscale_radiance(rgb), config)
        grid = compress_grid(frame.hist, config.axis, 4)
        support = grid.support_mass()
        colors = _peak_support_colors(rgb, s, support, _patch_mean_rgb(rgb, s))
        # patch B (index 1): peak in section 0 is the 2 m dark surface,
        # peak in section 1 the 4 m bright surface
        active = np.flatnonzero(support[0, 1] > 0)
        assert len(active) == 2
        assert colors[0, 1, active[0]] == pytest.approx(DARK, abs=1e-6)
        assert colors[0, 1, active[1]] == pytest.approx(BRIGHT, abs=1e-6)

    def test_single_surface_patch_uses_patch_mean(self):
        s = 4
        rgb = np.full((4, 4, 3), 0.3)
        depth = np.full((4, 4), 2.0)
        config = desk_config(s)
        frame = simulate_frame(depth, np.ones((4, 4)), config)
        grid = compress_grid(frame.hist, config.axis, 4)
        colors = _peak_support_colors(rgb, s, grid.support_mass(),
                                      _patch_mean_rgb(rgb, s))
        assert colors[0, 0] == pytest.approx(np.full((4, 3), 0.3))


class TestCandidateSelect:
    def test_uniform_scene_gets_dominant_peak(self):
        s = 8
        rgb = np.full((8, 16, 3), 0.4)
        depth = np.full((8, 16), 3.0)
        config = desk_config(s)
        frame = simulate_frame(depth, np.ones_like(depth), config)
        grid = compress_grid(frame.hist, config.axis, 4)
        out, conf = candidate_select_upsample(grid, rgb, BilateralParams())
        assert np.abs(out - 3.0).max() <= config.axis.depth_per_bin
        assert (conf > 0).all()

    def test_two_plane_patch_snaps_by_color_side(self):
        s = 8
        rgb, depth = two_patch_scene(s)
        config = desk_config(s)
        frame = simulate_frame(depth, grayscale_radiance(rgb), config)
        grid = compress_grid(frame.hist, config.axis, 4)
        out, conf = candidate_select_upsample(grid, rgb, BilateralParams())
        dpb = config.axis.depth_per_bin
        assert np.abs(out[:, :s + 5] - 2.0).max() <= dpb
        assert np.abs(out[:, s + 5:] - 4.0).max() <= dpb
        assert (conf > 0).all()

    def test_matches_exhaustive_scoring_oracle(self):
        s = 8
        rgb, depth = two_patch_scene(s)
        config = desk_config(s)
        frame = simulate_frame(depth, grayscale_radiance(rgb), config)
        grid = compress_grid(frame.hist, config.axis, 4)
        params = BilateralParams(1.0, 0.12, 2.0)
        out, conf = candidate_select_upsample(grid, rgb, params)
        support = grid.support_mass()
        colors = _peak_support_colors(rgb, s, support, _patch_mean_rgb(rgb, s))
        want_d, want_c = brute_candidate_select(
            grid.peak_depths, support, colors, rgb, s, 1.0, 0.12)
        assert out == pytest.approx(want_d)
        assert conf == pytest.approx(want_c, rel=1e-9)

    def test_no_overshoot(self):
        s = 8
        rgb, depth = two_patch_scene(s)
        config = desk_config(s)
        frame = simulate_frame(depth, grayscale_radiance(rgb), config)
        grid = compress_grid(frame.hist, config.axis, 4)
        out, _ = candidate_select_upsample(grid, rgb, BilateralParams())
        assert out.min() >= grid.peak_depths.min() - 1e-12
        assert out.max() <= grid.peak_depths.max() + 1e-12

    def test_empty_candidates_masked(self):
        axis = TimeAxis.for_depth_range(8.192, 1024)
        grid = compress_grid(np.zeros((1, 2, 1024)), axis, 4)
        out, conf = candidate_select_upsample(
            grid, np.full((8, 16, 3), 0.5), BilateralParams())
        assert np.all(conf == 0.0)
        assert np.all(out == 0.0)

    def test_beats_bilinear_on_step(self):
        s = 8
        rgb, depth = two_patch_scene(s)
        config = desk_config(s)
        radiance = grayscale_radiance(rgb)
        frame = simulate_frame(depth, radiance, config, mode=SensorMode.PEAK)
        hist_frame = simulate_frame(depth, radiance, config)
        grid = compress_grid(hist_frame.hist, config.axis, 4)
        cand, _ = candidate_select_upsample(grid, rgb, BilateralParams())
        bilin = upsample_baseline(frame.peak_depth, s, "bilinear")
        ae_cand = np.abs(cand - depth).mean()
        ae_bilin = np.abs(bilin - depth).mean()
        assert ae_cand < ae_bilin


class TestConfidenceFromHistogram:
    def test_round_trip_ground_truth_is_one(self):
        rng = np.random.default_rng(30)
        s = 8
        config = desk_config(s)
        depth = rng.uniform(0.5, 7.5, size=(16, 16))
        frame = simulate_frame(depth, np.ones_like(depth), config)
        conf = confidence_from_histogram(depth, frame)
        assert np.all(conf == 1.0)

    def test_one_bin_shift(self):
        s = 8
        config = desk_config(s)
        dpb = config.axis.depth_per_bin
        depth = np.full((8, 8), 250.5 * dpb)  # exact bin center
        frame = simulate_frame(depth, np.ones_like(depth), config)
        conf = confidence_from_histogram(depth + dpb, frame, sigma_d=2.0)
        assert conf == pytest.approx(np.full((8, 8), np.exp(-0.5)))

    def test_monotone_in_shift(self):
        s = 8
        config = desk_config(s)
        dpb = config.axis.depth_per_bin
        depth = np.full((8, 8), 250.5 * dpb)
        frame = simulate_frame(depth, np.ones_like(depth), config)
        confs = [confidence_from_histogram(depth + k * dpb, frame)[0, 0]
                 for k in range(6)]
        assert all(a > b for a, b in zip(confs, confs[1:]))

    def test_round_trip_is_one_on_every_synth_scene(self):
        import scenes
        config = SensorConfig(16, scenes.desk_axis(), Pulse.delta())
        suite = dict(scenes.discontinuity_scenes())
        suite["oblique"] = scenes.oblique_scene()
        for name, spec in suite.items():
            frame = scenes.render(spec)[0]
            sim = simulate_frame(frame.depth, np.ones_like(frame.depth), config)
            conf = confidence_from_histogram(frame.depth, sim)
            assert np.all(conf == 1.0), name

    def test_zero_mass_patch_gets_zero_confidence(self):
        s = 8
        config = desk_config(s)
        depth = np.full((8, 16), 2.0)
        radiance = np.ones((8, 16))
        radiance[:, :8] = 0.0
        frame = simulate_frame(depth, radiance, config)
        conf = confidence_from_histogram(depth, frame)
        assert np.all(conf[:, :8] == 0.0)
        assert np.all(conf[:, 8:] == 1.0)

    def test_requires_histogram_mode(self):
        s = 8
        config = desk_config(s)
        frame = simulate_frame(np.full((8, 8), 2.0), np.ones((8, 8)), config,
                               mode=SensorMode.PEAK)
        with pytest.raises(WrongModeError):
            confidence_from_histogram(np.full((8, 8), 2.0), frame)


class TestConfidenceFuse:
    def test_zero_second_confidence(self):
        d1 = np.full((3, 3), 1.0)
        d2 = np.full((3, 3), 9.0)
        d, c = confidence_fuse(d1, np.full((3, 3), 0.7), d2, np.zeros((3, 3)))
        assert np.array_equal(d, d1)
        assert np.all(c == 0.7)

    def test_equal_confidence_is_mean(self):
        d1 = np.full((2, 2), 1.0)
        d2 = np.full((2, 2), 2.0)
        d, _ = confidence_fuse(d1, np.full((2, 2), 0.5), d2, np.full((2, 2), 0.5))
        assert d == pytest.approx(np.full((2, 2), 1.5))

    def test_weighted_mean_hand_case(self):
        d, c = confidence_fuse(np.array([[1.0]]), np.array([[0.75]]),
                               np.array([[2.0]]), np.array([[0.25]]))
        assert d[0, 0] == pytest.approx(1.25)
        assert c[0, 0] == 0.75

    def test_degenerate_confidences_take_first(self):
        d, c = confidence_fuse(np.array([[4.0]]), np.array([[0.0]]),
                               np.array([[9.0]]), np.array([[0.0]]))
        assert d[0, 0] == 4.0
        assert c[0, 0] == 0.0

    def test_no_overshoot(self):
        rng = np.random.default_rng(31)
        d1, d2 = rng.uniform(1, 5, size=(2, 6, 6))
        c1, c2 = rng.random((2, 6, 6))
        d, _ = confidence_fuse(d1, c1, d2, c2)
        assert np.all(d >= np.minimum(d1, d2) - 1e-12)
        assert np.all(d <= np.maximum(d1, d2) + 1e-12)


class TestTemporalFuse:
    def test_decay_zero_is_memoryless(self):
        rng = np.random.default_rng(32)
        prev_d, cur_d = rng.uniform(1, 5, size=(2, 5, 5))
        prev_c = rng.random((5, 5))
        cur_c = rng.uniform(0.1, 1.0, size=(5, 5))
        d, c = temporal_fuse(prev_d, prev_c, FlowField.zero(5, 5), cur_d,
                             cur_c, decay=0.0)
        assert np.array_equal(d, cur_d)
        assert np.array_equal(c, cur_c)

    def test_static_perfect_sequence_is_idempotent(self):
        gt = np.random.default_rng(33).uniform(1, 5, size=(6, 6))
        ones = np.ones((6, 6))
        d, c = gt.copy(), ones.copy()
        for _ in range(4):
            d, c = temporal_fuse(d, c, FlowField.zero(6, 6), gt, ones, 1.0)
            assert d == pytest.approx(gt)
            assert np.all(c == 1.0)

    def test_bias_halved_with_equal_confidence(self):
        gt = np.full((4, 4), 2.0)
        cur = gt + 0.05
        ones = np.ones((4, 4))
        d, _ = temporal_fuse(gt, ones, FlowField.zero(4, 4), cur, ones, 1.0)
        assert np.abs(d - gt).max() == pytest.approx(0.025)

    def test_invalid_warp_passes_current_through(self):
        prev_d = np.full((2, 4), 9.0)
        prev_c = np.ones((2, 4))
        cur_d = np.full((2, 4), 1.0)
        cur_c = np.full((2, 4), 0.5)
        uv = np.zeros((2, 4, 2))
        uv[..., 0] = 2.0  # leftmost columns receive no warped sample
        d, c = temporal_fuse(prev_d, prev_c, FlowField(uv), cur_d, cur_c, 1.0)
        assert np.all(d[:, :2] == 1.0)
        assert np.all(c[:, :2] == 0.5)
        assert np.all(d[:, 2:] > 1.0)
