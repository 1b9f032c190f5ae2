import numpy as np
import pytest

from dtofsr import (
    FlowField,
    FrameMetrics,
    MetricReport,
    abs_error,
    charbonnier_gradient_loss,
    delta_metric,
    forward_warp_zbuffer,
    tepe,
)
from dtofsr.errors import (
    EmptyMaskError,
    EmptyValidRegionError,
    LengthMismatchError,
    NonPositiveDepthError,
)


class TestAbsError:
    def test_perfect(self):
        d = np.full((4, 4), 2.0)
        assert abs_error(d, d) == 0.0

    def test_uniform_offset(self):
        d = np.full((4, 4), 2.0)
        assert abs_error(d, d + 0.05) == pytest.approx(50.0)

    def test_half_offset(self):
        d = np.full((2, 2), 1.0)
        d_hat = d.copy()
        d_hat[0] += 0.02
        assert abs_error(d, d_hat) == pytest.approx(10.0)

    def test_empty_mask(self):
        d = np.ones((2, 2))
        with pytest.raises(EmptyMaskError):
            abs_error(d, d, np.zeros((2, 2), dtype=bool))

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b, c = rng.uniform(0.5, 5.0, size=(3, 6, 6))
            assert abs_error(a, b) == pytest.approx(abs_error(b, a))
            assert abs_error(a, c) <= abs_error(a, b) + abs_error(b, c) + 1e-9


class TestDeltaMetric:
    def test_perfect(self):
        d = np.full((3, 3), 2.0)
        assert delta_metric(d, d, 1.25) == 1.0

    def test_ratio_just_above_threshold(self):
        assert delta_metric(np.array([[1.0]]), np.array([[1.3]]), 1.25) == 0.0

    def test_half_pixels_double(self):
        d = np.full((2, 2), 1.0)
        d_hat = d.copy()
        d_hat[0] = 2.0
        assert delta_metric(d, d_hat, 1.25) == 0.5

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        d = rng.uniform(0.5, 5.0, size=(8, 8))
        d_hat = d * rng.uniform(0.8, 1.3, size=(8, 8))
        base = delta_metric(d, d_hat, 1.25)
        for lam in (0.5, 2.0, 10.0):
            assert delta_metric(lam * d, lam * d_hat, 1.25) == base

    def test_rejects_non_positive(self):
        with pytest.raises(NonPositiveDepthError):
            delta_metric(np.array([[0.0]]), np.array([[1.0]]), 1.25)

    def test_empty_mask(self):
        d = np.ones((2, 2))
        with pytest.raises(EmptyMaskError):
            delta_metric(d, d, 1.25, np.zeros((2, 2), dtype=bool))


class TestForwardWarp:
    def test_zero_flow_is_identity(self):
        rng = np.random.default_rng(8)
        values = rng.random((5, 7))
        depth = rng.uniform(1, 4, size=(5, 7))
        warped, valid = forward_warp_zbuffer(values, depth, FlowField.zero(5, 7))
        assert valid.all()
        assert np.array_equal(warped, values)

    def test_collision_keeps_nearer_source(self):
        values = np.array([[10.0, 20.0]])
        depth = np.array([[2.0, 1.0]])
        uv = np.zeros((1, 2, 2))
        uv[0, 0, 0] = 1.0  # left pixel lands on right pixel
        warped, valid = forward_warp_zbuffer(values, depth, FlowField(uv))
        assert warped[0, 1] == 20.0  # depth 1.0 wins
        assert not valid[0, 0]

    def test_equal_depth_collision_is_deterministic(self):
        values = np.array([[10.0, 20.0]])
        depth = np.array([[1.0, 1.0]])
        uv = np.zeros((1, 2, 2))
        uv[0, 0, 0] = 1.0
        warped, _ = forward_warp_zbuffer(values, depth, FlowField(uv))
        assert warped[0, 1] == 10.0  # lowest source index wins ties

    def test_uniform_shift_right_two(self):
        values = np.arange(16, dtype=float).reshape(4, 4)
        depth = np.ones((4, 4))
        uv = np.zeros((4, 4, 2))
        uv[..., 0] = 2.0
        warped, valid = forward_warp_zbuffer(values, depth, FlowField(uv))
        assert not valid[:, :2].any()
        assert valid[:, 2:].all()
        assert np.array_equal(warped[:, 2:], values[:, :2])

    def test_never_invents_values(self):
        rng = np.random.default_rng(9)
        values = rng.random((8, 8))
        depth = rng.uniform(1, 5, size=(8, 8))
        uv = rng.uniform(-3, 3, size=(8, 8, 2))
        warped, valid = forward_warp_zbuffer(values, depth, FlowField(uv))
        assert np.isin(warped[valid], values).all()

    def test_respects_flow_validity_mask(self):
        values = np.ones((2, 2))
        depth = np.ones((2, 2))
        flow = FlowField(np.zeros((2, 2, 2)),
                         np.array([[True, False], [True, True]]))
        _, valid = forward_warp_zbuffer(values, depth, flow)
        assert not valid[0, 1]

    def test_multichannel_values(self):
        values = np.dstack([np.ones((3, 3)), np.full((3, 3), 2.0)])
        depth = np.ones((3, 3))
        warped, valid = forward_warp_zbuffer(values, depth, FlowField.zero(3, 3))
        assert warped.shape == (3, 3, 2)
        assert np.array_equal(warped[..., 1], np.full((3, 3), 2.0))


class TestTepe:
    def test_perfect_predictions(self):
        rng = np.random.default_rng(11)
        d_t = rng.uniform(1, 4, size=(6, 6))
        d_t1 = rng.uniform(1, 4, size=(6, 6))
        assert tepe(d_t, d_t1, d_t, d_t1, FlowField.zero(6, 6)) == 0.0

    def test_constant_bias_in_both_frames_cancels(self):
        rng = np.random.default_rng(12)
        d_t = rng.uniform(1, 4, size=(6, 6))
        d_t1 = rng.uniform(1, 4, size=(6, 6))
        b = 0.123
        got = tepe(d_t, d_t1, d_t + b, d_t1 + b, FlowField.zero(6, 6))
        assert got == pytest.approx(0.0, abs=1e-9)

    def test_ten_mm_error_at_t1(self):
        d = np.full((4, 4), 2.0)
        got = tepe(d, d, d, d + 0.01, FlowField.zero(4, 4))
        assert got == pytest.approx(10.0)

    def test_empty_valid_region(self):
        d = np.ones((2, 2))
        uv = np.full((2, 2, 2), 50.0)  # everything lands outside
        with pytest.raises(EmptyValidRegionError):
            tepe(d, d, d, d, FlowField(uv))


class TestCharbonnierGradientLoss:
    def test_perfect_prediction_equals_epsilon(self):
        d = np.random.default_rng(13).uniform(0, 1, size=(5, 5))
        assert charbonnier_gradient_loss([d], [d]) == pytest.approx(0.01)

    def test_flat_scene_constant_offset(self):
        d = np.full((4, 4), 0.5)
        b = 0.2
        want = np.sqrt(b ** 2 + 0.01 ** 2)
        assert charbonnier_gradient_loss([d], [d + b]) == pytest.approx(want)

    def test_gradient_term_hand_case(self):
        # pred adds a single step of height h in x: forward diff differs by h
        # at the two columns adjacent to the step edge
        d = np.zeros((1, 4))
        d_hat = np.array([[0.0, 0.0, 0.3, 0.3]])
        charb = np.sqrt(d_hat ** 2 + 0.01 ** 2).mean()
        gx = np.abs(np.array([[0.0, 0.3, 0.0, 0.0]]))
        want = charb + 0.5 * gx.mean()
        got = charbonnier_gradient_loss([d], [d_hat])
        assert got == pytest.approx(want)

    def test_averages_over_frames(self):
        d = np.full((3, 3), 0.5)
        loss_single = charbonnier_gradient_loss([d], [d + 0.1])
        loss_double = charbonnier_gradient_loss([d, d], [d + 0.1, d + 0.1])
        assert loss_single == pytest.approx(loss_double)

    def test_length_mismatch(self):
        d = np.ones((2, 2))
        with pytest.raises(LengthMismatchError):
            charbonnier_gradient_loss([d, d], [d])

    def test_on_clip_normalized_sequences(self):
        from dtofsr import clip_and_normalize
        rng = np.random.default_rng(14)
        gt = [rng.uniform(1.0, 39.0, size=(8, 8)) for _ in range(3)]
        pred = [d + 0.4 for d in gt]
        gt_n, _ = clip_and_normalize(gt, (0.0, 40.0))
        pred_n, _ = clip_and_normalize(pred, (0.0, 40.0))
        want = np.sqrt((0.4 / 40.0) ** 2 + 0.01 ** 2)  # uniform offset, flat grads
        got = charbonnier_gradient_loss(gt_n, pred_n)
        assert got == pytest.approx(want)


class TestMetricReport:
    def make_report(self):
        report = MetricReport()
        report.frames.append(FrameMetrics(0, 10.0, {1.25: 0.9, 1.5625: 0.95},
                                          100, 5.0))
        report.frames.append(FrameMetrics(1, 20.0, {1.25: 0.8, 1.5625: 0.85},
                                          300, None))
        return report

    def test_field_names(self):
        text = self.make_report().to_text()
        assert "ae_mm=" in text
        assert "delta_1.25=" in text
        assert "delta_1.25^2=" in text
        assert "tepe_mm=" in text
        assert "pixels=" in text

    def test_frame_mean_vs_pixel_pooled(self):
        report = self.make_report()
        mean = report.aggregate(pooled=False)
        pooled = report.aggregate(pooled=True)
        assert mean.ae_mm == pytest.approx(15.0)
        assert pooled.ae_mm == pytest.approx((10 * 100 + 20 * 300) / 400)

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        self.make_report().write(a)
        self.make_report().write(b)
        assert a.read_bytes() == b.read_bytes()
