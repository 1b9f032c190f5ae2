"""Evaluation metrics for depth video: absolute error, delta-threshold
accuracy, occlusion-aware forward warping, temporal end-point error, and the
Charbonnier + gradient training loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyMaskError,
    EmptyValidRegionError,
    LengthMismatchError,
    NonPositiveDepthError,
)


@dataclass
class FlowField:
    """Dense optical flow from frame t to t+1, in pixels, with a validity mask."""

    uv: np.ndarray            # (H, W, 2): (du, dv) = (x, y) displacement
    valid: np.ndarray = None  # (H, W) bool

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64)
        if self.uv.ndim != 3 or self.uv.shape[2] != 2:
            raise ValueError(f"expected (H, W, 2) flow, got {self.uv.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.uv).all(axis=2)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.uv.shape[:2]:
            raise ValueError("flow validity mask shape mismatch")

    @classmethod
    def zero(cls, h: int, w: int) -> "FlowField":
        return cls(np.zeros((h, w, 2)))


def _resolve_mask(shape, mask):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError("mask shape mismatch")
    return mask


def abs_error(d: np.ndarray, d_hat: np.ndarray, mask=None) -> float:
    """Mean absolute depth difference over masked pixels, in millimeters."""
    d = np.asarray(d, dtype=np.float64)
    d_hat = np.asarray(d_hat, dtype=np.float64)
    if d.shape != d_hat.shape:
        raise ValueError("depth map shapes differ")
    mask = _resolve_mask(d.shape, mask)
    if not mask.any():
        raise EmptyMaskError("no pixels selected for abs_error")
    return float(np.abs(d[mask] - d_hat[mask]).mean() * 1000.0)


def delta_metric(d: np.ndarray, d_hat: np.ndarray, tau: float, mask=None) -> float:
    """Fraction of masked pixels with max(d/d_hat, d_hat/d) < tau."""
    if not tau > 1:
        raise ValueError("tau must be > 1")
    d = np.asarray(d, dtype=np.float64)
    d_hat = np.asarray(d_hat, dtype=np.float64)
    if d.shape != d_hat.shape:
        raise ValueError("depth map shapes differ")
    mask = _resolve_mask(d.shape, mask)
    if not mask.any():
        raise EmptyMaskError("no pixels selected for delta metric")
    a, b = d[mask], d_hat[mask]
    if np.any(a <= 0) or np.any(b <= 0):
        raise NonPositiveDepthError("delta metric requires positive depths")
    ratio = np.maximum(a / b, b / a)
    return float((ratio < tau).mean())


def forward_warp_zbuffer(values: np.ndarray, depth_src: np.ndarray,
                         flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Splat per-pixel values forward along the flow with a z-test.

    Every source pixel lands on the nearest-integer target location displaced
    by its flow vector. When several sources collide on one target, the source
    with the smaller ``depth_src`` wins (equal depths resolve to the lowest
    source index). Targets no source reaches are marked invalid.

    ``values`` may be (H, W) or (H, W, C); returns (warped, valid_mask).
    """
    depth_src = np.asarray(depth_src, dtype=np.float64)
    values = np.asarray(values)
    h, w = depth_src.shape
    if values.shape[:2] != (h, w) or flow.uv.shape[:2] != (h, w):
        raise ValueError("values / flow shape mismatch")
    ys, xs = np.mgrid[0:h, 0:w]
    tx = np.floor(xs + flow.uv[..., 0] + 0.5).astype(np.int64)
    ty = np.floor(ys + flow.uv[..., 1] + 0.5).astype(np.int64)
    ok = flow.valid & (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)

    src_idx = np.flatnonzero(ok)
    targets = (ty.reshape(-1)[src_idx]) * w + tx.reshape(-1)[src_idx]
    depths = depth_src.reshape(-1)[src_idx]
    order = np.lexsort((src_idx, depths, targets))
    t_sorted = targets[order]
    first = np.ones(t_sorted.shape, dtype=bool)
    first[1:] = t_sorted[1:] != t_sorted[:-1]
    win_targets = t_sorted[first]
    win_sources = src_idx[order][first]

    out_shape = (h, w) if values.ndim == 2 else (h, w) + values.shape[2:]
    warped = np.zeros(out_shape, dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    flat_vals = values.reshape((h * w,) + values.shape[2:])
    warped.reshape((h * w,) + values.shape[2:])[win_targets] = flat_vals[win_sources]
    valid.reshape(-1)[win_targets] = True
    return warped, valid


def tepe(d_t: np.ndarray, d_t1: np.ndarray, dhat_t: np.ndarray,
         dhat_t1: np.ndarray, flow: FlowField, mask=None) -> float:
    """Temporal end-point error in millimeters.

    Both the ground-truth and predicted frame-t maps are forward-warped with
    the ground-truth flow (z-test from the ground-truth depth), then the mean
    absolute difference between the two temporal changes is taken over the
    jointly valid pixels.
    """
    d_t = np.asarray(d_t, dtype=np.float64)
    d_t1 = np.asarray(d_t1, dtype=np.float64)
    dhat_t = np.asarray(dhat_t, dtype=np.float64)
    dhat_t1 = np.asarray(dhat_t1, dtype=np.float64)
    w_gt, v_gt = forward_warp_zbuffer(d_t, d_t, flow)
    w_pred, v_pred = forward_warp_zbuffer(dhat_t, d_t, flow)
    valid = v_gt & v_pred & _resolve_mask(d_t.shape, mask)
    if not valid.any():
        raise EmptyValidRegionError("no jointly valid pixels for TEPE")
    diff = (w_gt - d_t1) - (w_pred - dhat_t1)
    return float(np.abs(diff[valid]).mean() * 1000.0)


def _forward_diff_x(d):
    return np.diff(d, axis=1, append=d[:, -1:])


def _forward_diff_y(d):
    return np.diff(d, axis=0, append=d[-1:, :])


def charbonnier_gradient_loss(d_seq, dhat_seq, epsilon: float = 0.01) -> float:
    """Per-frame Charbonnier loss plus L1 gradient loss, averaged over frames.

    Gradients are first-order forward differences with replication at the
    right/bottom borders. Inputs are expected in normalized depth units.
    """
    if len(d_seq) != len(dhat_seq):
        raise LengthMismatchError("sequences have different lengths")
    if not len(d_seq):
        raise LengthMismatchError("sequences are empty")
    total = 0.0
    for d, d_hat in zip(d_seq, dhat_seq):
        d = np.asarray(d, dtype=np.float64)
        d_hat = np.asarray(d_hat, dtype=np.float64)
        charb = np.sqrt((d - d_hat) ** 2 + epsilon ** 2).mean()
        gx = np.abs(_forward_diff_x(d) - _forward_diff_x(d_hat))
        gy = np.abs(_forward_diff_y(d) - _forward_diff_y(d_hat))
        total += charb + 0.5 * (gx.mean() + gy.mean())
    return float(total / len(d_seq))


def _delta_name(tau: float) -> str:
    if abs(tau - 1.25) < 1e-12:
        return "delta_1.25"
    if abs(tau - 1.25 ** 2) < 1e-12:
        return "delta_1.25^2"
    return f"delta_{tau:g}"


@dataclass
class FrameMetrics:
    index: int
    ae_mm: float
    delta: dict
    pixels: int
    tepe_mm: float | None = None

    def format_line(self) -> str:
        parts = [f"frame={self.index:04d}", f"ae_mm={self.ae_mm:.6f}"]
        for tau in sorted(self.delta):
            parts.append(f"{_delta_name(tau)}={self.delta[tau]:.6f}")
        if self.tepe_mm is not None:
            parts.append(f"tepe_mm={self.tepe_mm:.6f}")
        parts.append(f"pixels={self.pixels}")
        return " ".join(parts)


@dataclass
class MetricReport:
    """Per-frame metric records plus aggregates.

    AE/delta are pooled over pixels within a frame; the frame_mean aggregate
    averages the per-frame values, the pixel_pooled aggregate re-pools over
    all pixels of the sequence. TEPE aggregates over frame pairs.
    """

    frames: list = field(default_factory=list)

    @property
    def pixel_count(self) -> int:
        return sum(f.pixels for f in self.frames)

    def aggregate(self, pooled: bool = False) -> FrameMetrics:
        if not self.frames:
            raise EmptyMaskError("report has no frames")
        taus = sorted(self.frames[0].delta)
        tepes = [f.tepe_mm for f in self.frames if f.tepe_mm is not None]
        if pooled:
            px = np.array([f.pixels for f in self.frames], dtype=np.float64)
            ae = float(np.sum([f.ae_mm * f.pixels for f in self.frames]) / px.sum())
            delta = {t: float(np.sum([f.delta[t] * f.pixels for f in self.frames])
                              / px.sum()) for t in taus}
        else:
            ae = float(np.mean([f.ae_mm for f in self.frames]))
            delta = {t: float(np.mean([f.delta[t] for f in self.frames]))
                     for t in taus}
        tepe_mm = float(np.mean(tepes)) if tepes else None
        return FrameMetrics(-1, ae, delta, self.pixel_count, tepe_mm)

    def to_text(self) -> str:
        lines = [f.format_line() for f in self.frames]
        agg = self.aggregate(pooled=False)
        line = agg.format_line().split(" ", 1)[1]
        lines.append(f"aggregate=frame_mean {line}")
        agg_p = self.aggregate(pooled=True)
        line = agg_p.format_line().split(" ", 1)[1]
        lines.append(f"aggregate=pixel_pooled {line}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_text())
