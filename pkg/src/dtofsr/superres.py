"""Classical RGB-guided super-resolution of dToF frames.

Provides interpolation baselines, joint bilateral guided upsampling, a
candidate-selection upsampler that snaps each high-resolution pixel to one of
the detected histogram peaks in its patch neighborhood, histogram-matching
confidence, and confidence-weighted per-frame / temporal fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import WrongModeError
from .histogram import CompressedGrid, accumulate_histograms
from .metrics import FlowField, forward_warp_zbuffer
from .sensor import DToFFrame, SensorMode

UPSAMPLE_METHODS = ("nearest", "bilinear")


@dataclass(frozen=True)
class BilateralParams:
    spatial_sigma: float = 1.0   # low-res pixels
    range_sigma: float = 0.12    # RGB units in [0, 1]
    window_radius: float = 2.0   # low-res pixels

    def __post_init__(self):
        if not (self.spatial_sigma > 0 and self.range_sigma > 0
                and self.window_radius > 0):
            raise ValueError("bilateral parameters must be positive")
        if self.window_radius < self.spatial_sigma:
            raise ValueError("window_radius must be >= spatial_sigma")


def _lowres_coords(n_hi: int, s: int) -> np.ndarray:
    """Low-res (fractional) coordinate of each high-res pixel center."""
    return (np.arange(n_hi) + 0.5) / s - 0.5


def upsample_baseline(lowres: np.ndarray, s: int,
                      method: str = "bilinear") -> np.ndarray:
    """Nearest / bilinear upsampling by integer factor s (control baseline)."""
    if method not in UPSAMPLE_METHODS:
        raise ValueError(f"unknown method {method!r}")
    lowres = np.asarray(lowres, dtype=np.float64)
    h, w = lowres.shape
    if s == 1:
        return lowres.copy()
    if method == "nearest":
        return np.repeat(np.repeat(lowres, s, axis=0), s, axis=1)
    ly = np.clip(_lowres_coords(h * s, s), 0, h - 1)
    lx = np.clip(_lowres_coords(w * s, s), 0, w - 1)
    y0 = np.floor(ly).astype(np.int64)
    x0 = np.floor(lx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ly - y0)[:, None]
    fx = (lx - x0)[None, :]
    v00 = lowres[np.ix_(y0, x0)]
    v01 = lowres[np.ix_(y0, x1)]
    v10 = lowres[np.ix_(y1, x0)]
    v11 = lowres[np.ix_(y1, x1)]
    return ((1 - fy) * (1 - fx) * v00 + (1 - fy) * fx * v01
            + fy * (1 - fx) * v10 + fy * fx * v11)


def _patch_mean_rgb(rgb: np.ndarray, s: int) -> np.ndarray:
    h, w = rgb.shape[0] // s, rgb.shape[1] // s
    return (rgb.reshape(h, s, w, s, 3).mean(axis=(1, 3)))


def guided_bilateral_upsample(lowres: np.ndarray, rgb: np.ndarray,
                              params: BilateralParams, s: int) -> np.ndarray:
    """Joint bilateral upsampling of a low-resolution depth map.

    Each high-resolution pixel takes a normalized weighted average of the
    low-resolution depths in its window; weights combine a spatial Gaussian
    (low-res pixel units) with an RGB range Gaussian between the pixel's guide
    color and the candidate sample's patch mean color. If all weights
    degenerate (below 1e-12) the pixel falls back to its nearest sample.
    """
    lowres = np.asarray(lowres, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w = lowres.shape
    if rgb.shape[:2] != (h * s, w * s):
        raise ValueError("rgb dims must equal lowres dims times s")
    guide = _patch_mean_rgb(rgb, s)
    ly = _lowres_coords(h * s, s)
    lx = _lowres_coords(w * s, s)
    base_i = np.floor(ly + 0.5).astype(np.int64)
    base_j = np.floor(lx + 0.5).astype(np.int64)
    radius = int(np.ceil(params.window_radius))
    inv_s2 = 1.0 / (2.0 * params.spatial_sigma ** 2)
    inv_r2 = 1.0 / (2.0 * params.range_sigma ** 2)

    acc = np.zeros(rgb.shape[:2])
    acc_w = np.zeros(rgb.shape[:2])
    for di in range(-radius, radius + 1):
        qi = base_i + di
        ok_y = (qi >= 0) & (qi < h)
        wy = np.exp(-((qi - ly) ** 2) * inv_s2)
        qic = np.clip(qi, 0, h - 1)
        for dj in range(-radius, radius + 1):
            qj = base_j + dj
            ok_x = (qj >= 0) & (qj < w)
            wx = np.exp(-((qj - lx) ** 2) * inv_s2)
            qjc = np.clip(qj, 0, w - 1)
            sample = lowres[qic[:, None], qjc[None, :]]
            color = guide[qic[:, None], qjc[None, :]]
            dist2 = ((rgb - color) ** 2).sum(axis=-1)
            wgt = ((wy[:, None] * wx[None, :]) * np.exp(-dist2 * inv_r2)
                   * (ok_y[:, None] & ok_x[None, :]))
            acc += wgt * sample
            acc_w += wgt
    nearest = lowres[np.ix_(np.clip(base_i, 0, h - 1), np.clip(base_j, 0, w - 1))]
    degenerate = acc_w < 1e-12
    return np.where(degenerate, nearest, acc / np.where(degenerate, 1.0, acc_w))


def _nearest_prefix_cuts(cum: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Group boundaries whose prefix mass is closest to each target."""
    cuts = np.empty(len(targets), dtype=np.int64)
    for idx, target in enumerate(targets):
        i = min(int(np.searchsorted(cum, target, side="left")), len(cum) - 1)
        prefix_lo = cum[i - 1] if i >= 1 else 0.0
        cuts[idx] = i if abs(prefix_lo - target) <= abs(cum[i] - target) \
            else i + 1
    return cuts


def _peak_support_colors(rgb: np.ndarray, s: int, support_mass: np.ndarray,
                         patch_mean: np.ndarray) -> np.ndarray:
    """Estimate a representative RGB color for each detected peak of a patch.

    Peak support masses are radiance-weighted pixel masses, and radiance
    tracks image intensity, so the patch's pixels are split along the
    luminance axis into contiguous groups whose gray-mass fractions match the
    peak mass fractions. Of the two possible depth orderings (darker pixels
    nearer vs farther) the one with smaller within-group color variance is
    kept; ties keep the ascending association. Zero-mass peaks fall back to
    the patch mean color.
    """
    hs, ws, m = support_mass.shape
    patch_rgb = (rgb.reshape(hs, s, ws, s, 3).transpose(0, 2, 1, 3, 4)
                 .reshape(hs, ws, s * s, 3))
    colors = np.repeat(patch_mean[:, :, None, :], m, axis=2).copy()
    gray = patch_rgb.mean(axis=3)
    for i in range(hs):
        for j in range(ws):
            active = np.flatnonzero(support_mass[i, j] > 0)
            if active.size < 2:
                continue
            g = gray[i, j]
            order = np.argsort(g, kind="stable")
            px = patch_rgb[i, j][order]
            cum = np.cumsum(g[order])
            if not cum[-1] > 0:
                continue
            fracs = support_mass[i, j, active]
            fracs = fracs / fracs.sum()
            best = None
            for ascending in (True, False):
                f = fracs if ascending else fracs[::-1]
                targets = np.cumsum(f)[:-1] * cum[-1]
                cuts = _nearest_prefix_cuts(cum, targets)
                bounds = np.concatenate(([0], cuts, [len(px)]))
                bounds = np.maximum.accumulate(bounds)
                var = 0.0
                means = []
                for k in range(len(bounds) - 1):
                    seg = px[bounds[k]:bounds[k + 1]]
                    if not len(seg):
                        means.append(patch_mean[i, j])
                        continue
                    mu = seg.mean(axis=0)
                    means.append(mu)
                    var += ((seg - mu) ** 2).sum()
                if best is None or var < best[0] - 1e-12:
                    best = (var, ascending, means)
            _, ascending, means = best
            if not ascending:
                means = means[::-1]
            for idx, a in enumerate(active):
                colors[i, j, a] = means[idx]
    return colors


def candidate_select_upsample(grid: CompressedGrid, rgb: np.ndarray,
                              params: BilateralParams
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Snap each high-resolution pixel to one of the detected peak depths.

    Candidates are the peaks of the pixel's own patch and its 8 neighbors.
    Each candidate is scored by spatial proximity to its patch center, RGB
    similarity between the pixel and the peak's estimated support color, and
    the peak's rebinned mass. The output depth is the argmax-scored candidate;
    the confidence is the winner's score over the score sum. Pixels with no
    positive-mass candidate are masked with confidence 0 and depth 0.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    hs, ws = grid.grid_shape
    hei, wid = rgb.shape[:2]
    if hei % hs or wid % ws or hei // hs != wid // ws:
        raise ValueError("rgb dims must be an integer multiple of the grid dims")
    s = hei // hs
    m = grid.section_count
    support = grid.support_mass()
    patch_mean = _patch_mean_rgb(rgb, s)
    colors = _peak_support_colors(rgb, s, support, patch_mean)

    pad3 = ((1, 1), (1, 1), (0, 0))
    depth_p = np.pad(grid.peak_depths, pad3)
    mass_p = np.pad(support, pad3)
    colors_p = np.pad(colors, pad3 + ((0, 0),))

    ys, xs = np.mgrid[0:hei, 0:wid].astype(np.float64)
    pi = (ys / s).astype(np.int64)
    pj = (xs / s).astype(np.int64)
    inv_s2 = 1.0 / (2.0 * (params.spatial_sigma * s) ** 2)
    inv_r2 = 1.0 / (2.0 * params.range_sigma ** 2)

    best_score = np.zeros((hei, wid))
    best_depth = np.zeros((hei, wid))
    score_sum = np.zeros((hei, wid))
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            qi, qj = pi + di, pj + dj
            cy = (qi + 0.5) * s - 0.5
            cx = (qj + 0.5) * s - 0.5
            w_spatial = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) * inv_s2)
            for mm in range(m):
                mass = mass_p[qi + 1, qj + 1, mm]
                color = colors_p[qi + 1, qj + 1, mm]
                dist2 = ((rgb - color) ** 2).sum(axis=-1)
                score = w_spatial * np.exp(-dist2 * inv_r2) * mass
                score_sum += score
                better = score > best_score
                best_depth = np.where(better, depth_p[qi + 1, qj + 1, mm],
                                      best_depth)
                best_score = np.where(better, score, best_score)
    has_candidate = score_sum > 0
    conf = np.where(has_candidate,
                    best_score / np.where(has_candidate, score_sum, 1.0), 0.0)
    depth = np.where(has_candidate, best_depth, 0.0)
    return depth, conf


def confidence_from_histogram(pred: np.ndarray, frame: DToFFrame,
                              sigma_d: float = 2.0) -> np.ndarray:
    """Histogram-matching confidence of a high-resolution prediction.

    Every s x s patch of the prediction is re-rendered to a histogram (uniform
    radiance) and compared to the input histogram with the transport distance;
    the per-patch confidence exp(-err / sigma_d) is broadcast to all patch
    pixels. Patches whose input histogram has no mass get confidence 0.
    """
    if frame.mode != SensorMode.HISTOGRAM:
        raise WrongModeError("confidence requires a histogram-mode frame")
    pred = np.asarray(pred, dtype=np.float64)
    hs, ws = frame.grid_shape
    hei, wid = pred.shape
    if hei % hs or wid % ws or hei // hs != wid // ws:
        raise ValueError("prediction dims must be grid dims times s")
    s = hei // hs
    axis = frame.config.axis
    # keep re-rendered depths representable: confidence is still meaningful
    # for (clamped) out-of-range predictions
    dpb = axis.depth_per_bin
    clipped = np.clip(pred, 0.5 * dpb, axis.max_depth - 0.5 * dpb)
    patches = (clipped.reshape(hs, s, ws, s).transpose(0, 2, 1, 3)
               .reshape(hs * ws, s * s))
    pred_vol = accumulate_histograms(patches, np.ones_like(patches),
                                     frame.config.pulse, axis)
    pred_vol = pred_vol.reshape(hs, ws, axis.num_bins)
    in_total = frame.hist.sum(axis=-1)
    ok = in_total > 0
    pred_cum = np.cumsum(pred_vol / pred_vol.sum(axis=-1, keepdims=True), axis=-1)
    in_cum = np.cumsum(
        frame.hist / np.where(ok, in_total, 1.0)[..., None], axis=-1)
    err = np.abs(pred_cum - in_cum).sum(axis=-1)
    conf = np.where(ok, np.exp(-err / sigma_d), 0.0)
    return np.repeat(np.repeat(conf, s, axis=0), s, axis=1)


def confidence_fuse(d1: np.ndarray, c1: np.ndarray, d2: np.ndarray,
                    c2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Confidence-weighted mean of two predictions.

    Fused depth is the convex combination (c1*d1 + c2*d2) / (c1+c2) and fused
    confidence the elementwise max; pixels where both confidences vanish take
    d1 with confidence 0.
    """
    d1, c1, d2, c2 = (np.asarray(a, dtype=np.float64) for a in (d1, c1, d2, c2))
    if not (d1.shape == c1.shape == d2.shape == c2.shape):
        raise ValueError("fusion inputs must share one shape")
    total = c1 + c2
    ok = total > 1e-9
    d = np.where(ok, (c1 * d1 + c2 * d2) / np.where(ok, total, 1.0), d1)
    # one-sided weights pass the surviving prediction through exactly
    d = np.where(ok & (c2 == 0), d1, d)
    d = np.where(ok & (c1 == 0), d2, d)
    c = np.where(ok, np.maximum(c1, c2), 0.0)
    return d, c


def temporal_fuse(prev_d: np.ndarray, prev_c: np.ndarray, flow: FlowField,
                  cur_d: np.ndarray, cur_c: np.ndarray,
                  decay: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Fuse the previous frame's prediction into the current one.

    The previous depth and confidence are forward-warped into the current
    frame (z-buffered on the previous depth), the warped confidence is decayed
    and the result is merged with confidence_fuse. Pixels the warp does not
    reach pass the current prediction through.
    """
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must lie in [0, 1]")
    stacked = np.stack([np.asarray(prev_d, dtype=np.float64),
                        np.asarray(prev_c, dtype=np.float64)], axis=-1)
    warped, valid = forward_warp_zbuffer(stacked, prev_d, flow)
    warped_c = warped[..., 1] * decay * valid
    return confidence_fuse(cur_d, cur_c, warped[..., 0], warped_c)
