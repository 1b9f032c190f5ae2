"""Full-frame dToF sensor simulation.

Partitions a high-resolution depth/radiance frame into non-overlapping s x s
patches (one per dToF pixel) and synthesizes either the histogram volume
(H/s, W/s, K) or the peak-detected low-resolution depth map. Radiance comes
either from the grayscale approximation of the RGB guidance or from the
physical rendering relation r = albedo * max(<n, v>, 0) / d^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DepthOutOfRangeError,
    DimensionNotDivisibleError,
    NonPositiveDepthError,
    NonUnitVectorError,
    WrongModeError,
)
from .histogram import (
    Histogram,
    Pulse,
    TimeAxis,
    accumulate_histograms,
    default_axis,
)


class SensorMode(str, Enum):
    HISTOGRAM = "hist"
    PEAK = "peak"


class RadianceMode(str, Enum):
    GRAYSCALE_APPROX = "gray"
    PHYSICAL_RENDERING = "physical"


@dataclass(frozen=True)
class ShotNoise:
    """Poisson photon noise: each pixel's histogram is scaled to an expected
    photon_budget counts and resampled, seeded per (frame, pixel)."""

    photon_budget: float
    rng_seed: int = 0

    def __post_init__(self):
        if not self.photon_budget > 0:
            raise ValueError("photon_budget must be positive")


@dataclass(frozen=True)
class SensorConfig:
    downsample_factor: int = 16
    axis: TimeAxis = None
    pulse: Pulse = None
    radiance_mode: RadianceMode = RadianceMode.GRAYSCALE_APPROX
    shot_noise: ShotNoise | None = None

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ValueError("downsample_factor must be >= 1")
        if self.axis is None:
            object.__setattr__(self, "axis", default_axis())
        if self.pulse is None:
            object.__setattr__(self, "pulse", Pulse.delta())


@dataclass
class DToFFrame:
    """One simulated dToF frame: a (H/s, W/s) grid of histograms or peaks."""

    mode: SensorMode
    config: SensorConfig
    hist: np.ndarray | None = None        # (Hs, Ws, K), histogram mode
    peak_depth: np.ndarray | None = None  # (Hs, Ws) meters, peak mode
    peak_mass: np.ndarray | None = None
    valid: np.ndarray | None = None
    frame_index: int = 0

    @property
    def grid_shape(self) -> tuple[int, int]:
        src = self.hist if self.mode == SensorMode.HISTOGRAM else self.peak_depth
        return src.shape[0], src.shape[1]

    def histogram_at(self, i: int, j: int) -> Histogram:
        if self.mode != SensorMode.HISTOGRAM:
            raise WrongModeError("frame does not carry histogram data")
        return Histogram(self.config.axis, self.hist[i, j])


def grayscale_radiance(rgb: np.ndarray) -> np.ndarray:
    """Radiance approximation from RGB guidance: per-pixel channel mean."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) rgb, got {rgb.shape}")
    return rgb.mean(axis=2)


def radiance_map(albedo: np.ndarray, normal: np.ndarray, view_dir: np.ndarray,
                 depth: np.ndarray) -> np.ndarray:
    """Physical radiance r = albedo * max(<n, v>, 0) / d^2.

    ``view_dir`` points from the surface toward the sensor (laser and receiver
    are co-located, so it is also the illumination direction). Surfaces facing
    away receive zero radiance.
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    view_dir = np.asarray(view_dir, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise NonPositiveDepthError("physical radiance requires depth > 0")
    for name, vec in (("normal", normal), ("view_dir", view_dir)):
        norms = np.linalg.norm(vec, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise NonUnitVectorError(f"{name} vectors are not unit length")
    cos = np.maximum((normal * view_dir).sum(axis=-1), 0.0)
    return albedo * cos / depth ** 2


def _to_patches(frame: np.ndarray, s: int) -> np.ndarray:
    """(H, W) -> (Hs*Ws, s*s) with row-major pixel order inside each patch."""
    h, w = frame.shape
    return (frame.reshape(h // s, s, w // s, s)
            .transpose(0, 2, 1, 3)
            .reshape(-1, s * s))


def _apply_shot_noise(volume: np.ndarray, noise: ShotNoise,
                      frame_index: int) -> np.ndarray:
    hs, ws, k = volume.shape
    out = np.zeros_like(volume)
    for i in range(hs):
        for j in range(ws):
            total = volume[i, j].sum()
            if not total > 0:
                continue
            lam = volume[i, j] * (noise.photon_budget / total)
            rng = np.random.default_rng(
                np.random.SeedSequence([noise.rng_seed, frame_index, i, j]))
            out[i, j] = rng.poisson(lam).astype(np.float64)
    return out


def simulate_frame(depth: np.ndarray, radiance: np.ndarray, config: SensorConfig,
                   mode: SensorMode = SensorMode.HISTOGRAM,
                   frame_index: int = 0) -> DToFFrame:
    """Simulate one low-resolution dToF frame from high-resolution inputs.

    Each dToF pixel integrates the radiance of its s x s patch along the time
    axis. Noise-free simulation conserves per-patch mass exactly; with
    shot_noise configured, bins are replaced by Poisson draws seeded
    deterministically per (frame, pixel).
    """
    depth = np.asarray(depth, dtype=np.float64)
    radiance = np.asarray(radiance, dtype=np.float64)
    if depth.shape != radiance.shape or depth.ndim != 2:
        raise ValueError("depth and radiance must be 2-D arrays of equal shape")
    s = config.downsample_factor
    h, w = depth.shape
    if h % s or w % s:
        raise DimensionNotDivisibleError(
            f"frame dims {h}x{w} not divisible by s={s}")
    axis = config.axis
    if np.any(depth <= 0) or np.any(depth >= axis.max_depth):
        raise DepthOutOfRangeError(
            f"depths must lie in (0, {axis.max_depth:.3f}) m")
    volume = accumulate_histograms(_to_patches(depth, s), _to_patches(radiance, s),
                                   config.pulse, axis)
    volume = volume.reshape(h // s, w // s, axis.num_bins)
    if config.shot_noise is not None:
        volume = _apply_shot_noise(volume, config.shot_noise, frame_index)
    frame = DToFFrame(SensorMode.HISTOGRAM, config, hist=volume,
                      frame_index=frame_index)
    if mode == SensorMode.PEAK:
        depth_lr, valid = peak_mode_frame(frame)
        k = volume.argmax(axis=-1)
        mass = np.take_along_axis(volume, k[..., None], axis=-1)[..., 0]
        frame = DToFFrame(SensorMode.PEAK, config, peak_depth=depth_lr,
                          peak_mass=np.where(valid, mass, 0.0), valid=valid,
                          frame_index=frame_index)
    return frame


def peak_mode_frame(frame: DToFFrame) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel peak detection over a histogram-mode frame.

    Returns (depth, valid); pixels whose histogram carries no signal are
    marked invalid with depth 0.
    """
    if frame.mode != SensorMode.HISTOGRAM:
        raise WrongModeError("peak extraction requires a histogram-mode frame")
    axis = frame.config.axis
    volume = frame.hist
    valid = volume.sum(axis=-1) > 0
    k = volume.argmax(axis=-1)  # first max: lowest-index tie-break
    depth = np.where(valid, axis.bin_center_depth(k), 0.0)
    return depth, valid
