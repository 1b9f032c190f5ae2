"""Per-pixel dToF histogram math.

A histogram is the photon mass recorded by one low-resolution dToF pixel over
K time bins. This module owns the histogram types and everything that happens
to a single histogram (or a batch of them): synthesis from a depth/radiance
patch, peak detection, noise-floor thresholding, section-wise compression into
2M bins, cumulative transforms and the 1-D transport distance between
histograms.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import erf

from .errors import (
    AxisMismatchError,
    BadSectionCountError,
    DepthOutOfRangeError,
    NoSignalError,
    ZeroMassError,
)

SPEED_OF_LIGHT = 299792458.0  # m/s

DEFAULT_NUM_BINS = 1024
DEFAULT_MAX_DEPTH = 40.0  # meters

_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
_GAUSS_SUPPORT_SIGMAS = 3.0
_SQRT2 = np.sqrt(2.0)


class PulseShape(str, Enum):
    DELTA = "delta"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class TimeAxis:
    """Discretized time axis of a histogram: K bins of width bin_width seconds."""

    num_bins: int
    bin_width: float

    def __post_init__(self):
        if self.num_bins < 2:
            raise ValueError(f"num_bins must be >= 2, got {self.num_bins}")
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be positive, got {self.bin_width}")

    @property
    def depth_per_bin(self) -> float:
        return SPEED_OF_LIGHT * self.bin_width / 2.0

    @property
    def max_depth(self) -> float:
        return self.num_bins * self.depth_per_bin

    def bin_center_depth(self, k):
        """Depth of the center of bin k (bin-center convention)."""
        return (np.asarray(k) + 0.5) * self.depth_per_bin

    @classmethod
    def for_depth_range(cls, max_depth: float = DEFAULT_MAX_DEPTH,
                        num_bins: int = DEFAULT_NUM_BINS) -> "TimeAxis":
        """Axis whose K bins exactly cover [0, max_depth] meters."""
        return cls(num_bins, 2.0 * max_depth / (SPEED_OF_LIGHT * num_bins))


def default_axis() -> TimeAxis:
    return TimeAxis.for_depth_range()


@dataclass(frozen=True)
class Pulse:
    """Laser pulse temporal shape. Gaussian support is truncated at +/-3 sigma."""

    shape: PulseShape
    fwhm: float | None = None  # seconds, Gaussian only

    def __post_init__(self):
        if self.shape == PulseShape.GAUSSIAN:
            if self.fwhm is None or not self.fwhm > 0:
                raise ValueError("Gaussian pulse requires fwhm > 0")

    @property
    def sigma(self) -> float:
        if self.shape != PulseShape.GAUSSIAN:
            raise ValueError("sigma is only defined for Gaussian pulses")
        return self.fwhm * _FWHM_TO_SIGMA

    @classmethod
    def delta(cls) -> "Pulse":
        return cls(PulseShape.DELTA)

    @classmethod
    def gaussian(cls, fwhm: float) -> "Pulse":
        return cls(PulseShape.GAUSSIAN, fwhm)


@dataclass
class Histogram:
    """K-bin photon-mass signal of a single dToF pixel."""

    axis: TimeAxis
    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.mass.shape != (self.axis.num_bins,):
            raise ValueError(
                f"mass shape {self.mass.shape} does not match K={self.axis.num_bins}")
        if not np.all(np.isfinite(self.mass)):
            raise ValueError("histogram mass contains NaN/Inf")
        if np.any(self.mass < 0):
            raise ValueError("histogram mass contains negative entries")

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())


@dataclass
class CompressedHistogram:
    """Rebinned histogram: 2M bins bounded by section edges and peak positions.

    ``edges`` has 2M+1 monotonically increasing bin indices into [0, K],
    ``mass`` the rebinned photon mass per output bin, ``peak_bins`` /
    ``peak_depths`` the per-section detected peaks (bin-center depths).
    If the source K was not divisible by M the axis reflects the zero-padded
    length.
    """

    axis: TimeAxis
    section_count: int
    edges: np.ndarray
    mass: np.ndarray
    peak_bins: np.ndarray
    peak_depths: np.ndarray

    def __post_init__(self):
        m = self.section_count
        self.edges = np.asarray(self.edges, dtype=np.int64)
        self.mass = np.asarray(self.mass, dtype=np.float64)
        self.peak_bins = np.asarray(self.peak_bins, dtype=np.int64)
        self.peak_depths = np.asarray(self.peak_depths, dtype=np.float64)
        if self.edges.shape != (2 * m + 1,):
            raise ValueError("expected 2M+1 edges")
        if self.mass.shape != (2 * m,):
            raise ValueError("expected 2M masses")
        if self.peak_bins.shape != (m,) or self.peak_depths.shape != (m,):
            raise ValueError("expected M peaks")
        if self.edges[0] != 0 or self.edges[-1] != self.axis.num_bins:
            raise ValueError("edges must span [0, K]")
        if np.any(np.diff(self.edges) < 0):
            raise ValueError("edges must be non-decreasing")

    def support_mass(self) -> np.ndarray:
        """Rebinned mass of the output bin containing each peak (M values)."""
        b = np.searchsorted(self.edges, self.peak_bins, side="right") - 1
        return self.mass[b]


def cumulative(h: Histogram) -> np.ndarray:
    """Prefix-sum of the histogram mass; out[-1] equals the total mass."""
    return np.cumsum(h.mass)


def wasserstein_distance(h: Histogram, h_hat: Histogram) -> float:
    """1-D transport distance between two histograms, in bin units.

    Both inputs are normalized to unit mass, then the distance is the L1 norm
    of the difference of their cumulative vectors, which equals the 1-D
    optimal-transport cost.
    """
    if h.axis != h_hat.axis:
        raise AxisMismatchError(
            f"histograms have different axes: {h.axis} vs {h_hat.axis}")
    t_a, t_b = h.mass.sum(), h_hat.mass.sum()
    if not t_a > 0 or not t_b > 0:
        raise ZeroMassError("cannot compare a histogram with zero total mass")
    c_a = np.cumsum(h.mass / t_a)
    c_b = np.cumsum(h_hat.mass / t_b)
    return float(np.abs(c_a - c_b).sum())


def peak_detect(h: Histogram) -> tuple[int, float, float]:
    """Strongest-signal bin of a histogram.

    Returns (bin_index, depth, peak_mass). Ties resolve to the lowest bin
    index; depth uses the bin-center convention.
    """
    if not h.mass.sum() > 0:
        raise NoSignalError("histogram has no signal")
    k = int(np.argmax(h.mass))
    return k, float(h.axis.bin_center_depth(k)), float(h.mass[k])


def threshold_floor(h: Histogram, noise_floor: float) -> Histogram:
    """Zero out every bin whose mass is not strictly above the noise floor."""
    if noise_floor < 0:
        raise ValueError("noise_floor must be >= 0")
    return Histogram(h.axis, np.where(h.mass > noise_floor, h.mass, 0.0))


def _compress_volume(volume: np.ndarray, axis: TimeAxis, section_count: int,
                     noise_floor: float):
    """Section-wise compression of a (..., K) volume of histograms.

    Returns (axis_out, edges (..., 2M+1), mass (..., 2M), peak_bins (..., M)).
    axis_out reflects zero padding when K is not divisible by M.
    """
    m = section_count
    k = axis.num_bins
    if m < 1 or 2 * m > k:
        raise BadSectionCountError(
            f"section count must satisfy 1 <= M <= K/2, got M={m}, K={k}")
    mass = np.where(volume > noise_floor, volume, 0.0)
    if k % m:
        pad = m - k % m
        mass = np.concatenate(
            [mass, np.zeros(mass.shape[:-1] + (pad,), dtype=mass.dtype)], axis=-1)
        k += pad
        axis = TimeAxis(k, axis.bin_width)
    length = k // m
    lead = mass.shape[:-1]
    sections = mass.reshape(lead + (m, length))
    peak_rel = sections.argmax(axis=-1)  # first max: lowest-index tie-break
    empty = ~(sections.sum(axis=-1) > 0)
    peak_rel = np.where(empty, length // 2, peak_rel)
    starts = np.arange(m, dtype=np.int64) * length
    peak_bins = peak_rel + starts
    # a peak on its section boundary would duplicate that edge; reinsert the
    # section midpoint so every section still contributes two output bins
    interior = np.where(peak_bins == starts, starts + length // 2, peak_bins)
    edges = np.empty(lead + (2 * m + 1,), dtype=np.int64)
    edges[..., 0:2 * m:2] = starts
    edges[..., 1:2 * m:2] = interior
    edges[..., -1] = k
    csum = np.concatenate(
        [np.zeros(lead + (1,), dtype=np.float64), np.cumsum(mass, axis=-1)], axis=-1)
    out_mass = (np.take_along_axis(csum, edges[..., 1:], axis=-1)
                - np.take_along_axis(csum, edges[..., :-1], axis=-1))
    return axis, edges, out_mass, peak_bins


def compress(h: Histogram, section_count: int,
             noise_floor: float = 0.0) -> CompressedHistogram:
    """Threshold, split into M equal sections, detect one peak per section and
    rebin into the 2M bins bounded by section boundaries and peak positions.

    Sections with no mass report the section midpoint as their peak. Total
    mass is conserved relative to the thresholded input.
    """
    axis, edges, mass, peak_bins = _compress_volume(
        h.mass[None, :], h.axis, section_count, noise_floor)
    return CompressedHistogram(
        axis, section_count, edges[0], mass[0], peak_bins[0],
        axis.bin_center_depth(peak_bins[0]))


@dataclass
class CompressedGrid:
    """A (Hs, Ws) grid of compressed histograms stored as stacked arrays."""

    axis: TimeAxis
    section_count: int
    edges: np.ndarray        # (Hs, Ws, 2M+1) int
    mass: np.ndarray         # (Hs, Ws, 2M)
    peak_bins: np.ndarray    # (Hs, Ws, M) int
    peak_depths: np.ndarray  # (Hs, Ws, M)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.edges.shape[0], self.edges.shape[1]

    def cell(self, i: int, j: int) -> CompressedHistogram:
        return CompressedHistogram(
            self.axis, self.section_count, self.edges[i, j], self.mass[i, j],
            self.peak_bins[i, j], self.peak_depths[i, j])

    def support_mass(self) -> np.ndarray:
        """(Hs, Ws, M) rebinned mass of the output bin containing each peak."""
        inner = self.edges[..., :-1]
        ge = inner[..., :, None] <= self.peak_bins[..., None, :]
        lt = self.peak_bins[..., None, :] < self.edges[..., 1:][..., :, None]
        b = np.argmax(ge & lt, axis=-2)
        return np.take_along_axis(self.mass, b, axis=-1)


def compress_grid(volume: np.ndarray, axis: TimeAxis, section_count: int,
                  noise_floor: float = 0.0) -> CompressedGrid:
    """Compress every histogram of a (Hs, Ws, K) volume; see compress()."""
    if volume.ndim != 3:
        raise ValueError(f"expected (Hs, Ws, K) volume, got {volume.shape}")
    axis_out, edges, mass, peak_bins = _compress_volume(
        np.asarray(volume, dtype=np.float64), axis, section_count, noise_floor)
    return CompressedGrid(axis_out, section_count, edges, mass, peak_bins,
                          axis_out.bin_center_depth(peak_bins))


def accumulate_histograms(depths: np.ndarray, radiances: np.ndarray,
                          pulse: Pulse, axis: TimeAxis) -> np.ndarray:
    """Batched histogram synthesis: (P, n) depths/radiances -> (P, K) masses.

    Each scene sample deposits its radiance along the time axis according to
    the pulse shape: a delta pulse lands entirely in one bin, a Gaussian pulse
    spreads over the bins covered by +/-3 sigma (tails clamped into the
    boundary bins so mass is conserved exactly).
    """
    depths = np.asarray(depths, dtype=np.float64)
    radiances = np.asarray(radiances, dtype=np.float64)
    if depths.shape != radiances.shape:
        raise ValueError("depth and radiance batches must have the same shape")
    p, n = depths.shape
    k = axis.num_bins
    pix_base = np.repeat(np.arange(p, dtype=np.int64) * k, n)
    flat_rad = radiances.reshape(-1)

    if pulse.shape == PulseShape.DELTA:
        bins = np.floor(depths / axis.depth_per_bin).astype(np.int64).reshape(-1)
        if np.any(depths <= 0) or np.any(bins >= k):
            raise DepthOutOfRangeError(
                "depth outside (0, K*c*t0/2) under delta pulse")
        out = np.bincount(pix_base + bins, weights=flat_rad, minlength=p * k)
        return out.reshape(p, k)

    sigma = pulse.sigma
    t0 = axis.bin_width
    center = (2.0 * depths / SPEED_OF_LIGHT).reshape(-1)
    lo = center - _GAUSS_SUPPORT_SIGMAS * sigma
    hi = center + _GAUSS_SUPPORT_SIGMAS * sigma
    k_lo = np.floor(lo / t0).astype(np.int64)
    k_hi = np.floor(hi / t0).astype(np.int64)
    width = int((k_hi - k_lo).max()) + 1

    def trunc_cdf(t):
        z = np.clip((t - center) / sigma, -_GAUSS_SUPPORT_SIGMAS,
                    _GAUSS_SUPPORT_SIGMAS)
        lo_v = erf(-_GAUSS_SUPPORT_SIGMAS / _SQRT2)
        hi_v = erf(_GAUSS_SUPPORT_SIGMAS / _SQRT2)
        return (erf(z / _SQRT2) - lo_v) / (hi_v - lo_v)

    out = np.zeros(p * k, dtype=np.float64)
    prev = trunc_cdf(k_lo * t0)
    for j in range(width):
        kk = k_lo + j
        cur = trunc_cdf((kk + 1) * t0)
        frac = np.where(kk <= k_hi, cur - prev, 0.0)
        prev = cur
        target = np.clip(kk, 0, k - 1)  # clamp tails into boundary bins
        np.add.at(out, pix_base + target, flat_rad * frac)
    return out.reshape(p, k)


def depth_patch_to_histogram(depth_patch: np.ndarray, radiance_patch: np.ndarray,
                             pulse: Pulse, axis: TimeAxis) -> Histogram:
    """Histogram of one dToF pixel whose field of view covers the given patch."""
    depth_patch = np.asarray(depth_patch, dtype=np.float64)
    radiance_patch = np.asarray(radiance_patch, dtype=np.float64)
    if depth_patch.shape != radiance_patch.shape:
        raise ValueError("depth and radiance patches must have the same shape")
    if np.any(radiance_patch < 0):
        raise ValueError("radiance must be non-negative")
    out = accumulate_histograms(depth_patch.reshape(1, -1),
                                radiance_patch.reshape(1, -1), pulse, axis)
    return Histogram(axis, out[0])
