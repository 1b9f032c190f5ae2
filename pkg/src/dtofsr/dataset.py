"""Sequence manifests, RGB-D(+flow/normal/albedo/pose) loading, depth
clipping/normalization, sequence chunking and point-cloud export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .errors import (
    FileMissingError,
    ShapeMismatchError,
    UnknownDepthUnitError,
)
from .metrics import FlowField
from .synth import Intrinsics

DEPTH_UNITS = ("float_meters", "millimeter16")
DEFAULT_CLIP_RANGE = (0.0, 40.0)
DEFAULT_CLIP_LENGTH = 7  # frames per training clip

MANIFEST_NAME = "manifest.json"


@dataclass
class FrameRecord:
    rgb_path: str
    depth_path: str
    flow_path: str | None = None
    normal_path: str | None = None
    albedo_path: str | None = None
    pose: np.ndarray | None = None  # (4, 4) camera-to-world

    def to_dict(self):
        return {
            "rgb": self.rgb_path,
            "depth": self.depth_path,
            "flow": self.flow_path,
            "normal": self.normal_path,
            "albedo": self.albedo_path,
            "pose": None if self.pose is None else
            [[float(x) for x in row] for row in self.pose],
        }

    @classmethod
    def from_dict(cls, d):
        pose = d.get("pose")
        return cls(d["rgb"], d["depth"], d.get("flow"), d.get("normal"),
                   d.get("albedo"),
                   None if pose is None else np.asarray(pose, dtype=np.float64))


@dataclass
class SequenceManifest:
    """Ordered per-frame file records plus capture parameters.

    Paths are relative to ``root``. Listed files must exist at load time.
    """

    root: Path
    frames: list
    intrinsics: Intrinsics
    depth_unit: str = "float_meters"
    clip_range: tuple = DEFAULT_CLIP_RANGE

    def __post_init__(self):
        self.root = Path(self.root)
        if self.depth_unit not in DEPTH_UNITS:
            raise UnknownDepthUnitError(self.depth_unit)
        if not self.frames:
            raise ShapeMismatchError("manifest must list at least one frame")

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        doc = {
            "intrinsics": self.intrinsics.to_dict(),
            "depth_unit": self.depth_unit,
            "clip_range": [float(self.clip_range[0]), float(self.clip_range[1])],
            "frames": [f.to_dict() for f in self.frames],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path) -> "SequenceManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.is_file():
            raise FileMissingError(str(path))
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        manifest = cls(
            root=path.parent,
            frames=[FrameRecord.from_dict(d) for d in doc["frames"]],
            intrinsics=Intrinsics.from_dict(doc["intrinsics"]),
            depth_unit=doc.get("depth_unit", "float_meters"),
            clip_range=tuple(doc.get("clip_range", DEFAULT_CLIP_RANGE)),
        )
        for rec in manifest.frames:
            for rel in (rec.rgb_path, rec.depth_path, rec.flow_path,
                        rec.normal_path, rec.albedo_path):
                if rel is not None and not manifest.resolve(rel).is_file():
                    raise FileMissingError(str(manifest.resolve(rel)))
        return manifest


@dataclass
class LoadedFrame:
    rgb: np.ndarray
    depth: np.ndarray
    flow: FlowField | None = None
    normal: np.ndarray | None = None
    albedo: np.ndarray | None = None
    pose: np.ndarray | None = None


def _read_depth(manifest: SequenceManifest, rel: str) -> np.ndarray:
    path = manifest.resolve(rel)
    if manifest.depth_unit == "millimeter16":
        return fileio.read_depth_png16(path)
    if manifest.depth_unit == "float_meters":
        return fileio.read_pfm(path)
    raise UnknownDepthUnitError(manifest.depth_unit)


def load_sequence(manifest: SequenceManifest,
                  require_multiple_of: int | None = None) -> list:
    """Decode every frame of a sequence into memory.

    RGB is returned in [0, 1], depth in meters, flow in pixel displacements.
    Missing optional layers stay ``None``. Raises ShapeMismatch when layer
    dims disagree or are not divisible by ``require_multiple_of``.
    """
    frames = []
    shape = None
    for idx, rec in enumerate(manifest.frames):
        rgb = fileio.read_rgb_png(manifest.resolve(rec.rgb_path))
        depth = _read_depth(manifest, rec.depth_path)
        if shape is None:
            shape = depth.shape
            if require_multiple_of is not None:
                s = require_multiple_of
                if shape[0] % s or shape[1] % s:
                    raise ShapeMismatchError(
                        f"frame dims {shape} not divisible by s={s}")
        if depth.shape != shape or rgb.shape[:2] != shape:
            raise ShapeMismatchError(f"frame {idx}: inconsistent layer dims")
        flow = None
        if rec.flow_path is not None:
            uv, valid = fileio.read_flo(manifest.resolve(rec.flow_path))
            if uv.shape[:2] != shape:
                raise ShapeMismatchError(f"frame {idx}: flow dims differ")
            flow = FlowField(uv, valid)
        normal = albedo = None
        if rec.normal_path is not None:
            normal = fileio.read_pfm(manifest.resolve(rec.normal_path))
            if normal.shape[:2] != shape:
                raise ShapeMismatchError(f"frame {idx}: normal dims differ")
        if rec.albedo_path is not None:
            albedo = fileio.read_pfm(manifest.resolve(rec.albedo_path))
            if albedo.shape[:2] != shape:
                raise ShapeMismatchError(f"frame {idx}: albedo dims differ")
        frames.append(LoadedFrame(rgb=rgb, depth=depth, flow=flow,
                                  normal=normal, albedo=albedo, pose=rec.pose))
    return frames


@dataclass(frozen=True)
class DepthNormalizer:
    """Exact affine map between metric depth and the normalized [0, 1] range."""

    lo: float
    hi: float

    def normalize(self, depth: np.ndarray) -> np.ndarray:
        clipped = np.clip(np.asarray(depth, dtype=np.float64), self.lo, self.hi)
        return (clipped - self.lo) / (self.hi - self.lo)

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(normalized, dtype=np.float64) * (
            self.hi - self.lo)


def clip_and_normalize(depth_seq, clip_range=DEFAULT_CLIP_RANGE):
    """Clamp depths to the clip range and map to [0, 1].

    Returns (normalized sequence, DepthNormalizer with the exact inverse).
    """
    lo, hi = float(clip_range[0]), float(clip_range[1])
    if not lo < hi:
        raise ValueError("clip range must satisfy min < max")
    norm = DepthNormalizer(lo, hi)
    return [norm.normalize(d) for d in depth_seq], norm


def split_into_clips(seq, clip_length: int = DEFAULT_CLIP_LENGTH):
    """Divide a long sequence into consecutive clips of the given length.

    The trailing remainder (shorter than clip_length) is kept as a final clip.
    """
    if clip_length < 1:
        raise ValueError("clip_length must be >= 1")
    return [seq[i:i + clip_length] for i in range(0, len(seq), clip_length)]


def export_pointcloud(depth: np.ndarray, rgb: np.ndarray,
                      intrinsics: Intrinsics, pose: np.ndarray | None = None,
                      mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Back-project valid pixels to 3D and attach colors.

    Camera coordinates follow ((u-cx)*d/fx, (v-cy)*d/fy, d); a camera-to-world
    pose, when given, maps the points into world space.
    """
    depth = np.asarray(depth, dtype=np.float64)
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w = depth.shape
    if mask is None:
        mask = depth > 0
    mask = np.asarray(mask, dtype=bool)
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    d = depth[mask]
    x = (us[mask] - intrinsics.cx) * d / intrinsics.fx
    y = (vs[mask] - intrinsics.cy) * d / intrinsics.fy
    pts = np.stack([x, y, d], axis=1)
    if pose is not None:
        pose = np.asarray(pose, dtype=np.float64)
        pts = pts @ pose[:3, :3].T + pose[:3, 3]
    return pts, rgb[mask]


def write_sequence(frames, intrinsics: Intrinsics, out_dir,
                   depth_unit: str = "float_meters",
                   clip_range=DEFAULT_CLIP_RANGE) -> SequenceManifest:
    """Write rendered frames (rgb/depth/normal/albedo/flow/pose) plus manifest.

    ``frames`` are synth.SynthFrame objects; the last frame has no flow layer.
    """
    if depth_unit not in DEPTH_UNITS:
        raise UnknownDepthUnitError(depth_unit)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for idx, frame in enumerate(frames):
        stem = f"frame_{idx:04d}"
        rgb_rel = f"{stem}_rgb.png"
        fileio.write_rgb_png(out_dir / rgb_rel, frame.rgb)
        if depth_unit == "millimeter16":
            depth_rel = f"{stem}_depth.png"
            fileio.write_depth_png16(out_dir / depth_rel, frame.depth)
        else:
            depth_rel = f"{stem}_depth.pfm"
            fileio.write_pfm(out_dir / depth_rel, frame.depth)
        normal_rel = f"{stem}_normal.pfm"
        fileio.write_pfm(out_dir / normal_rel, frame.normal)
        albedo_rel = f"{stem}_albedo.pfm"
        fileio.write_pfm(out_dir / albedo_rel, frame.albedo)
        flow_rel = None
        if frame.flow is not None:
            flow_rel = f"{stem}_flow.flo"
            fileio.write_flo(out_dir / flow_rel, frame.flow.uv, frame.flow.valid)
        records.append(FrameRecord(rgb_rel, depth_rel, flow_rel, normal_rel,
                                   albedo_rel, frame.pose))
    manifest = SequenceManifest(out_dir, records, intrinsics,
                                depth_unit=depth_unit, clip_range=clip_range)
    manifest.save()
    return manifest
