"""Raster, flow, point-cloud and histogram container file formats.

PNG (8-bit RGB guidance, 16-bit millimeter depth), PFM (float rasters,
little-endian, bottom-up rows), Middlebury .flo flow, binary little-endian
PLY point clouds, and the DTFH/DTFC containers for histogram volumes and
compressed histogram grids.
"""

from __future__ import annotations

import struct
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from .errors import FileMissingError, IoFailureError
from .histogram import CompressedGrid, TimeAxis

DTFH_MAGIC = b"DTFH"
DTFC_MAGIC = b"DTFC"
FORMAT_VERSION = 1

FLO_MAGIC = 202021.25
FLO_INVALID = 1e10  # displacement sentinel for unknown flow


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileMissingError(str(path))
    return path


# ---------------------------------------------------------------- PNG

def write_rgb_png(path, rgb: np.ndarray) -> None:
    """RGB in [0, 1] -> 8-bit PNG."""
    data = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    iio.imwrite(Path(path), data, extension=".png")


def read_rgb_png(path) -> np.ndarray:
    data = iio.imread(_require(path))
    if data.ndim == 3 and data.shape[2] == 4:
        data = data[:, :, :3]
    return data.astype(np.float64) / 255.0


def write_depth_png16(path, depth_m: np.ndarray) -> None:
    """Depth in meters -> 16-bit PNG in millimeters (lossy, 0.5 mm)."""
    mm = np.clip(np.round(np.asarray(depth_m) * 1000.0), 0, 65535)
    iio.imwrite(Path(path), mm.astype(np.uint16), extension=".png")


def read_depth_png16(path) -> np.ndarray:
    data = iio.imread(_require(path))
    if data.dtype != np.uint16:
        raise IoFailureError(f"{path}: expected 16-bit depth PNG, got {data.dtype}")
    return data.astype(np.float64) / 1000.0


# ---------------------------------------------------------------- PFM

def write_pfm(path, data: np.ndarray) -> None:
    """Float raster -> PFM ('Pf' grayscale or 'PF' 3-channel, little-endian)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM supports (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale: little-endian
        fh.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(_require(path), "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise IoFailureError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        count = w * h * (3 if header == b"PF" else 1)
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(count * 4), dtype=dtype, count=count)
    shape = (h, w, 3) if header == b"PF" else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


# ---------------------------------------------------------------- FLO

def write_flo(path, uv: np.ndarray, valid: np.ndarray | None = None) -> None:
    """(H, W, 2) pixel displacements -> Middlebury .flo; invalid pixels are
    stored as the 1e10 sentinel."""
    uv = np.asarray(uv, dtype=np.float32)
    h, w = uv.shape[:2]
    if valid is not None:
        uv = uv.copy()
        uv[~np.asarray(valid, dtype=bool)] = FLO_INVALID
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(uv.astype("<f4").tobytes())


def read_flo(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (uv, valid)."""
    with open(_require(path), "rb") as fh:
        magic = struct.unpack("<f", fh.read(4))[0]
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise IoFailureError(f"{path}: bad .flo magic {magic}")
        w, h = struct.unpack("<ii", fh.read(8))
        data = np.frombuffer(fh.read(w * h * 2 * 4), dtype="<f4")
    uv = data.reshape(h, w, 2).astype(np.float64)
    valid = np.isfinite(uv).all(axis=2) & (np.abs(uv) < 1e9).all(axis=2)
    uv = np.where(valid[..., None], uv, 0.0)
    return uv, valid


# ---------------------------------------------------------------- PLY

def write_ply(path, xyz: np.ndarray, rgb: np.ndarray | None = None) -> None:
    """Point cloud -> binary little-endian PLY (xyz float32 + rgb uchar)."""
    xyz = np.asarray(xyz, dtype=np.float32)
    n = len(xyz)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    props = ["property float x", "property float y", "property float z"]
    if rgb is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        props += ["property uchar red", "property uchar green",
                  "property uchar blue"]
    rec = np.empty(n, dtype=fields)
    rec["x"], rec["y"], rec["z"] = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    if rgb is not None:
        col = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = col[:, 0], col[:, 1], col[:, 2]
    header = "\n".join(
        ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
        + props + ["end_header", ""])
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    with open(_require(path), "rb") as fh:
        line = fh.readline().strip()
        if line != b"ply":
            raise IoFailureError(f"{path}: not a PLY file")
        n = 0
        props = []
        while True:
            line = fh.readline().strip()
            if line == b"end_header":
                break
            if line.startswith(b"element vertex"):
                n = int(line.split()[-1])
            elif line.startswith(b"property"):
                props.append(line.split()[-1].decode())
        fields = []
        for name in props:
            fields.append((name, "<f4" if name in ("x", "y", "z") else "u1"))
        rec = np.frombuffer(fh.read(), dtype=fields, count=n)
    xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    rgb = None
    if "red" in props:
        rgb = np.stack([rec["red"], rec["green"], rec["blue"]],
                       axis=1).astype(np.float64) / 255.0
    return xyz, rgb


# ---------------------------------------------------------------- DTFH

_DTFH_HEADER = struct.Struct("<4sIIIId")


def write_dtfh(path, volume: np.ndarray, axis: TimeAxis) -> None:
    """(Hs, Ws, K) histogram volume -> DTFH container (row-major f32 masses)."""
    volume = np.asarray(volume)
    if volume.ndim != 3 or volume.shape[2] != axis.num_bins:
        raise ValueError(f"volume shape {volume.shape} does not match axis")
    rows, cols, k = volume.shape
    with open(path, "wb") as fh:
        fh.write(_DTFH_HEADER.pack(DTFH_MAGIC, FORMAT_VERSION, rows, cols, k,
                                   axis.bin_width))
        fh.write(volume.astype("<f4").tobytes())


def read_dtfh(path) -> tuple[np.ndarray, TimeAxis]:
    with open(_require(path), "rb") as fh:
        raw = fh.read(_DTFH_HEADER.size)
        magic, version, rows, cols, k, t0 = _DTFH_HEADER.unpack(raw)
        if magic != DTFH_MAGIC:
            raise IoFailureError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise IoFailureError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(rows * cols * k * 4), dtype="<f4")
    return data.reshape(rows, cols, k).astype(np.float64), TimeAxis(k, t0)


# ---------------------------------------------------------------- DTFC

_DTFC_HEADER = struct.Struct("<4sIIIIId")


def write_dtfc(path, grid: CompressedGrid) -> None:
    """Compressed histogram grid -> DTFC container.

    Per-pixel record: edges u16 x (2M+1), mass f32 x 2M, peak depths f32 x M.
    """
    rows, cols = grid.grid_shape
    m = grid.section_count
    if grid.axis.num_bins > 0xFFFF:
        raise ValueError("DTFC stores u16 edges; K must be <= 65535")
    rec = np.dtype([("edges", "<u2", (2 * m + 1,)),
                    ("mass", "<f4", (2 * m,)),
                    ("peaks", "<f4", (m,))])
    data = np.empty((rows, cols), dtype=rec)
    data["edges"] = grid.edges
    data["mass"] = grid.mass
    data["peaks"] = grid.peak_depths
    with open(path, "wb") as fh:
        fh.write(_DTFC_HEADER.pack(DTFC_MAGIC, FORMAT_VERSION, rows, cols,
                                   grid.axis.num_bins, m, grid.axis.bin_width))
        fh.write(data.tobytes())


def read_dtfc(path) -> CompressedGrid:
    with open(_require(path), "rb") as fh:
        raw = fh.read(_DTFC_HEADER.size)
        magic, version, rows, cols, k, m, t0 = _DTFC_HEADER.unpack(raw)
        if magic != DTFC_MAGIC:
            raise IoFailureError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise IoFailureError(f"{path}: unsupported version {version}")
        rec = np.dtype([("edges", "<u2", (2 * m + 1,)),
                        ("mass", "<f4", (2 * m,)),
                        ("peaks", "<f4", (m,))])
        data = np.frombuffer(fh.read(rows * cols * rec.itemsize), dtype=rec)
    data = data.reshape(rows, cols)
    axis = TimeAxis(k, t0)
    edges = data["edges"].astype(np.int64)
    peaks = data["peaks"].astype(np.float64)
    peak_bins = np.clip((peaks / axis.depth_per_bin - 0.5).round(), 0,
                        k - 1).astype(np.int64)
    return CompressedGrid(axis, m, edges, data["mass"].astype(np.float64),
                          peak_bins, peaks)
