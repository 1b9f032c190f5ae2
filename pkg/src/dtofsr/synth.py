"""Procedural RGB-D test scenes with analytic ground truth.

Ray-casts planes and axis-aligned boxes through a pinhole camera (x right,
y down, z forward; poses are camera-to-world) and emits per frame: shaded RGB,
z-depth, camera-frame normals, scalar albedo, exact forward flow derived from
the geometry and camera/object motion, the pose, and a primitive id map.
Shading uses a fixed directional light that is deliberately not co-located
with the camera, so image intensity and physically rendered radiance diverge
on oblique surfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError
from .metrics import FlowField

_EPS = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "Intrinsics":
        f = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0)


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    albedo: tuple
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Box:
    bmin: tuple
    bmax: tuple
    albedo: tuple
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CameraPath:
    """Linear camera trajectory: eye(t) = start + t * velocity.

    With look_at set the camera re-aims at the target every frame; otherwise
    the orientation is fixed to the world axes (+z forward).
    """

    start: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    look_at: tuple | None = None
    up: tuple = (0.0, -1.0, 0.0)

    def pose_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Returns (rotation camera->world, eye)."""
        eye = np.asarray(self.start, dtype=np.float64) + t * np.asarray(
            self.velocity, dtype=np.float64)
        if self.look_at is None:
            return np.eye(3), eye
        fwd = np.asarray(self.look_at, dtype=np.float64) - eye
        n = np.linalg.norm(fwd)
        if n < _EPS:
            raise InvalidSpecError("camera coincides with its look_at target")
        fwd = fwd / n
        down = -np.asarray(self.up, dtype=np.float64)
        right = np.cross(down, fwd)
        rn = np.linalg.norm(right)
        if rn < _EPS:
            raise InvalidSpecError("camera up vector is parallel to the view axis")
        right = right / rn
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd], axis=1), eye


@dataclass
class SceneSpec:
    width: int
    height: int
    frame_count: int
    intrinsics: Intrinsics
    camera: CameraPath
    primitives: list
    light_dir: tuple = (0.45, -0.6, -0.66)
    ambient: float = 0.15
    rgb_noise: float = 0.0
    clip_range: tuple = (0.0, 40.0)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidSpecError("image dims must be positive")
        if self.frame_count < 1:
            raise InvalidSpecError("frame_count must be >= 1")
        if not self.primitives:
            raise InvalidSpecError("scene has no primitives")
        if np.linalg.norm(self.light_dir) < _EPS:
            raise InvalidSpecError("light_dir must be nonzero")
        if not 0.0 <= self.ambient < 1.0:
            raise InvalidSpecError("ambient must lie in [0, 1)")
        for t in range(self.frame_count):
            _, eye = self.camera.pose_at(t)
            for prim in self.primitives:
                off = t * np.asarray(prim.velocity, dtype=np.float64)
                if isinstance(prim, Box):
                    lo = np.asarray(prim.bmin) + off - 1e-6
                    hi = np.asarray(prim.bmax) + off + 1e-6
                    if np.all(eye > lo) and np.all(eye < hi):
                        raise InvalidSpecError(
                            f"camera enters box at frame {t}")
                else:
                    n = np.asarray(prim.normal, dtype=np.float64)
                    d = abs(np.dot(n / np.linalg.norm(n),
                                   eye - np.asarray(prim.point) - off))
                    if d < 1e-6:
                        raise InvalidSpecError(
                            f"camera lies on plane at frame {t}")


@dataclass
class SynthFrame:
    rgb: np.ndarray        # (H, W, 3) in [0, 1]
    depth: np.ndarray      # (H, W) meters (camera z)
    normal: np.ndarray     # (H, W, 3) unit, camera frame
    albedo: np.ndarray     # (H, W) scalar
    pose: np.ndarray       # (4, 4) camera-to-world
    prim_id: np.ndarray    # (H, W) int
    flow: FlowField | None = None  # exact flow to the next frame


def _intersect_plane(plane: Plane, offset, origin, dirs):
    n = np.asarray(plane.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    p = np.asarray(plane.point, dtype=np.float64) + offset
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.dot(p - origin, n) / denom
    valid = (np.abs(denom) > _EPS) & (t > _EPS)
    normals = np.broadcast_to(n, dirs.shape)
    return np.where(valid, t, np.inf), valid, normals


def _intersect_box(box: Box, offset, origin, dirs):
    lo = np.asarray(box.bmin, dtype=np.float64) + offset - origin
    hi = np.asarray(box.bmax, dtype=np.float64) + offset - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = lo / dirs
        t_hi = hi / dirs
    # a zero direction component hits the slab iff the origin lies inside it
    deg = np.abs(dirs) < _EPS
    inside = (origin >= np.asarray(box.bmin) + offset) & \
             (origin <= np.asarray(box.bmax) + offset)
    neg_inf = np.full_like(t_lo, -np.inf)
    pos_inf = np.full_like(t_lo, np.inf)
    t_min = np.where(deg, np.where(inside, neg_inf, pos_inf),
                     np.minimum(t_lo, t_hi))
    t_max = np.where(deg, np.where(inside, pos_inf, neg_inf),
                     np.maximum(t_lo, t_hi))
    t_near = t_min.max(axis=-1)
    t_far = t_max.min(axis=-1)
    valid = (t_far >= t_near) & (t_near > _EPS)
    axis = t_min.argmax(axis=-1)
    sign = -np.sign(np.take_along_axis(dirs, axis[..., None], axis=-1))[..., 0]
    normals = np.zeros(dirs.shape)
    np.put_along_axis(normals, axis[..., None], sign[..., None], axis=-1)
    return np.where(valid, t_near, np.inf), valid, normals


def _raycast(spec: SceneSpec, t: int):
    """Returns (depth, normals_world, albedo_rgb, prim_id, velocity, rot, eye)."""
    rot, eye = spec.camera.pose_at(t)
    h, w = spec.height, spec.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(us - spec.intrinsics.cx) / spec.intrinsics.fx,
                         (vs - spec.intrinsics.cy) / spec.intrinsics.fy,
                         np.ones_like(us)], axis=-1)
    dirs = dirs_cam @ rot.T  # z component of dirs_cam is 1 -> ray param = depth

    depth = np.full((h, w), np.inf)
    prim_id = np.full((h, w), -1, dtype=np.int64)
    normals = np.zeros((h, w, 3))
    albedo = np.zeros((h, w, 3))
    velocity = np.zeros((h, w, 3))
    for idx, prim in enumerate(spec.primitives):
        off = t * np.asarray(prim.velocity, dtype=np.float64)
        if isinstance(prim, Box):
            t_hit, valid, n = _intersect_box(prim, off, eye, dirs)
        else:
            t_hit, valid, n = _intersect_plane(prim, off, eye, dirs)
        closer = valid & (t_hit < depth)
        depth = np.where(closer, t_hit, depth)
        prim_id = np.where(closer, idx, prim_id)
        normals = np.where(closer[..., None], n, normals)
        albedo = np.where(closer[..., None],
                          np.asarray(prim.albedo, dtype=np.float64), albedo)
        velocity = np.where(closer[..., None],
                            np.asarray(prim.velocity, dtype=np.float64), velocity)
    if np.any(prim_id < 0):
        raise InvalidSpecError("scene does not cover the full field of view")
    if np.any(depth >= spec.clip_range[1]):
        raise InvalidSpecError(
            f"scene depth exceeds clip range {spec.clip_range[1]} m")
    return depth, normals, albedo, prim_id, velocity, rot, eye, dirs


def _project(points_world, rot, eye, intr):
    q = (points_world - eye) @ rot  # camera coords (rot is camera->world)
    z = q[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * q[..., 0] / z + intr.cx
        v = intr.fy * q[..., 1] / z + intr.cy
    return u, v, z


def render_frame(spec: SceneSpec, t: int, rng: np.random.Generator) -> SynthFrame:
    depth, n_world, albedo_rgb, prim_id, vel, rot, eye, dirs = _raycast(spec, t)
    light = np.asarray(spec.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    shade = spec.ambient + (1.0 - spec.ambient) * np.maximum(
        n_world @ light, 0.0)
    rgb = albedo_rgb * shade[..., None]
    if spec.rgb_noise > 0:
        rgb = rgb + spec.rgb_noise * rng.standard_normal(rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)

    pose = np.eye(4)
    pose[:3, :3] = rot
    pose[:3, 3] = eye

    flow = None
    if t + 1 < spec.frame_count:
        points = eye + depth[..., None] * dirs
        rot1, eye1 = spec.camera.pose_at(t + 1)
        u1, v1, z1 = _project(points + vel, rot1, eye1, spec.intrinsics)
        h, w = depth.shape
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        valid = z1 > _EPS
        uv = np.stack([np.where(valid, u1 - us, 0.0),
                       np.where(valid, v1 - vs, 0.0)], axis=-1)
        flow = FlowField(uv, valid)

    return SynthFrame(rgb=rgb, depth=depth, normal=n_world @ rot,
                      albedo=albedo_rgb.mean(axis=-1), pose=pose,
                      prim_id=prim_id, flow=flow)


def synth_scene(spec: SceneSpec, seed: int = 0) -> list[SynthFrame]:
    """Render all frames of a scene; deterministic given the seed."""
    spec.validate()
    frames = []
    for t in range(spec.frame_count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        frames.append(render_frame(spec, t, rng))
    return frames


# ------------------------------------------------------------ JSON spec files

_SPEC_KEYS = {"width", "height", "frame_count", "fov_deg", "intrinsics",
              "camera", "primitives", "light_dir", "ambient", "rgb_noise",
              "clip_range"}
_CAMERA_KEYS = {"start", "velocity", "look_at", "up"}
_PRIM_KEYS = {"type", "point", "normal", "min", "max", "albedo", "velocity"}


def _vec(value, name, n=3):
    try:
        out = tuple(float(x) for x in value)
    except (TypeError, ValueError) as exc:
        raise InvalidSpecError(f"{name} must be a {n}-vector") from exc
    if len(out) != n:
        raise InvalidSpecError(f"{name} must have {n} components")
    return out


def scene_spec_from_dict(data: dict) -> SceneSpec:
    unknown = set(data) - _SPEC_KEYS
    if unknown:
        raise InvalidSpecError(f"unknown scene keys: {sorted(unknown)}")
    for key in ("width", "height", "frame_count", "primitives"):
        if key not in data:
            raise InvalidSpecError(f"scene spec missing {key!r}")
    width, height = int(data["width"]), int(data["height"])
    if "intrinsics" in data:
        intr = Intrinsics.from_dict(data["intrinsics"])
    else:
        intr = Intrinsics.from_fov(width, height, float(data.get("fov_deg", 55.0)))
    cam_d = data.get("camera", {})
    unknown = set(cam_d) - _CAMERA_KEYS
    if unknown:
        raise InvalidSpecError(f"unknown camera keys: {sorted(unknown)}")
    camera = CameraPath(
        start=_vec(cam_d.get("start", (0, 0, 0)), "camera.start"),
        velocity=_vec(cam_d.get("velocity", (0, 0, 0)), "camera.velocity"),
        look_at=None if cam_d.get("look_at") is None
        else _vec(cam_d["look_at"], "camera.look_at"),
        up=_vec(cam_d.get("up", (0, -1, 0)), "camera.up"))
    prims = []
    for i, p in enumerate(data["primitives"]):
        unknown = set(p) - _PRIM_KEYS
        if unknown:
            raise InvalidSpecError(f"unknown primitive keys: {sorted(unknown)}")
        kind = p.get("type")
        albedo = _vec(p.get("albedo", (0.5, 0.5, 0.5)), "albedo")
        velocity = _vec(p.get("velocity", (0, 0, 0)), "velocity")
        if kind == "plane":
            prims.append(Plane(_vec(p["point"], "point"),
                               _vec(p["normal"], "normal"), albedo, velocity))
        elif kind == "box":
            prims.append(Box(_vec(p["min"], "min"), _vec(p["max"], "max"),
                             albedo, velocity))
        else:
            raise InvalidSpecError(f"primitive {i}: unknown type {kind!r}")
    clip = data.get("clip_range", (0.0, 40.0))
    return SceneSpec(width=width, height=height,
                     frame_count=int(data["frame_count"]), intrinsics=intr,
                     camera=camera, primitives=prims,
                     light_dir=_vec(data.get("light_dir", (0.45, -0.6, -0.66)),
                                    "light_dir"),
                     ambient=float(data.get("ambient", 0.15)),
                     rgb_noise=float(data.get("rgb_noise", 0.0)),
                     clip_range=(float(clip[0]), float(clip[1])))


def load_scene_spec(path) -> SceneSpec:
    path = Path(path)
    if not path.is_file():
        raise InvalidSpecError(f"scene spec not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSpecError(f"{path}: {exc}") from exc
    return scene_spec_from_dict(data)
