"""Rendering-free scene simulation producing ground-truth annotations.

Two generation modes mirror how footage of a deployment is gathered:

* Dome: a static object orbited by a camera over a grid of radius,
  elevation and azimuth steps, the camera aimed at the object's origin,
  optionally jittering the field of view per shot.
* Sequence: objects roaming a flat arena under a random-waypoint motion
  model, watched by fixed cameras at a configured frame rate.

No images are produced; each emitted record carries the full ground truth
a training or fusion pipeline needs: the enclosing cuboid in camera and
world frames, the projected screen points, and spherical placement
parameters.  Image paths are emitted as placeholders only.

Generation is driven by a JSON profile with five sections: output,
bundles (object classes with cuboid sizes), domes, sequences, and general
parameters (the seed).  Identical (profile, seed) pairs produce
byte-identical annotation streams.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraRig,
    CuboidMarkers,
    CuboidSpec,
    Pose,
    SphericalParams,
    Vec3,
    compose,
    cuboid_corners,
    cuboid_markers,
    invert,
    look_at_camera_pose,
    matrix_to_euler,
    project,
    spherical_params,
    wrap_angle,
    EulerAngles,
)

__all__ = [
    "ParseError",
    "ValidationError",
    "TooFewRecordsError",
    "OutputConfig",
    "BundleConfig",
    "DomeConfig",
    "SequenceConfig",
    "ProfileConfig",
    "ObjectAnnotation",
    "DatasetManifest",
    "load_profile",
    "parse_profile",
    "serialize_profile",
    "generate_dome",
    "generate_sequence",
    "split_dataset",
    "run_profile",
    "write_annotations",
    "load_annotations",
    "make_annotation",
]


class ParseError(ValueError):
    """Profile document is not valid JSON."""


class ValidationError(ValueError):
    """Profile document violates the schema."""


class TooFewRecordsError(ValueError):
    """Dataset splitting needs at least 10 records."""


def _check_keys(doc: dict, required: set[str], optional: set[str], where: str) -> None:
    if not isinstance(doc, dict):
        raise ValidationError(f"{where}: expected an object")
    keys = set(doc)
    missing = required - keys
    if missing:
        raise ValidationError(f"{where}: missing fields {sorted(missing)}")
    unknown = keys - required - optional
    if unknown:
        raise ValidationError(f"{where}: unknown fields {sorted(unknown)}")


def _pair(doc, where: str, lo_ok=None) -> tuple[float, float]:
    try:
        lo, hi = float(doc[0]), float(doc[1])
    except (TypeError, ValueError, IndexError, KeyError) as exc:
        raise ValidationError(f"{where}: expected [lo, hi]") from exc
    if hi < lo:
        raise ValidationError(f"{where}: hi < lo")
    if lo_ok is not None and lo < lo_ok:
        raise ValidationError(f"{where}: below minimum {lo_ok}")
    return (lo, hi)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "dataset"
    annotations_file: str = "annotations.jsonl"
    manifest_file: str = "manifest.json"
    rigs_file: str = "rigs.json"
    image_format: str = "png"

    @staticmethod
    def parse(doc: dict) -> "OutputConfig":
        _check_keys(doc, set(), {"directory", "annotations_file", "manifest_file",
                                 "rigs_file", "image_format"}, "output")
        return OutputConfig(**{k: str(v) for k, v in doc.items()})

    def to_json_dict(self) -> dict:
        return {"directory": self.directory, "annotations_file": self.annotations_file,
                "manifest_file": self.manifest_file, "rigs_file": self.rigs_file,
                "image_format": self.image_format}


@dataclass(frozen=True)
class BundleConfig:
    bundle_id: str
    class_id: int
    cuboid: CuboidSpec

    @staticmethod
    def parse(doc: dict) -> "BundleConfig":
        _check_keys(doc, {"bundle_id", "class_id", "cuboid_m"}, set(), "bundle")
        c = doc["cuboid_m"]
        _check_keys(c, {"length", "width", "height"}, set(), "bundle.cuboid_m")
        try:
            cuboid = CuboidSpec(float(c["length"]), float(c["width"]), float(c["height"]))
        except ValueError as exc:
            raise ValidationError(f"bundle {doc['bundle_id']}: {exc}") from exc
        return BundleConfig(str(doc["bundle_id"]), int(doc["class_id"]), cuboid)

    def to_json_dict(self) -> dict:
        return {"bundle_id": self.bundle_id, "class_id": self.class_id,
                "cuboid_m": {"length": self.cuboid.length, "width": self.cuboid.width,
                             "height": self.cuboid.height}}


def _parse_intrinsics(doc: dict, where: str) -> CameraIntrinsics:
    _check_keys(doc, {"horizontal_fov_rad", "resolution"}, set(), where)
    res = doc["resolution"]
    try:
        return CameraIntrinsics(float(doc["horizontal_fov_rad"]), int(res[0]), int(res[1]))
    except (ValueError, IndexError, TypeError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _intrinsics_dict(k: CameraIntrinsics) -> dict:
    return {"horizontal_fov_rad": k.horizontal_fov, "resolution": [k.width, k.height]}


@dataclass(frozen=True)
class DomeConfig:
    dome_id: str
    bundle: str
    target_position: Vec3
    target_yaw: float
    radius_m: tuple[float, float]
    radius_steps: int
    azimuth_steps: int
    elevation_rad: tuple[float, float]
    elevation_steps: int
    camera: CameraIntrinsics
    fov_jitter_rad: float = 0.0

    def __post_init__(self):
        if min(self.radius_steps, self.azimuth_steps, self.elevation_steps) < 1:
            raise ValidationError(f"dome {self.dome_id}: step counts must be >= 1")
        if self.radius_m[0] <= 0:
            raise ValidationError(f"dome {self.dome_id}: radius must be positive")
        if self.elevation_rad[0] < 0:
            # Elevation below the base plane would put samples outside prior coverage.
            raise ValidationError(f"dome {self.dome_id}: elevation must be >= 0")
        if self.elevation_rad[1] >= math.pi / 2:
            raise ValidationError(f"dome {self.dome_id}: elevation must stay below pi/2")
        if not 0.0 <= self.fov_jitter_rad <= 0.1:
            raise ValidationError(f"dome {self.dome_id}: fov jitter outside [0, 0.1]")

    @property
    def shot_count(self) -> int:
        return self.radius_steps * self.azimuth_steps * self.elevation_steps

    @staticmethod
    def parse(doc: dict) -> "DomeConfig":
        _check_keys(doc, {"dome_id", "bundle", "target", "orbit", "camera"}, set(), "dome")
        t = doc["target"]
        _check_keys(t, {"position_m"}, {"yaw_rad"}, "dome.target")
        o = doc["orbit"]
        _check_keys(o, {"radius_m", "azimuth_steps", "elevation_rad"},
                    {"radius_steps", "elevation_steps"}, "dome.orbit")
        cam = doc["camera"]
        _check_keys(cam, {"horizontal_fov_rad", "resolution"}, {"fov_jitter_rad"},
                    "dome.camera")
        intr = _parse_intrinsics({"horizontal_fov_rad": cam["horizontal_fov_rad"],
                                  "resolution": cam["resolution"]}, "dome.camera")
        pos = t["position_m"]
        return DomeConfig(
            dome_id=str(doc["dome_id"]),
            bundle=str(doc["bundle"]),
            target_position=Vec3(float(pos[0]), float(pos[1]), float(pos[2])),
            target_yaw=float(t.get("yaw_rad", 0.0)),
            radius_m=_pair(o["radius_m"], "dome.orbit.radius_m", lo_ok=1e-6),
            radius_steps=int(o.get("radius_steps", 1)),
            azimuth_steps=int(o["azimuth_steps"]),
            elevation_rad=_pair(o["elevation_rad"], "dome.orbit.elevation_rad"),
            elevation_steps=int(o.get("elevation_steps", 1)),
            camera=intr,
            fov_jitter_rad=float(cam.get("fov_jitter_rad", 0.0)),
        )

    def to_json_dict(self) -> dict:
        return {
            "dome_id": self.dome_id, "bundle": self.bundle,
            "target": {"position_m": [self.target_position.x, self.target_position.y,
                                      self.target_position.z],
                       "yaw_rad": self.target_yaw},
            "orbit": {"radius_m": list(self.radius_m), "radius_steps": self.radius_steps,
                      "azimuth_steps": self.azimuth_steps,
                      "elevation_rad": list(self.elevation_rad),
                      "elevation_steps": self.elevation_steps},
            "camera": {"horizontal_fov_rad": self.camera.horizontal_fov,
                       "resolution": [self.camera.width, self.camera.height],
                       "fov_jitter_rad": self.fov_jitter_rad},
        }


@dataclass(frozen=True)
class SequenceCamera:
    camera_id: str
    intrinsics: CameraIntrinsics
    position: Vec3
    look_at: Vec3

    def rig(self) -> CameraRig:
        return CameraRig(self.camera_id, self.intrinsics,
                         look_at_camera_pose(self.position, self.look_at))

    def __post_init__(self):
        if self.position.z < 0.0:
            # below the ground plane the samples would leave prior coverage
            raise ValidationError(f"camera {self.camera_id}: height must be >= 0")
        offset = self.look_at.as_array() - self.position.as_array()
        import numpy as _np
        if float(_np.linalg.norm(offset)) < 1e-9:
            raise ValidationError(f"camera {self.camera_id}: look_at equals position")

    @staticmethod
    def parse(doc: dict) -> "SequenceCamera":
        _check_keys(doc, {"camera_id", "intrinsics", "position_m", "look_at_m"},
                    set(), "sequence.camera")
        p, l = doc["position_m"], doc["look_at_m"]
        return SequenceCamera(
            camera_id=str(doc["camera_id"]),
            intrinsics=_parse_intrinsics(doc["intrinsics"], "sequence.camera.intrinsics"),
            position=Vec3(float(p[0]), float(p[1]), float(p[2])),
            look_at=Vec3(float(l[0]), float(l[1]), float(l[2])),
        )

    def to_json_dict(self) -> dict:
        return {"camera_id": self.camera_id,
                "intrinsics": _intrinsics_dict(self.intrinsics),
                "position_m": [self.position.x, self.position.y, self.position.z],
                "look_at_m": [self.look_at.x, self.look_at.y, self.look_at.z]}


@dataclass(frozen=True)
class MotionConfig:
    """Random-waypoint parameters: legs at a sampled speed toward a sampled
    waypoint, bounded turn rate, optional pause on arrival."""

    speed_mps: tuple[float, float] = (0.5, 4.0)
    turn_rate_rps: tuple[float, float] = (0.5, 2.0)
    pause_s: tuple[float, float] = (0.0, 0.0)

    @staticmethod
    def parse(doc: dict) -> "MotionConfig":
        _check_keys(doc, set(), {"speed_mps", "turn_rate_rps", "pause_s"}, "motion")
        kw = {}
        if "speed_mps" in doc:
            kw["speed_mps"] = _pair(doc["speed_mps"], "motion.speed_mps", lo_ok=0.0)
        if "turn_rate_rps" in doc:
            kw["turn_rate_rps"] = _pair(doc["turn_rate_rps"], "motion.turn_rate_rps", lo_ok=0.0)
        if "pause_s" in doc:
            kw["pause_s"] = _pair(doc["pause_s"], "motion.pause_s", lo_ok=0.0)
        return MotionConfig(**kw)

    def to_json_dict(self) -> dict:
        return {"speed_mps": list(self.speed_mps),
                "turn_rate_rps": list(self.turn_rate_rps),
                "pause_s": list(self.pause_s)}


@dataclass(frozen=True)
class SequenceConfig:
    sequence_id: str
    bundle: str
    object_count: int
    arena_x: tuple[float, float]
    arena_y: tuple[float, float]
    duration_s: float
    rate_hz: float
    motion: MotionConfig
    cameras: tuple[SequenceCamera, ...]

    def __post_init__(self):
        if self.object_count < 1:
            raise ValidationError(f"sequence {self.sequence_id}: object_count < 1")
        if self.duration_s <= 0 or self.rate_hz <= 0:
            raise ValidationError(f"sequence {self.sequence_id}: duration and rate must be positive")
        if round(self.duration_s * self.rate_hz) < 1:
            raise ValidationError(f"sequence {self.sequence_id}: fewer than one frame")
        if not self.cameras:
            raise ValidationError(f"sequence {self.sequence_id}: needs at least one camera")
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"sequence {self.sequence_id}: duplicate camera ids")

    @property
    def frame_count(self) -> int:
        return int(round(self.duration_s * self.rate_hz))

    @staticmethod
    def parse(doc: dict) -> "SequenceConfig":
        _check_keys(doc, {"sequence_id", "bundle", "object_count", "arena_m",
                          "duration_s", "rate_hz", "cameras"}, {"motion"}, "sequence")
        arena = doc["arena_m"]
        _check_keys(arena, {"x", "y"}, set(), "sequence.arena_m")
        return SequenceConfig(
            sequence_id=str(doc["sequence_id"]),
            bundle=str(doc["bundle"]),
            object_count=int(doc["object_count"]),
            arena_x=_pair(arena["x"], "sequence.arena_m.x"),
            arena_y=_pair(arena["y"], "sequence.arena_m.y"),
            duration_s=float(doc["duration_s"]),
            rate_hz=float(doc["rate_hz"]),
            motion=MotionConfig.parse(doc.get("motion", {})),
            cameras=tuple(SequenceCamera.parse(c) for c in doc["cameras"]),
        )

    def to_json_dict(self) -> dict:
        return {
            "sequence_id": self.sequence_id, "bundle": self.bundle,
            "object_count": self.object_count,
            "arena_m": {"x": list(self.arena_x), "y": list(self.arena_y)},
            "duration_s": self.duration_s, "rate_hz": self.rate_hz,
            "motion": self.motion.to_json_dict(),
            "cameras": [c.to_json_dict() for c in self.cameras],
        }


@dataclass(frozen=True)
class ProfileConfig:
    output: OutputConfig
    bundles: tuple[BundleConfig, ...]
    domes: tuple[DomeConfig, ...]
    sequences: tuple[SequenceConfig, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.domes and not self.sequences:
            raise ValidationError("profile: needs at least one dome or sequence")
        by_id = self.bundles_by_id()
        if len(by_id) != len(self.bundles):
            raise ValidationError("profile: duplicate bundle ids")
        for d in self.domes:
            if d.bundle not in by_id:
                raise ValidationError(f"dome {d.dome_id}: unknown bundle {d.bundle!r}")
        for s in self.sequences:
            if s.bundle not in by_id:
                raise ValidationError(f"sequence {s.sequence_id}: unknown bundle {s.bundle!r}")

    def bundles_by_id(self) -> dict[str, BundleConfig]:
        return {b.bundle_id: b for b in self.bundles}

    def digest(self) -> str:
        doc = json.dumps(serialize_profile(self), sort_keys=True, separators=(",", ":"))
        return "sha256:" + hashlib.sha256(doc.encode()).hexdigest()


def parse_profile(doc: dict) -> ProfileConfig:
    _check_keys(doc, {"bundles"}, {"output", "domes", "sequences", "seed"}, "profile")
    return ProfileConfig(
        output=OutputConfig.parse(doc.get("output", {})),
        bundles=tuple(BundleConfig.parse(b) for b in doc["bundles"]),
        domes=tuple(DomeConfig.parse(d) for d in doc.get("domes", [])),
        sequences=tuple(SequenceConfig.parse(s) for s in doc.get("sequences", [])),
        seed=int(doc.get("seed", 0)),
    )


def load_profile(source) -> ProfileConfig:
    """Parse a profile from a path, JSON text, or an already-parsed dict."""
    if isinstance(source, dict):
        return parse_profile(source)
    text = str(source)
    try:
        if Path(text).exists():
            text = Path(text).read_text()
    except OSError:
        pass
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"profile is not valid JSON: {exc}") from exc
    return parse_profile(doc)


def serialize_profile(cfg: ProfileConfig) -> dict:
    return {
        "output": cfg.output.to_json_dict(),
        "bundles": [b.to_json_dict() for b in cfg.bundles],
        "domes": [d.to_json_dict() for d in cfg.domes],
        "sequences": [s.to_json_dict() for s in cfg.sequences],
        "seed": cfg.seed,
    }


def _markers_dict(m: CuboidMarkers) -> dict:
    return {name: [getattr(m, name).x, getattr(m, name).y, getattr(m, name).z]
            for name in ("base_center", "base_right", "base_front", "top_center")}


def _markers_from_dict(doc: dict, frame: str) -> CuboidMarkers:
    def v(name):
        a = doc[name]
        return Vec3(float(a[0]), float(a[1]), float(a[2]))
    return CuboidMarkers(v("base_center"), v("base_right"), v("base_front"),
                         v("top_center"), frame=frame)


@dataclass(frozen=True)
class ObjectAnnotation:
    """Ground truth for one object in one shot of one camera."""

    source: str
    frame_id: int
    time_s: float
    camera_id: str
    object_id: int
    class_id: int
    camera_intrinsics: CameraIntrinsics
    cuboid_size: CuboidSpec
    cuboid_camera: CuboidMarkers
    cuboid_world: CuboidMarkers
    screen_origin: tuple[float, float]
    screen_corners: tuple[tuple[float, float], ...]
    spherical: SphericalParams
    image: str = ""
    record_id: int = -1

    def _pose_from_markers(self, m: CuboidMarkers) -> Pose:
        bc = m.base_center.as_array()
        x = m.base_right.as_array() - bc
        y = m.base_front.as_array() - bc
        z = m.top_center.as_array() - bc
        R = np.column_stack([x / np.linalg.norm(x), y / np.linalg.norm(y),
                             z / np.linalg.norm(z)])
        return Pose(matrix_to_euler(R), m.base_center)

    def pose_in_camera(self) -> Pose:
        return self._pose_from_markers(self.cuboid_camera)

    def pose_in_world(self) -> Pose:
        return self._pose_from_markers(self.cuboid_world)

    def to_record(self) -> dict:
        return {
            "record_id": self.record_id,
            "source": self.source,
            "frame_id": self.frame_id,
            "time_s": self.time_s,
            "camera_id": self.camera_id,
            "object_id": self.object_id,
            "class_id": self.class_id,
            "image": self.image,
            "camera": _intrinsics_dict(self.camera_intrinsics),
            "cuboid_size_m": {"length": self.cuboid_size.length,
                              "width": self.cuboid_size.width,
                              "height": self.cuboid_size.height},
            "cuboid_camera_m": _markers_dict(self.cuboid_camera),
            "cuboid_world_m": _markers_dict(self.cuboid_world),
            "screen_px": {"origin": list(self.screen_origin),
                          "corners": [list(c) for c in self.screen_corners]},
            "spherical": {"r_m": self.spherical.r, "yaw_rad": self.spherical.theta,
                          "pitch_rad": self.spherical.phi},
        }

    @staticmethod
    def from_record(doc: dict) -> "ObjectAnnotation":
        size = doc["cuboid_size_m"]
        sph = doc["spherical"]
        return ObjectAnnotation(
            source=doc["source"],
            frame_id=int(doc["frame_id"]),
            time_s=float(doc["time_s"]),
            camera_id=doc["camera_id"],
            object_id=int(doc["object_id"]),
            class_id=int(doc["class_id"]),
            camera_intrinsics=_parse_intrinsics(doc["camera"], "record.camera"),
            cuboid_size=CuboidSpec(float(size["length"]), float(size["width"]),
                                   float(size["height"])),
            cuboid_camera=_markers_from_dict(doc["cuboid_camera_m"], "camera"),
            cuboid_world=_markers_from_dict(doc["cuboid_world_m"], "world"),
            screen_origin=tuple(float(x) for x in doc["screen_px"]["origin"]),
            screen_corners=tuple(tuple(float(x) for x in c)
                                 for c in doc["screen_px"]["corners"]),
            spherical=SphericalParams(float(sph["r_m"]), float(sph["yaw_rad"]),
                                      float(sph["pitch_rad"])),
            image=doc.get("image", ""),
            record_id=int(doc.get("record_id", -1)),
        )


def make_annotation(source: str, frame_id: int, time_s: float, camera_id: str,
                    intrinsics: CameraIntrinsics, camera_pose_world: Pose,
                    object_pose_world: Pose, cuboid: CuboidSpec, class_id: int,
                    object_id: int, image: str = "") -> ObjectAnnotation | None:
    """Annotation of one object seen by one camera, or None when not visible.

    Visible means: the origin projects inside the image and every cuboid
    corner has positive depth (corners may project outside the frame).
    """
    pose_cam = compose(invert(camera_pose_world), object_pose_world)
    t = pose_cam.translation
    if t.z <= 0.0:
        return None
    u, v = project(intrinsics, t)
    if not (0.0 <= u < intrinsics.width and 0.0 <= v < intrinsics.height):
        return None
    corners_cam = cuboid_corners(cuboid, pose_cam)
    if np.any(corners_cam[:, 2] <= 0.0):
        return None
    f = intrinsics.focal_px
    cx, cy = intrinsics.center
    us = cx + f * corners_cam[:, 0] / corners_cam[:, 2]
    vs = cy + f * corners_cam[:, 1] / corners_cam[:, 2]
    return ObjectAnnotation(
        source=source,
        frame_id=frame_id,
        time_s=time_s,
        camera_id=camera_id,
        object_id=object_id,
        class_id=class_id,
        camera_intrinsics=intrinsics,
        cuboid_size=cuboid,
        cuboid_camera=cuboid_markers(cuboid, pose_cam, frame="camera"),
        cuboid_world=cuboid_markers(cuboid, object_pose_world, frame="world"),
        screen_origin=(u, v),
        screen_corners=tuple((float(a), float(b)) for a, b in zip(us, vs)),
        spherical=spherical_params(pose_cam),
        image=image,
    )


def _steps(lo: float, hi: float, n: int) -> list[float]:
    if n == 1:
        return [(lo + hi) / 2.0]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def generate_dome(cfg: DomeConfig, bundle: BundleConfig, seed,
                  image_format: str = "png") -> list[ObjectAnnotation]:
    """One annotation per orbit shot, in (radius, elevation, azimuth) order."""
    rng = np.random.default_rng(seed)
    target_pose = Pose(EulerAngles(cfg.target_yaw, 0.0, 0.0), cfg.target_position)
    origin = cfg.target_position.as_array()
    out = []
    frame = 0
    camera_id = f"{cfg.dome_id}-cam"
    for radius in _steps(*cfg.radius_m, cfg.radius_steps):
        for elevation in _steps(*cfg.elevation_rad, cfg.elevation_steps):
            for ai in range(cfg.azimuth_steps):
                azimuth = 2.0 * math.pi * ai / cfg.azimuth_steps
                offset = radius * np.array([
                    math.cos(elevation) * math.cos(azimuth),
                    math.cos(elevation) * math.sin(azimuth),
                    math.sin(elevation),
                ])
                cam_pos = Vec3.from_array(origin + offset)
                cam_pose = look_at_camera_pose(cam_pos, cfg.target_position)
                fov = cfg.camera.horizontal_fov
                if cfg.fov_jitter_rad > 0.0:
                    fov += rng.uniform(-cfg.fov_jitter_rad, cfg.fov_jitter_rad)
                intr = CameraIntrinsics(fov, cfg.camera.width, cfg.camera.height)
                ann = make_annotation(
                    source=f"dome:{cfg.dome_id}", frame_id=frame, time_s=0.0,
                    camera_id=camera_id, intrinsics=intr, camera_pose_world=cam_pose,
                    object_pose_world=target_pose, cuboid=bundle.cuboid,
                    class_id=bundle.class_id, object_id=0,
                    image=f"{cfg.dome_id}/{frame:06d}.{image_format}")
                if ann is not None:
                    out.append(ann)
                frame += 1
    return out


class _Roamer:
    """Random-waypoint walker on the arena ground plane."""

    def __init__(self, cfg: SequenceConfig, rng):
        self.cfg = cfg
        self.x = rng.uniform(*cfg.arena_x)
        self.y = rng.uniform(*cfg.arena_y)
        self.yaw = rng.uniform(-math.pi, math.pi)
        self.pause = 0.0
        self._new_leg(rng)

    def _new_leg(self, rng):
        self.wx = rng.uniform(*self.cfg.arena_x)
        self.wy = rng.uniform(*self.cfg.arena_y)
        self.speed = rng.uniform(*self.cfg.motion.speed_mps)
        self.turn_rate = rng.uniform(*self.cfg.motion.turn_rate_rps)

    def step(self, dt: float, rng) -> None:
        if self.pause > 0.0:
            self.pause = max(0.0, self.pause - dt)
            return
        dx, dy = self.wx - self.x, self.wy - self.y
        dist = math.hypot(dx, dy)
        if dist < self.speed * dt:
            self.x, self.y = self.wx, self.wy
            self.pause = rng.uniform(*self.cfg.motion.pause_s)
            self._new_leg(rng)
            return
        desired = math.atan2(-dx, dy)  # forward axis is (-sin yaw, cos yaw)
        turn = wrap_angle(desired - self.yaw)
        limit = self.turn_rate * dt
        self.yaw = wrap_angle(self.yaw + max(-limit, min(limit, turn)))
        self.x -= math.sin(self.yaw) * self.speed * dt
        self.y += math.cos(self.yaw) * self.speed * dt
        self.x = min(max(self.x, self.cfg.arena_x[0]), self.cfg.arena_x[1])
        self.y = min(max(self.y, self.cfg.arena_y[0]), self.cfg.arena_y[1])

    def pose(self) -> Pose:
        return Pose(EulerAngles(self.yaw, 0.0, 0.0), Vec3(self.x, self.y, 0.0))


def generate_sequence(cfg: SequenceConfig, bundles: dict[str, BundleConfig],
                      seed, image_format: str = "png") -> list[ObjectAnnotation]:
    """Annotations per frame, camera and visible object, in that order."""
    rng = np.random.default_rng(seed)
    bundle = bundles[cfg.bundle]
    rigs = [c.rig() for c in cfg.cameras]
    roamers = [_Roamer(cfg, rng) for _ in range(cfg.object_count)]
    dt = 1.0 / cfg.rate_hz
    out = []
    for frame in range(cfg.frame_count):
        time_s = frame * dt
        if frame > 0:
            for r in roamers:
                r.step(dt, rng)
        for rig in rigs:
            for oid, roamer in enumerate(roamers):
                ann = make_annotation(
                    source=f"sequence:{cfg.sequence_id}", frame_id=frame,
                    time_s=time_s, camera_id=rig.camera_id,
                    intrinsics=rig.intrinsics, camera_pose_world=rig.extrinsic_pose,
                    object_pose_world=roamer.pose(), cuboid=bundle.cuboid,
                    class_id=bundle.class_id, object_id=oid,
                    image=f"{cfg.sequence_id}/{rig.camera_id}/{frame:06d}.{image_format}")
                if ann is not None:
                    out.append(ann)
    return out


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    config_digest: str
    annotations_path: str
    rigs_path: str | None
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_digest": self.config_digest,
            "annotations": self.annotations_path,
            "rigs": self.rigs_path,
            "counts": {"total": len(self.train) + len(self.val) + len(self.test),
                       "train": len(self.train), "val": len(self.val),
                       "test": len(self.test)},
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "DatasetManifest":
        return DatasetManifest(
            seed=int(doc["seed"]),
            config_digest=doc["config_digest"],
            annotations_path=doc["annotations"],
            rigs_path=doc.get("rigs"),
            train=tuple(doc["train"]),
            val=tuple(doc["val"]),
            test=tuple(doc["test"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))

    @staticmethod
    def load(path) -> "DatasetManifest":
        return DatasetManifest.from_json_dict(json.loads(Path(path).read_text()))


def split_dataset(record_ids, seed: int, config_digest: str = "",
                  annotations_path: str = "annotations.jsonl",
                  rigs_path: str | None = None) -> DatasetManifest:
    """80/10/10 split: seeded shuffle, then contiguous cuts.

    Validation and test each take floor(n / 10) records; training takes the
    rest.  Requires at least 10 records.
    """
    ids = [int(i) for i in record_ids]
    n = len(ids)
    if n < 10:
        raise TooFewRecordsError(f"{n} records; need at least 10")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return DatasetManifest(
        seed=seed,
        config_digest=config_digest,
        annotations_path=annotations_path,
        rigs_path=rigs_path,
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
    )


def write_annotations(annotations, path) -> list[ObjectAnnotation]:
    """Assign sequential record ids and write line-delimited JSON."""
    import dataclasses

    numbered = []
    with open(path, "w") as fh:
        for i, ann in enumerate(annotations):
            ann = dataclasses.replace(ann, record_id=i)
            numbered.append(ann)
            fh.write(json.dumps(ann.to_record(), sort_keys=True,
                                separators=(",", ":")) + "\n")
    return numbered


def load_annotations(path) -> list[ObjectAnnotation]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ObjectAnnotation.from_record(json.loads(line)))
    return out


def generate_all(profile: ProfileConfig, seed: int | None = None) -> list[ObjectAnnotation]:
    """All annotations of a profile, domes first then sequences, config order.

    Each dome/sequence draws from an independent stream derived from the
    run seed and its position, so the output is stable even if generators
    are run in parallel and merged in config order.
    """
    run_seed = profile.seed if seed is None else seed
    bundles = profile.bundles_by_id()
    out: list[ObjectAnnotation] = []
    fmt = profile.output.image_format
    for i, dome in enumerate(profile.domes):
        out.extend(generate_dome(dome, bundles[dome.bundle], [run_seed, 0, i],
                                 image_format=fmt))
    for j, seq in enumerate(profile.sequences):
        out.extend(generate_sequence(seq, bundles, [run_seed, 1, j],
                                     image_format=fmt))
    return out


def _rig_registry_dict(profile: ProfileConfig) -> dict | None:
    cams = []
    seen = set()
    for seq in profile.sequences:
        for c in seq.cameras:
            if c.camera_id in seen:
                raise ValidationError(f"camera id {c.camera_id!r} reused across sequences")
            seen.add(c.camera_id)
            rig = c.rig()
            e = rig.extrinsic_pose
            cams.append({
                "camera_id": rig.camera_id,
                "intrinsics": _intrinsics_dict(rig.intrinsics),
                "pose": {"rotation_rad": [e.rotation.yaw, e.rotation.pitch, e.rotation.roll],
                         "translation_m": [e.translation.x, e.translation.y, e.translation.z]},
            })
    return {"cameras": cams} if cams else None


def run_profile(profile: ProfileConfig, out_dir, seed: int | None = None):
    """Generate, write and split a dataset; returns (annotations, manifest).

    Writes the annotation stream, the dataset manifest, and (when the
    profile has sequences) a camera-rig registry consumable by the fusion
    service.
    """
    run_seed = profile.seed if seed is None else seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    annotations = generate_all(profile, run_seed)
    ann_path = out_dir / profile.output.annotations_file
    annotations = write_annotations(annotations, ann_path)

    rigs_doc = _rig_registry_dict(profile)
    rigs_rel = None
    if rigs_doc is not None:
        rigs_rel = profile.output.rigs_file
        (out_dir / rigs_rel).write_text(json.dumps(rigs_doc, indent=2, sort_keys=True))

    manifest = split_dataset(
        [a.record_id for a in annotations], run_seed,
        config_digest=profile.digest(),
        annotations_path=profile.output.annotations_file,
        rigs_path=rigs_rel,
    )
    manifest.save(out_dir / profile.output.manifest_file)
    return annotations, manifest
