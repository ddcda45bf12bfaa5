"""Multi-camera aggregation of per-camera detections into world tracks.

Per-camera detections are lifted into the world frame through each rig's
extrinsic pose, grouped across cameras by world-space proximity, and each
group is resolved to a single position by the nearest-camera rule: the
member whose inferred camera distance is smallest wins, since close-range
detections carry the least metric error.

The tracker runs on a fixed tick.  Each tick snapshots the freshest
message per camera within a staleness window (two tick periods), fuses,
and assigns track ids by nearest-neighbor continuity with the previous
tick.  Ticks are driven either by virtual time (deterministic replay) or
by a wall clock (live service, see arenatrack.server).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .codec import DecodedDetection
from .geometry import (
    CameraIntrinsics,
    CameraRig,
    EulerAngles,
    NonPositiveDistanceError,
    Pose,
    Vec3,
    backproject,
    euler_to_matrix,
    matrix_to_euler,
    pose_matrix,
)

__all__ = [
    "DetectionMessage",
    "WorldDetection",
    "FusedPosition",
    "UnknownCameraError",
    "EmptyGroupError",
    "NoiseProfile",
    "to_world",
    "associate",
    "fuse",
    "FusionTracker",
    "run_tracker",
    "load_rig_registry",
    "save_rig_registry",
    "message_to_json_line",
    "message_from_json_line",
    "fused_to_json_line",
    "perfect_detection",
    "apply_noise",
    "annotations_to_messages",
    "error_percentiles",
]

DEFAULT_GATE_M = 1.0
DEFAULT_TICK_RATE_HZ = 24.0
STALENESS_TICKS = 2


class UnknownCameraError(KeyError):
    """Message references a camera with no registered rig."""


class EmptyGroupError(ValueError):
    """fuse() requires a non-empty group."""


@dataclass(frozen=True, slots=True)
class DetectionMessage:
    camera_id: str
    timestamp: float
    detections: tuple[DecodedDetection, ...]

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


@dataclass(frozen=True, slots=True)
class WorldDetection:
    world_position: Vec3
    world_orientation: EulerAngles
    source_camera: str
    camera_distance: float
    timestamp: float


@dataclass(frozen=True, slots=True)
class FusedPosition:
    track_id: int
    world_position: Vec3
    world_orientation: EulerAngles
    chosen_camera: str
    contributing_cameras: frozenset[str]
    tick_timestamp: float


def to_world(d: DecodedDetection, rig: CameraRig, timestamp: float = 0.0) -> WorldDetection:
    """Lift a camera-frame detection into the world frame."""
    if d.distance <= 0:
        raise NonPositiveDistanceError(f"detection distance {d.distance}")
    p_cam = backproject(rig.intrinsics, d.origin_px, d.distance).as_array()
    R, t = pose_matrix(rig.extrinsic_pose)
    world = R @ p_cam + t
    orient = matrix_to_euler(R @ euler_to_matrix(d.orientation))
    return WorldDetection(
        world_position=Vec3.from_array(world),
        world_orientation=orient,
        source_camera=rig.camera_id,
        camera_distance=d.distance,
        timestamp=timestamp,
    )


def associate(detections, gate: float = DEFAULT_GATE_M) -> list[list[WorldDetection]]:
    """Group detections of the same object across cameras.

    Single-linkage: two detections share a group whenever their world
    distance is below the gate, directly or through intermediaries (the
    connected components of the gate graph).  Input is ordered by
    (camera_id, position) first so the grouping is deterministic.
    """
    dets = sorted(enumerate(detections), key=lambda p: (p[1].source_camera, p[0]))
    dets = [d for _, d in dets]
    n = len(dets)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pos = [d.world_position.as_array() for d in dets]
    for i in range(n):
        for j in range(i + 1, n):
            if float(np.linalg.norm(pos[i] - pos[j])) < gate:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[WorldDetection]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(dets[i])
    return [groups[k] for k in sorted(groups)]


def fuse(group) -> FusedPosition:
    """Resolve one group to the member nearest its camera.

    Ties on distance break toward the lexicographically smallest camera id.
    The track id is a placeholder (-1) until the tracker assigns one.
    """
    group = list(group)
    if not group:
        raise EmptyGroupError("cannot fuse an empty group")
    best = min(group, key=lambda d: (d.camera_distance, d.source_camera))
    return FusedPosition(
        track_id=-1,
        world_position=best.world_position,
        world_orientation=best.world_orientation,
        chosen_camera=best.source_camera,
        contributing_cameras=frozenset(d.source_camera for d in group),
        tick_timestamp=best.timestamp,
    )


class FusionTracker:
    """Tick-driven fusion state over a fixed set of camera rigs.

    ingest() may be called from any thread; ticks observe a consistent
    snapshot under the internal lock.  Messages for unregistered cameras
    are dropped and counted, never raised past ingest_strict().
    """

    def __init__(self, rigs, tick_rate: float = DEFAULT_TICK_RATE_HZ,
                 gate: float = DEFAULT_GATE_M):
        if tick_rate <= 0:
            raise ValueError("tick_rate must be positive")
        self.rigs = {r.camera_id: r for r in rigs}
        self.tick_rate = tick_rate
        self.gate = gate
        self.dropped = 0
        self._lock = threading.Lock()
        self._messages: dict[str, list[DetectionMessage]] = {cid: [] for cid in self.rigs}
        self._prev: list[FusedPosition] = []
        self._next_track_id = 0

    @property
    def staleness_window(self) -> float:
        return STALENESS_TICKS / self.tick_rate

    def ingest(self, msg: DetectionMessage) -> bool:
        """Accept a message; returns False (and counts) for unknown cameras."""
        with self._lock:
            bucket = self._messages.get(msg.camera_id)
            if bucket is None:
                self.dropped += 1
                return False
            bucket.append(msg)
            return True

    def ingest_strict(self, msg: DetectionMessage) -> None:
        if not self.ingest(msg):
            raise UnknownCameraError(msg.camera_id)

    def _snapshot(self, now: float) -> list[tuple[CameraRig, DetectionMessage]]:
        lo = now - self.staleness_window
        picked = []
        for cid in sorted(self._messages):
            bucket = self._messages[cid]
            # Prune anything that can never be selected again.
            bucket[:] = [m for m in bucket if m.timestamp > lo]
            best = None
            for m in bucket:
                if m.timestamp <= now and (best is None or m.timestamp > best.timestamp):
                    best = m
            if best is not None:
                picked.append((self.rigs[cid], best))
        return picked

    def _assign_track_ids(self, fused: list[FusedPosition]) -> list[FusedPosition]:
        pairs = []
        for fi, f in enumerate(fused):
            for p in self._prev:
                d = float(np.linalg.norm(f.world_position.as_array()
                                         - p.world_position.as_array()))
                if d < self.gate:
                    pairs.append((d, p.track_id, fi))
        pairs.sort()
        used_prev: set[int] = set()
        used_new: set[int] = set()
        assigned: dict[int, int] = {}
        for d, tid, fi in pairs:
            if tid in used_prev or fi in used_new:
                continue
            assigned[fi] = tid
            used_prev.add(tid)
            used_new.add(fi)
        out = []
        for fi, f in enumerate(fused):
            tid = assigned.get(fi)
            if tid is None:
                tid = self._next_track_id
                self._next_track_id += 1
            out.append(replace(f, track_id=tid))
        out.sort(key=lambda f: f.track_id)
        return out

    def tick(self, now: float) -> list[FusedPosition]:
        """Fuse the freshest in-window message per camera; assign track ids."""
        with self._lock:
            picked = self._snapshot(now)
            world: list[WorldDetection] = []
            for rig, msg in picked:
                for det in msg.detections:
                    world.append(to_world(det, rig, timestamp=msg.timestamp))
            fused = [replace(fuse(g), tick_timestamp=now)
                     for g in associate(world, self.gate)]
            fused = self._assign_track_ids(fused)
            self._prev = fused
            return fused


def run_tracker(messages, rigs, tick_rate: float = DEFAULT_TICK_RATE_HZ,
                gate: float = DEFAULT_GATE_M, duration: float | None = None,
                start: float = 0.0):
    """Replay messages against a virtual tick clock.

    Ticks run at start + k / tick_rate for k = 1 .. round(duration * rate);
    duration defaults to the latest message timestamp.  Returns a list of
    (tick_time, [FusedPosition]) pairs.  Output depends only on message
    timestamps, not their order in ``messages``.
    """
    messages = list(messages)
    tracker = FusionTracker(rigs, tick_rate=tick_rate, gate=gate)
    if duration is None:
        duration = max((m.timestamp for m in messages), default=0.0) - start
    n_ticks = int(round(duration * tick_rate))
    msgs_by_time = sorted(messages, key=lambda m: m.timestamp)
    mi = 0
    out = []
    for k in range(1, n_ticks + 1):
        t = start + k / tick_rate
        while mi < len(msgs_by_time) and msgs_by_time[mi].timestamp <= t:
            tracker.ingest(msgs_by_time[mi])
            mi += 1
        out.append((t, tracker.tick(t)))
    return out


# ---------------------------------------------------------------------------
# Wire formats


def _det_to_dict(d: DecodedDetection) -> dict:
    return {
        "origin_px": [d.origin_px[0], d.origin_px[1]],
        "distance_m": d.distance,
        "orientation_rad": [d.orientation.yaw, d.orientation.pitch, d.orientation.roll],
        "objectness": d.objectness,
        "class_id": d.class_id,
        "confidence": d.confidence,
    }


def _det_from_dict(doc: dict) -> DecodedDetection:
    o = doc["orientation_rad"]
    return DecodedDetection(
        origin_px=(float(doc["origin_px"][0]), float(doc["origin_px"][1])),
        distance=float(doc["distance_m"]),
        orientation=EulerAngles(float(o[0]), float(o[1]), float(o[2])),
        objectness=float(doc.get("objectness", 1.0)),
        class_id=int(doc.get("class_id", 0)),
        confidence=float(doc.get("confidence", 1.0)),
    )


def message_to_json_line(msg: DetectionMessage) -> str:
    doc = {
        "camera_id": msg.camera_id,
        "timestamp_s": msg.timestamp,
        "detections": [_det_to_dict(d) for d in msg.detections],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def message_from_json_line(line: str) -> DetectionMessage:
    doc = json.loads(line)
    return DetectionMessage(
        camera_id=doc["camera_id"],
        timestamp=float(doc["timestamp_s"]),
        detections=tuple(_det_from_dict(d) for d in doc["detections"]),
    )


def fused_to_json_line(f: FusedPosition) -> str:
    doc = {
        "track_id": f.track_id,
        "tick_timestamp_s": f.tick_timestamp,
        "world_position_m": [f.world_position.x, f.world_position.y, f.world_position.z],
        "world_orientation_rad": [f.world_orientation.yaw, f.world_orientation.pitch,
                                  f.world_orientation.roll],
        "chosen_camera": f.chosen_camera,
        "contributing_cameras": sorted(f.contributing_cameras),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def save_rig_registry(rigs, path) -> None:
    cams = []
    for r in rigs:
        e = r.extrinsic_pose
        cams.append({
            "camera_id": r.camera_id,
            "intrinsics": {"horizontal_fov_rad": r.intrinsics.horizontal_fov,
                           "resolution": [r.intrinsics.width, r.intrinsics.height]},
            "pose": {"rotation_rad": [e.rotation.yaw, e.rotation.pitch, e.rotation.roll],
                     "translation_m": [e.translation.x, e.translation.y, e.translation.z]},
        })
    Path(path).write_text(json.dumps({"cameras": cams}, indent=2, sort_keys=True))


def load_rig_registry(path) -> list[CameraRig]:
    doc = json.loads(Path(path).read_text())
    rigs = []
    for c in doc["cameras"]:
        k = c["intrinsics"]
        rot = c["pose"]["rotation_rad"]
        tr = c["pose"]["translation_m"]
        rigs.append(CameraRig(
            camera_id=c["camera_id"],
            intrinsics=CameraIntrinsics(float(k["horizontal_fov_rad"]),
                                        int(k["resolution"][0]), int(k["resolution"][1])),
            extrinsic_pose=Pose(
                EulerAngles(float(rot[0]), float(rot[1]), float(rot[2])),
                Vec3(float(tr[0]), float(tr[1]), float(tr[2])),
            ),
        ))
    return rigs


# ---------------------------------------------------------------------------
# Detection synthesis from annotations (evaluation harness)


@dataclass(frozen=True)
class NoiseProfile:
    """Detector error model for Monte-Carlo runs.

    Zero-mean Gaussian on the origin pixel and on the inferred distance,
    the latter proportional to the true distance so far cameras degrade
    the way a fixed angular resolution would.
    """

    pixel_sigma_px: float = 1.0
    distance_sigma_frac: float = 0.003
    seed: int = 0

    @staticmethod
    def load(path) -> "NoiseProfile":
        doc = json.loads(Path(path).read_text())
        allowed = {"pixel_sigma_px", "distance_sigma_frac", "seed"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"noise profile: unknown fields {sorted(unknown)}")
        return NoiseProfile(**doc)


def perfect_detection(ann) -> DecodedDetection:
    """Noise-free detection equivalent to an annotation's ground truth."""
    return DecodedDetection(
        origin_px=ann.screen_origin,
        distance=ann.spherical.r,
        orientation=ann.pose_in_camera().rotation,
        objectness=1.0,
        class_id=ann.class_id,
        confidence=1.0,
    )


def apply_noise(det: DecodedDetection, noise: NoiseProfile, rng) -> DecodedDetection:
    u, v = det.origin_px
    u += rng.normal(0.0, noise.pixel_sigma_px)
    v += rng.normal(0.0, noise.pixel_sigma_px)
    r = det.distance + rng.normal(0.0, noise.distance_sigma_frac * det.distance)
    return replace(det, origin_px=(u, v), distance=max(r, 1e-6))


def annotations_to_messages(annotations, noise: NoiseProfile | None = None,
                            rng=None) -> list[DetectionMessage]:
    """One DetectionMessage per (camera, frame), ordered by time then camera."""
    grouped: dict[tuple[float, str], list] = {}
    for ann in annotations:
        grouped.setdefault((ann.time_s, ann.camera_id), []).append(ann)
    out = []
    for (time_s, camera_id) in sorted(grouped):
        dets = []
        for ann in sorted(grouped[(time_s, camera_id)], key=lambda a: a.object_id):
            d = perfect_detection(ann)
            if noise is not None:
                d = apply_noise(d, noise, rng)
            dets.append(d)
        out.append(DetectionMessage(camera_id=camera_id, timestamp=time_s,
                                    detections=tuple(dets)))
    return out


def error_percentiles(errors, percentiles=(50, 75, 90, 95, 99, 100)) -> list[tuple[float, float]]:
    errors = np.asarray(list(errors), dtype=float)
    if errors.size == 0:
        return [(float(p), float("nan")) for p in percentiles]
    return [(float(p), float(np.percentile(errors, p))) for p in percentiles]
