"""Coordinate frames, rotations, pinhole projection and cuboid geometry.

Conventions used throughout the package:

* World frame: X east, Y north, Z up.  The ground plane is z = 0.
* Camera frame: X right, Y down, Z forward along the optical axis.
* Object frame: X lateral (width), Y forward (length), Z up (height),
  origin at the center of the lower face of the enclosing cuboid.
* Euler angles are extrinsic yaw/pitch/roll about the fixed Z/Y/X axes,
  composed as ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.  Yaw and roll are
  kept in (-pi, pi], pitch in [-pi/2, pi/2]; at pitch = +/-pi/2 the roll
  is canonically folded to zero.

A :class:`Pose` maps points from its source frame into its target frame:
``p_target = R @ p_source + t``.  A camera rig's extrinsic pose maps
camera-frame points into the world frame.

Object-to-camera placement is summarised by :class:`SphericalParams`
``(r, theta, phi)``: ``r`` is the Euclidean distance from the camera focus
to the object origin; ``theta`` is the azimuth of the camera as seen from
the object, measured about the object's up axis with zero at the object's
forward axis, increasing toward the object's left side; ``phi`` is the
elevation of the camera above the object's base plane.  In the object's
(forward, left, up) basis the camera position is therefore
``(r cos(phi) cos(theta), r cos(phi) sin(theta), r sin(phi))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Vec3",
    "EulerAngles",
    "Pose",
    "CameraIntrinsics",
    "CameraRig",
    "CuboidSpec",
    "CuboidMarkers",
    "SphericalParams",
    "NotARotationError",
    "BehindCameraError",
    "NonPositiveDistanceError",
    "EmptyInputError",
    "wrap_angle",
    "euler_to_matrix",
    "matrix_to_euler",
    "compose",
    "invert",
    "apply_pose",
    "pose_matrix",
    "identity_pose",
    "project",
    "backproject",
    "cuboid_markers",
    "cuboid_corners",
    "spherical_params",
    "so3_mean",
    "geodesic_distance",
    "level_camera_pose",
    "look_at_camera_pose",
]

_ORTHO_TOL = 1e-6


class NotARotationError(ValueError):
    """Matrix failed the orthonormality / determinant check."""


class BehindCameraError(ValueError):
    """Point has non-positive depth along the optical axis."""


class NonPositiveDistanceError(ValueError):
    """A distance that must be strictly positive was not."""


class EmptyInputError(ValueError):
    """An operation requiring at least one element received none."""


def wrap_angle(a: float) -> float:
    """Reduce an angle to the canonical interval (-pi, pi]."""
    r = math.fmod(a + math.pi, 2.0 * math.pi)
    if r <= 0.0:
        r += 2.0 * math.pi
    return r - math.pi


@dataclass(frozen=True, slots=True)
class Vec3:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "Vec3":
        return Vec3(float(a[0]), float(a[1]), float(a[2]))

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True, slots=True)
class EulerAngles:
    """Extrinsic yaw/pitch/roll, radians."""

    yaw: float
    pitch: float
    roll: float

    def canonical(self) -> "EulerAngles":
        return EulerAngles(wrap_angle(self.yaw), self.pitch, wrap_angle(self.roll))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.yaw, self.pitch, self.roll)


IDENTITY_EULER = EulerAngles(0.0, 0.0, 0.0)


@dataclass(frozen=True, slots=True)
class Pose:
    """Rigid transform: rotation then translation, source frame to target frame."""

    rotation: EulerAngles
    translation: Vec3


def identity_pose() -> Pose:
    return Pose(IDENTITY_EULER, Vec3(0.0, 0.0, 0.0))


@dataclass(frozen=True, slots=True)
class CameraIntrinsics:
    """Pinhole camera with square pixels.

    The focal length in pixels is fixed by the horizontal field of view:
    ``f = (width / 2) / tan(fov / 2)``; the vertical FOV follows from the
    aspect ratio.  The principal point is the image center.
    """

    horizontal_fov: float
    width: int
    height: int

    def __post_init__(self):
        if not (0.0 < self.horizontal_fov < math.pi):
            raise ValueError(f"horizontal_fov out of range: {self.horizontal_fov}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(self.horizontal_fov / 2.0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.width / 2.0, self.height / 2.0)

    @property
    def aspect(self) -> float:
        return self.width / self.height


@dataclass(frozen=True, slots=True)
class CameraRig:
    """A fixed camera: id, intrinsics, and camera-to-world extrinsic pose."""

    camera_id: str
    intrinsics: CameraIntrinsics
    extrinsic_pose: Pose


@dataclass(frozen=True, slots=True)
class CuboidSpec:
    """Object-enclosing cuboid dimensions in meters.

    ``length`` spans the object's forward axis (Y), ``width`` the lateral
    axis (X), ``height`` the up axis (Z).  The object origin sits at the
    center of the lower face.
    """

    length: float
    width: float
    height: float

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise ValueError("cuboid dimensions must be positive")


@dataclass(frozen=True, slots=True)
class CuboidMarkers:
    """Four identified cuboid points, tagged with the frame they live in."""

    base_center: Vec3
    base_right: Vec3
    base_front: Vec3
    top_center: Vec3
    frame: str = ""


@dataclass(frozen=True, slots=True)
class SphericalParams:
    """Object-to-camera placement: distance, view azimuth, view elevation."""

    r: float
    theta: float
    phi: float


def euler_to_matrix(e: EulerAngles) -> np.ndarray:
    """Rotation matrix for extrinsic Z(yaw)-Y(pitch)-X(roll) angles."""
    cy, sy = math.cos(e.yaw), math.sin(e.yaw)
    cp, sp = math.cos(e.pitch), math.sin(e.pitch)
    cr, sr = math.cos(e.roll), math.sin(e.roll)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def _require_rotation(R: np.ndarray, tol: float = _ORTHO_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise NotARotationError(f"expected 3x3 matrix, got {R.shape}")
    # closed-form Gram and determinant checks; this sits on hot per-sample
    # paths, so no temporaries or LAPACK calls
    a, b, c = R[0, 0], R[0, 1], R[0, 2]
    d, e, f = R[1, 0], R[1, 1], R[1, 2]
    g, h, i = R[2, 0], R[2, 1], R[2, 2]
    err = max(
        abs(a * a + d * d + g * g - 1.0),
        abs(b * b + e * e + h * h - 1.0),
        abs(c * c + f * f + i * i - 1.0),
        abs(a * b + d * e + g * h),
        abs(a * c + d * f + g * i),
        abs(b * c + e * f + h * i),
    )
    if err > tol:
        raise NotARotationError(f"matrix not orthonormal (max deviation {err:.3g})")
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    if abs(det - 1.0) > tol:
        raise NotARotationError(f"determinant {det:.6f} != +1")
    return R


def matrix_to_euler(R: np.ndarray) -> EulerAngles:
    """Extract canonical extrinsic ZYX Euler angles.

    At gimbal lock (|pitch| = pi/2) the roll is set to zero and the free
    degree of freedom folded into the yaw.
    """
    R = _require_rotation(R)
    sy = math.hypot(R[0, 0], R[1, 0])
    pitch = math.atan2(-R[2, 0], sy)
    if sy > 1e-9:
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
    else:
        # R[0,1] = -+sin(roll -+ yaw), R[1,1] = cos(roll -+ yaw); fold roll into yaw.
        roll = 0.0
        if pitch > 0:
            yaw = -math.atan2(R[0, 1], R[1, 1])
        else:
            yaw = math.atan2(-R[0, 1], R[1, 1])
    return EulerAngles(wrap_angle(yaw), pitch, wrap_angle(roll))


def pose_matrix(p: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrix and translation vector of a pose."""
    return euler_to_matrix(p.rotation), p.translation.as_array()


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying ``b`` first, then ``a``."""
    Ra, ta = pose_matrix(a)
    Rb, tb = pose_matrix(b)
    return Pose(matrix_to_euler(Ra @ Rb), Vec3.from_array(Ra @ tb + ta))


def invert(a: Pose) -> Pose:
    Ra, ta = pose_matrix(a)
    Rt = Ra.T
    return Pose(matrix_to_euler(Rt), Vec3.from_array(-Rt @ ta))


def apply_pose(p: Pose, points: np.ndarray) -> np.ndarray:
    """Transform an (..., 3) array of points by a pose."""
    R, t = pose_matrix(p)
    return np.asarray(points, dtype=float) @ R.T + t


def project(k: CameraIntrinsics, p_cam) -> tuple[float, float]:
    """Pinhole projection of a camera-frame point to pixel (u, v)."""
    x, y, z = (p_cam.x, p_cam.y, p_cam.z) if isinstance(p_cam, Vec3) else (
        float(p_cam[0]), float(p_cam[1]), float(p_cam[2]))
    if z <= 0.0:
        raise BehindCameraError(f"depth {z} <= 0")
    f = k.focal_px
    cx, cy = k.center
    return (cx + f * x / z, cy + f * y / z)


def backproject(k: CameraIntrinsics, pixel: tuple[float, float], distance: float) -> Vec3:
    """Point on the ray through ``pixel`` at Euclidean distance ``distance``.

    Note the parameter is distance from the focus, not depth along the axis.
    """
    if distance <= 0.0:
        raise NonPositiveDistanceError(f"distance {distance} <= 0")
    f = k.focal_px
    cx, cy = k.center
    dx = (pixel[0] - cx) / f
    dy = (pixel[1] - cy) / f
    scale = distance / math.sqrt(dx * dx + dy * dy + 1.0)
    return Vec3(dx * scale, dy * scale, scale)


_MARKER_OFFSETS = ("base_center", "base_right", "base_front", "top_center")


def _object_marker_points(spec: CuboidSpec) -> np.ndarray:
    return np.array([
        [0.0, 0.0, 0.0],
        [spec.width / 2.0, 0.0, 0.0],
        [0.0, spec.length / 2.0, 0.0],
        [0.0, 0.0, spec.height],
    ])


def cuboid_markers(spec: CuboidSpec, pose: Pose, frame: str = "") -> CuboidMarkers:
    """The four marker points (origin, right, front, top) in the pose's target frame."""
    pts = apply_pose(pose, _object_marker_points(spec))
    return CuboidMarkers(
        base_center=Vec3.from_array(pts[0]),
        base_right=Vec3.from_array(pts[1]),
        base_front=Vec3.from_array(pts[2]),
        top_center=Vec3.from_array(pts[3]),
        frame=frame,
    )


def object_corner_points(spec: CuboidSpec) -> np.ndarray:
    """The 8 cuboid corners in the object frame, z-major then y then x."""
    hw, hl = spec.width / 2.0, spec.length / 2.0
    corners = []
    for z in (0.0, spec.height):
        for y in (-hl, hl):
            for x in (-hw, hw):
                corners.append([x, y, z])
    return np.array(corners)


def cuboid_corners(spec: CuboidSpec, pose: Pose) -> np.ndarray:
    """The 8 corners of the oriented cuboid, shape (8, 3)."""
    return apply_pose(pose, object_corner_points(spec))


def spherical_params(object_pose_in_camera: Pose) -> SphericalParams:
    """Distance / view-azimuth / view-elevation of an object-in-camera pose.

    See the module docstring for the exact convention; theta is zero when
    the object's front faces the camera, and phi is non-negative whenever
    the camera sits at or above the object's base plane.
    """
    R, t = pose_matrix(object_pose_in_camera)
    r = math.sqrt(float(t @ t))
    if r == 0.0:
        return SphericalParams(0.0, 0.0, 0.0)
    c = -(R.T @ t)  # camera focus in the object frame
    phi = math.asin(max(-1.0, min(1.0, c[2] / r)))
    theta = math.atan2(-c[0], c[1])
    return SphericalParams(r, wrap_angle(theta), phi)


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix."""
    t = R[0, 0] + R[1, 1] + R[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
             (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
             (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
             (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def so3_mean(rotations) -> np.ndarray:
    """Chordal mean of rotation matrices via sign-aligned quaternion averaging.

    Closed-form and deterministic; intended for rotation sets confined to a
    small region, where the chordal and geodesic means agree closely.
    """
    rotations = list(rotations)
    if not rotations:
        raise EmptyInputError("so3_mean of zero rotations")
    quats = [_matrix_to_quat(_require_rotation(R)) for R in rotations]
    ref = quats[0]
    acc = np.zeros(4)
    for q in quats:
        acc += q if float(np.dot(q, ref)) >= 0.0 else -q
    n = float(np.linalg.norm(acc))
    if n < 1e-12:
        raise ValueError("degenerate rotation set: mean quaternion vanishes")
    return _quat_to_matrix(acc / n)


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Angle of the relative rotation a^T b, in [0, pi].

    Computed from the Frobenius distance (||a - b||_F = 2 sqrt(2) sin(angle/2)),
    which keeps full precision for nearly identical rotations where the
    arccos-of-trace form bottoms out near 1e-8.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = float(np.linalg.norm(a - b)) / (2.0 * math.sqrt(2.0))
    return 2.0 * math.asin(min(1.0, s))


def level_camera_pose(position: Vec3, yaw: float = 0.0) -> Pose:
    """Camera-to-world pose of a level camera.

    With yaw 0 the optical axis points north (+Y world), image right is
    east, and image down is toward the ground.
    """
    base = np.array([
        [1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, -1.0, 0.0],
    ])
    cz, sz = math.cos(yaw), math.sin(yaw)
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return Pose(matrix_to_euler(Rz @ base), position)


def look_at_camera_pose(position: Vec3, target: Vec3) -> Pose:
    """Camera-to-world pose with the optical axis aimed at ``target``.

    Image right stays level (perpendicular to world up).  Degenerate when
    looking straight up or down.
    """
    p = position.as_array()
    fwd = target.as_array() - p
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("look_at target coincides with camera position")
    fwd = fwd / n
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("look_at direction parallel to world up")
    right = right / rn
    down = np.cross(fwd, right)
    R = np.column_stack([right, down, fwd])
    return Pose(matrix_to_euler(R), position)
