"""Encoding and decoding of per-cell detection predictions.

A detection network emits, for every grid cell and anchor, raw logits
describing one candidate object.  This module converts between those raw
values and physical quantities: image position of the object's origin,
distance to the camera, orientation relative to the camera, objectness
and class scores.

Tensor layout
-------------
Predictions live on three grids, one per head, with strides 32 / 16 / 8
pixels of the input image for heads 1 / 2 / 3.  Each head's array has
shape ``(rows, cols, anchors, channels)`` with ``anchors = 6`` (the head's
priors in table order) and channels

    0 tx   origin-u offset logit        4 tpitch  pitch-offset logit
    1 ty   origin-v offset logit        5 troll   roll-offset logit
    2 tr   distance logit               6 tobj    objectness logit
    3 tyaw yaw-offset logit             7.. tclass class logits

The flat exchange layout is heads 1, 2, 3 concatenated, each C-ordered as
(row, col, anchor, channel).

Decoding rules
--------------
* origin:   ``u = (col + sigmoid(tx) * spread - (spread - 1) / 2) * stride``
  with ``spread = 2``, so the origin can sit up to half a cell outside the
  cell that predicts it.
* distance: bounded sigmoid over the prior's radial interval.
* orientation: the prior's anchor rotation composed (about the camera
  axes) with bounded yaw/pitch/roll offsets; the yaw offset spans the
  region's angular halfwidth, pitch and roll span a configurable +/-pi/8.
* objectness/class: plain sigmoids.

Encoding inverts each rule exactly, so encode-then-decode is lossless and
decode-then-encode recovers raw values whenever the origin offsets lie in
the cell-canonical range ``|t| < ln 3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    EulerAngles,
    Pose,
    backproject,
    euler_to_matrix,
    matrix_to_euler,
    project,
    spherical_params,
)
from .priors import PRIORS_PER_HEAD, PriorTable, assign_region, head_of

__all__ = [
    "GridSpec",
    "CellPrediction",
    "DecodedDetection",
    "Bbox2D",
    "LegacyBoxParams",
    "CodecConfig",
    "EncodedTarget",
    "PredictionTensors",
    "RangeInvertedError",
    "InverseOutOfRangeError",
    "PriorHeadMismatchError",
    "OriginOffScreenError",
    "OrientationOutOfRangeError",
    "HullBehindCameraError",
    "AspectRatioMismatchError",
    "sigmoid",
    "logit",
    "bounded_sigmoid",
    "bounded_sigmoid_inv",
    "decode_cell",
    "encode_ground_truth",
    "decode_legacy_box",
    "encode_legacy_box",
    "reproject_bbox",
    "iou",
    "decode_tensors",
    "suppress_overlaps",
    "anchor_params_for_head",
    "CH_TX", "CH_TY", "CH_TR", "CH_TYAW", "CH_TPITCH", "CH_TROLL", "CH_TOBJ", "CH_CLASS0",
]

CH_TX, CH_TY, CH_TR, CH_TYAW, CH_TPITCH, CH_TROLL, CH_TOBJ, CH_CLASS0 = range(8)

HEAD_STRIDES = {1: 32, 2: 16, 3: 8}


class RangeInvertedError(ValueError):
    """Bounded sigmoid called with lo >= hi."""


class InverseOutOfRangeError(ValueError):
    """Bounded sigmoid inverse called outside the open interval (lo, hi)."""


class PriorHeadMismatchError(ValueError):
    """Prior does not belong to the grid's head."""


class OriginOffScreenError(ValueError):
    """Ground-truth origin does not project inside the image."""


class OrientationOutOfRangeError(ValueError):
    """Orientation offset from the anchor exceeds the representable range."""


class HullBehindCameraError(ValueError):
    """A hull point fell behind the camera during reprojection."""


class AspectRatioMismatchError(ValueError):
    """Image aspect ratio differs from the configured aspect ratio."""


def sigmoid(t: float) -> float:
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise InverseOutOfRangeError(f"probability {p} outside (0, 1)")
    return math.log(p / (1.0 - p))


def bounded_sigmoid(t: float, lo: float, hi: float) -> float:
    """Sigmoid rescaled to the open interval (lo, hi); midpoint at t = 0."""
    if lo >= hi:
        raise RangeInvertedError(f"range ({lo}, {hi}) inverted")
    return lo + (hi - lo) * sigmoid(t)


def bounded_sigmoid_inv(y: float, lo: float, hi: float) -> float:
    if lo >= hi:
        raise RangeInvertedError(f"range ({lo}, {hi}) inverted")
    if not lo < y < hi:
        raise InverseOutOfRangeError(f"value {y} outside ({lo}, {hi})")
    return math.log((y - lo) / (hi - y))


@dataclass(frozen=True, slots=True)
class GridSpec:
    head: int
    cols: int
    rows: int
    stride_px: int

    def __post_init__(self):
        if self.cols <= 0 or self.rows <= 0:
            raise ValueError("grid must be non-empty")


@dataclass(frozen=True, slots=True)
class CellPrediction:
    """Raw logits for one (cell, anchor) slot."""

    cell: tuple[int, int]  # (col index, row index)
    prior_id: int
    t_x: float = 0.0
    t_y: float = 0.0
    t_r: float = 0.0
    t_yaw: float = 0.0
    t_pitch: float = 0.0
    t_roll: float = 0.0
    t_obj: float = 0.0
    t_class: tuple[float, ...] = (0.0,)


@dataclass(frozen=True, slots=True)
class DecodedDetection:
    origin_px: tuple[float, float]
    distance: float
    orientation: EulerAngles  # object orientation in the camera frame
    objectness: float
    class_id: int = 0
    confidence: float = 0.0


@dataclass(frozen=True, slots=True)
class Bbox2D:
    min_u: float
    min_v: float
    max_u: float
    max_v: float

    def __post_init__(self):
        if self.min_u > self.max_u or self.min_v > self.max_v:
            raise ValueError("box min exceeds max")

    @property
    def area(self) -> float:
        return (self.max_u - self.min_u) * (self.max_v - self.min_v)


@dataclass(frozen=True, slots=True)
class LegacyBoxParams:
    """Exponential width/height decode used by the 2D-box scheme."""

    t_w: float
    t_h: float
    p_w: float
    p_h: float

    def __post_init__(self):
        if self.p_w <= 0 or self.p_h <= 0:
            raise ValueError("prior box size must be positive")


def decode_legacy_box(l: LegacyBoxParams) -> tuple[float, float]:
    """Box size (width, height) in pixels: prior size scaled by exp(logit)."""
    return (l.p_w * math.exp(l.t_w), l.p_h * math.exp(l.t_h))


def encode_legacy_box(width: float, height: float, p_w: float, p_h: float) -> tuple[float, float]:
    if width <= 0 or height <= 0 or p_w <= 0 or p_h <= 0:
        raise ValueError("sizes must be positive")
    return (math.log(width / p_w), math.log(height / p_h))


@dataclass(frozen=True)
class CodecConfig:
    """Fixed choices shared by every encode/decode in a deployment."""

    reference_resolution: tuple[int, int] = (416, 416)
    n_classes: int = 1
    spread: float = 2.0
    pitch_halfwidth: float = math.pi / 8.0
    roll_halfwidth: float = math.pi / 8.0

    @property
    def aspect(self) -> float:
        return self.reference_resolution[0] / self.reference_resolution[1]

    @property
    def channels(self) -> int:
        return 7 + self.n_classes

    def check_intrinsics(self, k: CameraIntrinsics) -> None:
        if abs(k.aspect - self.aspect) > 1e-6:
            raise AspectRatioMismatchError(
                f"image aspect {k.aspect:.6f} vs configured {self.aspect:.6f}")
        for head, stride in HEAD_STRIDES.items():
            if k.width % stride or k.height % stride:
                raise ValueError(
                    f"resolution {k.width}x{k.height} not divisible by stride {stride}")

    def grids_for(self, k: CameraIntrinsics) -> dict[int, GridSpec]:
        self.check_intrinsics(k)
        return {
            head: GridSpec(head, k.width // stride, k.height // stride, stride)
            for head, stride in HEAD_STRIDES.items()
        }


DEFAULT_CODEC = CodecConfig()


def _offset_halfwidths(prior, config: CodecConfig) -> tuple[float, float, float]:
    return (prior.bounds.theta_halfwidth, config.pitch_halfwidth, config.roll_halfwidth)


@lru_cache(maxsize=512)
def _anchor_matrix(orientation: EulerAngles) -> np.ndarray:
    """Anchor rotation matrix, cached per table entry (read-only array)."""
    R = euler_to_matrix(orientation)
    R.setflags(write=False)
    return R


def decode_cell(p: CellPrediction, grid: GridSpec, priors: PriorTable,
                config: CodecConfig = DEFAULT_CODEC) -> DecodedDetection:
    """Physical detection described by one slot's raw values."""
    prior = priors.by_id(p.prior_id)
    if prior.bounds.head != grid.head:
        raise PriorHeadMismatchError(
            f"prior {p.prior_id} is head {prior.bounds.head}, grid is head {grid.head}")
    half = (config.spread - 1.0) / 2.0
    u = (p.cell[0] + sigmoid(p.t_x) * config.spread - half) * grid.stride_px
    v = (p.cell[1] + sigmoid(p.t_y) * config.spread - half) * grid.stride_px
    distance = bounded_sigmoid(p.t_r, prior.bounds.r_min, prior.bounds.r_max)
    yaw_hw, pitch_hw, roll_hw = _offset_halfwidths(prior, config)
    offset = EulerAngles(
        bounded_sigmoid(p.t_yaw, -yaw_hw, yaw_hw),
        bounded_sigmoid(p.t_pitch, -pitch_hw, pitch_hw),
        bounded_sigmoid(p.t_roll, -roll_hw, roll_hw),
    )
    rotation = euler_to_matrix(offset) @ _anchor_matrix(prior.anchor_orientation)
    objectness = sigmoid(p.t_obj)
    probs = [sigmoid(t) for t in p.t_class] or [1.0]
    class_id = int(np.argmax(probs))
    return DecodedDetection(
        origin_px=(u, v),
        distance=distance,
        orientation=matrix_to_euler(rotation),
        objectness=objectness,
        class_id=class_id,
        confidence=objectness * probs[class_id],
    )


@dataclass(frozen=True, slots=True)
class PosedObject:
    """Minimal encodable ground truth: an object pose in the camera frame.

    Stands in for a full annotation wherever only the pose and class
    matter (loss scenes, synthetic fitting targets).
    """

    pose: "Pose"
    class_id: int = 0

    def pose_in_camera(self):
        return self.pose


@dataclass(frozen=True, slots=True)
class EncodedTarget:
    """Where a ground truth lands in the tensor, and its exact raw targets.

    The target's objectness and class channels are left at zero: those are
    supervised in probability space (objectness 1 at this slot, one-hot
    class), not regressed in logit space.
    """

    head: int
    cell: tuple[int, int]
    prior_id: int
    anchor_index: int
    class_id: int
    target: CellPrediction
    origin_px: tuple[float, float]
    distance: float
    orientation: EulerAngles


def encode_ground_truth(gt, grids: dict[int, GridSpec], priors: PriorTable,
                        intrinsics: CameraIntrinsics,
                        config: CodecConfig = DEFAULT_CODEC) -> EncodedTarget:
    """Raw-tensor targets for one annotated object.

    ``gt`` is an ObjectAnnotation (anything with pose_in_camera()).  The
    prior is selected from the object's spherical placement, the cell from
    the projected origin on the prior's head grid, and every raw target is
    the exact inverse of the decode rule.
    """
    config.check_intrinsics(intrinsics)
    pose = gt.pose_in_camera()
    s = spherical_params(pose)
    prior_id = assign_region(s, priors)  # DistanceOutOfRange / NegativePitch propagate
    head = head_of(prior_id)
    grid = grids[head]
    prior = priors.by_id(prior_id)

    try:
        u, v = project(intrinsics, pose.translation)
    except BehindCameraError as exc:
        raise OriginOffScreenError(str(exc)) from exc
    if not (0.0 <= u < intrinsics.width and 0.0 <= v < intrinsics.height):
        raise OriginOffScreenError(f"origin ({u:.1f}, {v:.1f}) outside image")

    col = int(u // grid.stride_px)
    row = int(v // grid.stride_px)
    half = (config.spread - 1.0) / 2.0
    t_x = logit((u / grid.stride_px - col + half) / config.spread)
    t_y = logit((v / grid.stride_px - row + half) / config.spread)
    t_r = bounded_sigmoid_inv(s.r, prior.bounds.r_min, prior.bounds.r_max)

    R_gt = euler_to_matrix(pose.rotation)
    delta = matrix_to_euler(R_gt @ _anchor_matrix(prior.anchor_orientation).T)
    yaw_hw, pitch_hw, roll_hw = _offset_halfwidths(prior, config)
    try:
        t_yaw = bounded_sigmoid_inv(delta.yaw, -yaw_hw, yaw_hw)
        t_pitch = bounded_sigmoid_inv(delta.pitch, -pitch_hw, pitch_hw)
        t_roll = bounded_sigmoid_inv(delta.roll, -roll_hw, roll_hw)
    except InverseOutOfRangeError as exc:
        raise OrientationOutOfRangeError(
            f"offset {delta} exceeds anchor range of prior {prior_id}") from exc

    if not 0 <= gt.class_id < config.n_classes:
        raise ValueError(f"class id {gt.class_id} outside 0..{config.n_classes - 1}")

    target = CellPrediction(
        cell=(col, row),
        prior_id=prior_id,
        t_x=t_x, t_y=t_y, t_r=t_r,
        t_yaw=t_yaw, t_pitch=t_pitch, t_roll=t_roll,
        t_obj=0.0,
        t_class=(0.0,) * config.n_classes,
    )
    return EncodedTarget(
        head=head,
        cell=(col, row),
        prior_id=prior_id,
        anchor_index=(prior_id - 1) % PRIORS_PER_HEAD,
        class_id=gt.class_id,
        target=target,
        origin_px=(u, v),
        distance=s.r,
        orientation=pose.rotation,
    )


def reproject_bbox(d: DecodedDetection, hull: np.ndarray,
                   k: CameraIntrinsics) -> Bbox2D:
    """Axis-aligned box around the detection's reprojected hull points.

    The detection implies a pose: origin backprojected at the decoded
    distance, decoded orientation applied.  Hull points are object-frame.
    """
    t = backproject(k, d.origin_px, d.distance).as_array()
    R = euler_to_matrix(d.orientation)
    pts = np.asarray(hull, dtype=float) @ R.T + t
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise HullBehindCameraError("hull point at non-positive depth")
    f = k.focal_px
    cx, cy = k.center
    us = cx + f * pts[:, 0] / z
    vs = cy + f * pts[:, 1] / z
    return Bbox2D(float(us.min()), float(vs.min()), float(us.max()), float(vs.max()))


def iou(a: Bbox2D, b: Bbox2D) -> float:
    """Intersection over union of two axis-aligned boxes; 0 when disjoint."""
    iw = min(a.max_u, b.max_u) - max(a.min_u, b.min_u)
    ih = min(a.max_v, b.max_v) - max(a.min_v, b.min_v)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


class PredictionTensors:
    """Raw prediction arrays for all three heads of one image.

    Heads are dense float64 arrays of shape (rows, cols, anchors, channels);
    see the module docstring for the channel order and the flat layout.
    """

    def __init__(self, config: CodecConfig, intrinsics: CameraIntrinsics):
        config.check_intrinsics(intrinsics)
        self.config = config
        self.resolution = (intrinsics.width, intrinsics.height)
        self.grids = config.grids_for(intrinsics)
        self.heads = {
            head: np.zeros((g.rows, g.cols, PRIORS_PER_HEAD, config.channels))
            for head, g in self.grids.items()
        }

    def copy(self) -> "PredictionTensors":
        out = object.__new__(PredictionTensors)
        out.config = self.config
        out.resolution = self.resolution
        out.grids = self.grids
        out.heads = {h: a.copy() for h, a in self.heads.items()}
        return out

    def zero(self) -> None:
        for a in self.heads.values():
            a[:] = 0.0

    def raw_slots(self, head: int) -> np.ndarray:
        """(n_slots, channels) view in kernel slot order (row, col, anchor)."""
        a = self.heads[head]
        return a.reshape(-1, a.shape[-1])

    def write_target(self, t: EncodedTarget, objectness_logit: float | None = None,
                     class_logits=None) -> None:
        col, row = t.cell
        vals = self.heads[t.head][row, col, t.anchor_index]
        tgt = t.target
        vals[CH_TX:CH_TROLL + 1] = (tgt.t_x, tgt.t_y, tgt.t_r,
                                    tgt.t_yaw, tgt.t_pitch, tgt.t_roll)
        if objectness_logit is not None:
            vals[CH_TOBJ] = objectness_logit
        if class_logits is not None:
            vals[CH_CLASS0:] = class_logits

    def cell_prediction(self, head: int, col: int, row: int, anchor: int) -> CellPrediction:
        vals = self.heads[head][row, col, anchor]
        return CellPrediction(
            cell=(col, row),
            prior_id=(head - 1) * PRIORS_PER_HEAD + anchor + 1,
            t_x=float(vals[CH_TX]), t_y=float(vals[CH_TY]), t_r=float(vals[CH_TR]),
            t_yaw=float(vals[CH_TYAW]), t_pitch=float(vals[CH_TPITCH]),
            t_roll=float(vals[CH_TROLL]), t_obj=float(vals[CH_TOBJ]),
            t_class=tuple(float(x) for x in vals[CH_CLASS0:]),
        )

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.heads[h].ravel() for h in (1, 2, 3)])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        expected = sum(a.size for a in self.heads.values())
        if flat.size != expected:
            raise ValueError(f"flat tensor has {flat.size} values, expected {expected}")
        pos = 0
        for h in (1, 2, 3):
            a = self.heads[h]
            a[:] = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size


def anchor_params_for_head(priors: PriorTable, head: int,
                           config: CodecConfig = DEFAULT_CODEC) -> np.ndarray:
    """(anchors, 14) kernel parameter rows: anchor R row-major, radial
    interval, yaw/pitch/roll offset halfwidths."""
    rows = []
    for p in priors.for_head(head):
        R = euler_to_matrix(p.anchor_orientation)
        yaw_hw, pitch_hw, roll_hw = _offset_halfwidths(p, config)
        rows.append(np.concatenate([
            R.ravel(),
            [p.bounds.r_min, p.bounds.r_max, yaw_hw, pitch_hw, roll_hw],
        ]))
    return np.ascontiguousarray(rows, dtype=np.float64)


def decode_tensors(tensors: PredictionTensors, priors: PriorTable,
                   objectness_threshold: float = 0.5) -> list[DecodedDetection]:
    """All decoded detections whose objectness clears the threshold."""
    out = []
    for head, grid in tensors.grids.items():
        arr = tensors.heads[head]
        obj = 1.0 / (1.0 + np.exp(-np.clip(arr[..., CH_TOBJ], -500, 500)))
        for row, col, anchor in zip(*np.nonzero(obj >= objectness_threshold)):
            p = tensors.cell_prediction(head, int(col), int(row), int(anchor))
            out.append(decode_cell(p, grid, priors, tensors.config))
    out.sort(key=lambda d: -d.confidence)
    return out


def suppress_overlaps(detections, hull: np.ndarray, k: CameraIntrinsics,
                      iou_threshold: float = 0.45) -> list[DecodedDetection]:
    """Greedy overlap suppression on reprojected boxes, best confidence first."""
    ranked = sorted(detections, key=lambda d: -d.confidence)
    kept: list[DecodedDetection] = []
    boxes: list[Bbox2D] = []
    for d in ranked:
        box = reproject_bbox(d, hull, k)
        if all(iou(box, b) <= iou_threshold for b in boxes):
            kept.append(d)
            boxes.append(box)
    return kept
