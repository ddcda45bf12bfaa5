"""Loss over prediction tensors, its analytic gradient, and a toy fitter.

The objectness loss has two parts: a positive term that reinforces the
slots where ground truths actually sit, and a negative term that pushes
every other slot toward zero objectness, except slots whose decoded and
reprojected 2D box already overlaps a ground-truth box beyond the ignore
threshold (those are left alone).  With ``require_same_anchor`` a slot can
only earn that exemption from a ground truth matched to the same anchor.

Regression (position, distance, orientation) is squared error in raw logit
space at the positive slots only, which makes the encoder's output the
exact minimizer.  Class scores use per-class binary cross-entropy at the
positive slots.

Gradients treat the ignore mask as locally constant, so the loss is
piecewise smooth with kinks only where a slot's box crosses the IoU
threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .codec import (
    CH_TOBJ,
    CH_CLASS0,
    CodecConfig,
    DecodedDetection,
    EncodedTarget,
    PredictionTensors,
    anchor_params_for_head,
    encode_ground_truth,
    reproject_bbox,
)
from .geometry import CameraIntrinsics, CuboidSpec, object_corner_points
from .priors import PRIORS_PER_HEAD, PriorTable

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "TrainSchedule",
    "ShapeMismatchError",
    "lr_at",
    "LossEvaluator",
    "write_trace_csv",
    "TRACE_COLUMNS",
]


class ShapeMismatchError(ValueError):
    """Prediction tensors do not match the evaluator's grids."""


@dataclass(frozen=True)
class LossConfig:
    iou_ignore_threshold: float = 0.5
    require_same_anchor: bool = True
    w_objectness_positive: float = 1.0
    w_objectness_negative: float = 1.0
    w_position: float = 1.0
    w_distance: float = 1.0
    w_orientation: float = 1.0
    w_class: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.iou_ignore_threshold <= 1.0:
            raise ValueError("iou_ignore_threshold outside [0, 1]")
        for name in ("w_objectness_positive", "w_objectness_negative", "w_position",
                     "w_distance", "w_orientation", "w_class"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    objectness_positive: float
    objectness_negative: float
    position: float
    distance: float
    orientation: float
    classification: float
    total: float


@dataclass(frozen=True)
class TrainSchedule:
    """Learning-rate decay: base_rate / (1 + epoch ** decay_exponent)."""

    base_rate: float = 1e-3
    decay_exponent: float = 1.5

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")


def lr_at(epoch: int, s: TrainSchedule = TrainSchedule()) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return s.base_rate / (1.0 + epoch ** s.decay_exponent)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _softplus(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, t)


TRACE_COLUMNS = ("step", "objectness_positive", "objectness_negative", "position",
                 "distance", "orientation", "classification", "total")


def write_trace_csv(trace, path) -> None:
    """Write a fit trace (list of LossBreakdown) as CSV, one row per step."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for i, b in enumerate(trace):
            w.writerow([i, b.objectness_positive, b.objectness_negative, b.position,
                        b.distance, b.orientation, b.classification, b.total])


class LossEvaluator:
    """Loss, gradient and toy fitting for one camera setup.

    Binds the pieces every evaluation needs: the prior table, codec
    configuration, camera intrinsics, and the object hull (the cuboid
    corners) used to reproject decoded slots for the ignore test.
    """

    def __init__(self, priors: PriorTable, codec: CodecConfig,
                 intrinsics: CameraIntrinsics, cuboid: CuboidSpec,
                 config: LossConfig = LossConfig()):
        codec.check_intrinsics(intrinsics)
        self.priors = priors
        self.codec = codec
        self.intrinsics = intrinsics
        self.cuboid = cuboid
        self.config = config
        self.grids = codec.grids_for(intrinsics)
        self.hull = np.ascontiguousarray(object_corner_points(cuboid))
        self._anchor_params = {
            head: anchor_params_for_head(priors, head, codec) for head in self.grids
        }

    def new_tensors(self) -> PredictionTensors:
        return PredictionTensors(self.codec, self.intrinsics)

    def _check_shapes(self, tensors: PredictionTensors) -> None:
        for head, grid in self.grids.items():
            want = (grid.rows, grid.cols, PRIORS_PER_HEAD, self.codec.channels)
            got = tensors.heads.get(head)
            if got is None or got.shape != want:
                raise ShapeMismatchError(
                    f"head {head}: expected {want}, got {None if got is None else got.shape}")

    def encode_scene(self, annotations) -> list[EncodedTarget]:
        return [encode_ground_truth(a, self.grids, self.priors, self.intrinsics,
                                    self.codec) for a in annotations]

    def _gt_boxes(self, targets) -> list[tuple[int, np.ndarray]]:
        """Per ground truth: (prior_id, reprojected box as [u0, v0, u1, v1])."""
        out = []
        for t in targets:
            det = DecodedDetection(origin_px=t.origin_px, distance=t.distance,
                                   orientation=t.orientation, objectness=1.0)
            box = reproject_bbox(det, self.hull, self.intrinsics)
            out.append((t.prior_id, np.array([box.min_u, box.min_v, box.max_u, box.max_v])))
        return out

    def _slot_boxes(self, tensors: PredictionTensors, head: int):
        grid = self.grids[head]
        raw = tensors.raw_slots(head)
        raw6 = np.ascontiguousarray(raw[:, :6])
        f = self.intrinsics.focal_px
        ppx, ppy = self.intrinsics.center
        return _kernels.decode_boxes(
            raw6, grid.rows, grid.cols, PRIORS_PER_HEAD, float(grid.stride_px),
            self.codec.spread, self._anchor_params[head], f, ppx, ppy, self.hull)

    @staticmethod
    def _iou_vs(boxes: np.ndarray, gt: np.ndarray) -> np.ndarray:
        iw = np.minimum(boxes[:, 2], gt[2]) - np.maximum(boxes[:, 0], gt[0])
        ih = np.minimum(boxes[:, 3], gt[3]) - np.maximum(boxes[:, 1], gt[1])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
        gt_area = (gt[2] - gt[0]) * (gt[3] - gt[1])
        union = area + gt_area - inter
        return np.where(union > 0.0, inter / np.maximum(union, 1e-300), 0.0)

    def _masks(self, tensors: PredictionTensors, targets):
        """Per head: (positive bool, ignored bool) over flat slots."""
        gt_boxes = self._gt_boxes(targets)
        masks = {}
        for head, grid in self.grids.items():
            n = grid.rows * grid.cols * PRIORS_PER_HEAD
            positive = np.zeros(n, dtype=bool)
            for t in targets:
                if t.head == head:
                    col, row = t.cell
                    positive[(row * grid.cols + col) * PRIORS_PER_HEAD + t.anchor_index] = True
            iou_max = np.zeros(n)
            if gt_boxes:
                boxes, valid = self._slot_boxes(tensors, head)
                anchor_of_slot = np.arange(n) % PRIORS_PER_HEAD
                for prior_id, gt in gt_boxes:
                    vals = self._iou_vs(boxes, gt)
                    if self.config.require_same_anchor:
                        gt_head = (prior_id - 1) // PRIORS_PER_HEAD + 1
                        if gt_head != head:
                            continue
                        sel = anchor_of_slot == (prior_id - 1) % PRIORS_PER_HEAD
                        np.maximum(iou_max, np.where(sel, vals, 0.0), out=iou_max)
                    else:
                        np.maximum(iou_max, vals, out=iou_max)
                iou_max *= valid.astype(float)
            ignored = (iou_max > self.config.iou_ignore_threshold) & ~positive
            masks[head] = (positive, ignored)
        return masks

    def _evaluate(self, tensors: PredictionTensors, annotations, want_grad: bool):
        self._check_shapes(tensors)
        cfg = self.config
        targets = self.encode_scene(annotations)
        masks = self._masks(tensors, targets)

        obj_pos = obj_neg = pos_se = dist_se = orient_se = cls_bce = 0.0
        grad = self.new_tensors() if want_grad else None

        for head, grid in self.grids.items():
            raw = tensors.raw_slots(head)
            positive, ignored = masks[head]
            t_obj = raw[:, CH_TOBJ]
            neg_sel = ~positive & ~ignored

            obj_pos += float(np.sum(_softplus(-t_obj[positive])))
            obj_neg += float(np.sum(_softplus(t_obj[neg_sel])))

            if want_grad:
                graw = grad.raw_slots(head)
                g_obj = np.zeros_like(t_obj)
                g_obj[positive] = (_sigmoid(t_obj[positive]) - 1.0) * cfg.w_objectness_positive
                g_obj[neg_sel] = _sigmoid(t_obj[neg_sel]) * cfg.w_objectness_negative
                graw[:, CH_TOBJ] = g_obj

        for t in targets:
            grid = self.grids[t.head]
            col, row = t.cell
            slot = (row * grid.cols + col) * PRIORS_PER_HEAD + t.anchor_index
            raw = tensors.raw_slots(t.head)
            vals = raw[slot]
            tgt = t.target
            d = np.array([
                vals[0] - tgt.t_x, vals[1] - tgt.t_y, vals[2] - tgt.t_r,
                vals[3] - tgt.t_yaw, vals[4] - tgt.t_pitch, vals[5] - tgt.t_roll,
            ])
            pos_se += float(d[0] ** 2 + d[1] ** 2)
            dist_se += float(d[2] ** 2)
            orient_se += float(d[3] ** 2 + d[4] ** 2 + d[5] ** 2)

            cls_logits = vals[CH_CLASS0:]
            want = np.zeros(len(cls_logits))
            want[t.class_id] = 1.0
            cls_bce += float(np.sum(_softplus(-cls_logits[want == 1.0])))
            cls_bce += float(np.sum(_softplus(cls_logits[want == 0.0])))

            if want_grad:
                graw = grad.raw_slots(t.head)
                graw[slot, 0:2] += 2.0 * d[0:2] * cfg.w_position
                graw[slot, 2] += 2.0 * d[2] * cfg.w_distance
                graw[slot, 3:6] += 2.0 * d[3:6] * cfg.w_orientation
                s = _sigmoid(cls_logits)
                graw[slot, CH_CLASS0:] += (s - want) * cfg.w_class

        total = (cfg.w_objectness_positive * obj_pos
                 + cfg.w_objectness_negative * obj_neg
                 + cfg.w_position * pos_se
                 + cfg.w_distance * dist_se
                 + cfg.w_orientation * orient_se
                 + cfg.w_class * cls_bce)
        breakdown = LossBreakdown(obj_pos, obj_neg, pos_se, dist_se, orient_se,
                                  cls_bce, total)
        return breakdown, grad

    def objectness_loss(self, tensors: PredictionTensors, annotations) -> tuple[float, float]:
        b, _ = self._evaluate(tensors, annotations, want_grad=False)
        return (b.objectness_positive, b.objectness_negative)

    def regression_loss(self, tensors: PredictionTensors, annotations) -> tuple[float, float, float]:
        b, _ = self._evaluate(tensors, annotations, want_grad=False)
        return (b.position, b.distance, b.orientation)

    def total_loss(self, tensors: PredictionTensors, annotations) -> LossBreakdown:
        b, _ = self._evaluate(tensors, annotations, want_grad=False)
        return b

    def loss_gradient(self, tensors: PredictionTensors, annotations) -> PredictionTensors:
        """d(total) / d(logit) for every slot and channel."""
        _, grad = self._evaluate(tensors, annotations, want_grad=True)
        return grad

    def fit_tensor(self, annotations, steps: int,
                   schedule: TrainSchedule = TrainSchedule()):
        """Recover a scene's tensor by descending the loss from zero logits.

        Uses resilient per-coordinate gradient descent: each coordinate
        steps against its gradient sign with a step size seeded from the
        schedule's base rate, grown 1.2x while the sign holds and halved
        when it flips.  A fixed-rate update at the schedule's scale moves
        logits by less than 1e-2 over any practical number of steps, so
        sign-adaptive steps are what make the fit converge; the schedule
        still fixes the starting scale.

        Returns (tensors, trace) where trace holds one LossBreakdown per
        step plus a final post-update evaluation.
        """
        tensors = self.new_tensors()
        flat = tensors.to_flat()
        step_sizes = np.full(flat.size, lr_at(0, schedule))
        prev_sign = np.zeros(flat.size)
        trace: list[LossBreakdown] = []
        for _ in range(steps):
            breakdown, grad = self._evaluate(tensors, annotations, want_grad=True)
            trace.append(breakdown)
            g = grad.to_flat()
            sign = np.sign(g)
            agree = sign * prev_sign
            np.minimum(step_sizes * 1.2, 1.0, out=step_sizes, where=agree > 0)
            np.maximum(step_sizes * 0.5, 1e-12, out=step_sizes, where=agree < 0)
            flat -= sign * step_sizes
            tensors.load_flat(flat)
            prev_sign = sign
        final, _ = self._evaluate(tensors, annotations, want_grad=False)
        trace.append(final)
        return tensors, trace
