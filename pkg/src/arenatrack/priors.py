"""Spherical anchor regions and per-region anchor statistics.

Object placements (distance r, view azimuth theta, view elevation phi) are
partitioned into 18 regions: three detection heads by distance, four yaw
bands per head (front / left / back / right of the object), and a radial
split of the front and back bands.  Each region carries an anchor: a mean
orientation and a reference distance that the prediction codec offsets
against.

The default table uses four 90-degree yaw bands centered on the object's
front (0), left (pi/2), back (pi) and right (3pi/2) sides, which tiles the
full circle.  A "strict" variant with 45-degree bands at centers 0, pi/4,
pi/2 and 3pi/4 is exported for comparison; it does not tile the circle and
is not used for assignment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels
from .geometry import (
    EulerAngles,
    euler_to_matrix,
    matrix_to_euler,
    so3_mean,
)

__all__ = [
    "YawBand",
    "RegionBounds",
    "Prior",
    "PriorTable",
    "DistanceOutOfRangeError",
    "NegativePitchError",
    "InvalidIdError",
    "EmptyDatasetError",
    "default_region_table",
    "strict_region_table",
    "assign_region",
    "assign_region_batch",
    "head_of",
    "compute_priors",
    "PRIORS_PER_HEAD",
    "NUM_HEADS",
    "NUM_PRIORS",
]

PRIORS_PER_HEAD = 6
NUM_HEADS = 3
NUM_PRIORS = PRIORS_PER_HEAD * NUM_HEADS

# Exactly-level placements can compute phi = -1e-17; only materially
# negative elevations count as below the base plane.
PHI_TOLERANCE = 1e-12

# Radial boundaries in meters.  Front and back bands are split once by
# distance; the lateral bands are single intervals.
FRONT_BACK_EDGES = {1: (0.0, 17.5, 32.5), 2: (32.5, 50.0, 70.0), 3: (70.0, 90.0, 110.0)}
LATERAL_EDGES = {1: (0.0, 25.0), 2: (25.0, 60.0), 3: (60.0, 100.0)}


class DistanceOutOfRangeError(ValueError):
    """No region of the sample's yaw band covers its distance."""


class NegativePitchError(ValueError):
    """Sample has the camera below the object's base plane (phi < 0)."""


class InvalidIdError(ValueError):
    """Prior id outside 1..18."""


class EmptyDatasetError(ValueError):
    """Prior computation needs at least one annotation."""


class YawBand(Enum):
    FRONT = "front"
    LEFT = "left"
    BACK = "back"
    RIGHT = "right"


_BAND_CENTER = {
    YawBand.FRONT: 0.0,
    YawBand.LEFT: math.pi / 2.0,
    YawBand.BACK: math.pi,
    YawBand.RIGHT: 3.0 * math.pi / 2.0,
}


@dataclass(frozen=True, slots=True)
class RegionBounds:
    head: int
    yaw_band: YawBand
    r_min: float
    r_max: float
    theta_center: float
    theta_halfwidth: float

    def contains(self, r: float, theta: float) -> bool:
        d = math.fmod(theta - self.theta_center + math.pi, 2.0 * math.pi)
        if d < 0.0:
            d += 2.0 * math.pi
        d -= math.pi
        return (-self.theta_halfwidth <= d < self.theta_halfwidth
                and self.r_min <= r < self.r_max)


@dataclass(frozen=True, slots=True)
class Prior:
    prior_id: int
    bounds: RegionBounds
    anchor_orientation: EulerAngles
    anchor_distance: float
    sample_count: int = 0

    @property
    def from_samples(self) -> bool:
        return self.sample_count > 0


@dataclass(frozen=True, slots=True)
class PriorTable:
    priors: tuple[Prior, ...]
    provenance: str = "default"

    def __post_init__(self):
        ids = [p.prior_id for p in self.priors]
        if ids != list(range(1, len(self.priors) + 1)):
            raise ValueError("prior ids must be 1..n in order")

    def by_id(self, prior_id: int) -> Prior:
        if not 1 <= prior_id <= len(self.priors):
            raise InvalidIdError(f"prior id {prior_id}")
        return self.priors[prior_id - 1]

    def for_head(self, head: int) -> tuple[Prior, ...]:
        return tuple(p for p in self.priors if p.bounds.head == head)

    def region_params(self) -> np.ndarray:
        """(n, 4) array [theta_center, theta_halfwidth, r_min, r_max] for the kernels."""
        out = np.empty((len(self.priors), 4))
        for i, p in enumerate(self.priors):
            b = p.bounds
            out[i] = (b.theta_center, b.theta_halfwidth, b.r_min, b.r_max)
        return out

    def to_json_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "priors": [
                {
                    "prior_id": p.prior_id,
                    "head": p.bounds.head,
                    "yaw_band": p.bounds.yaw_band.value,
                    "r_min_m": p.bounds.r_min,
                    "r_max_m": p.bounds.r_max,
                    "theta_center_rad": p.bounds.theta_center,
                    "theta_halfwidth_rad": p.bounds.theta_halfwidth,
                    "anchor_yaw_rad": p.anchor_orientation.yaw,
                    "anchor_pitch_rad": p.anchor_orientation.pitch,
                    "anchor_roll_rad": p.anchor_orientation.roll,
                    "anchor_distance_m": p.anchor_distance,
                    "sample_count": p.sample_count,
                }
                for p in self.priors
            ],
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "PriorTable":
        priors = []
        for rec in doc["priors"]:
            bounds = RegionBounds(
                head=int(rec["head"]),
                yaw_band=YawBand(rec["yaw_band"]),
                r_min=float(rec["r_min_m"]),
                r_max=float(rec["r_max_m"]),
                theta_center=float(rec["theta_center_rad"]),
                theta_halfwidth=float(rec["theta_halfwidth_rad"]),
            )
            priors.append(Prior(
                prior_id=int(rec["prior_id"]),
                bounds=bounds,
                anchor_orientation=EulerAngles(
                    float(rec["anchor_yaw_rad"]),
                    float(rec["anchor_pitch_rad"]),
                    float(rec["anchor_roll_rad"]),
                ),
                anchor_distance=float(rec["anchor_distance_m"]),
                sample_count=int(rec.get("sample_count", 0)),
            ))
        return PriorTable(tuple(priors), provenance=doc.get("provenance", "default"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))

    @staticmethod
    def load(path) -> "PriorTable":
        return PriorTable.from_json_dict(json.loads(Path(path).read_text()))


# Orientation of an upright object facing the camera: object up maps to
# image up (-Y camera) and the object's forward axis points back along the
# optical axis.
FACING_CAMERA = np.array([
    [-1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, -1.0, 0.0],
])


def facing_orientation(view_yaw: float) -> EulerAngles:
    """Orientation of an upright on-axis object seen at the given view azimuth."""
    c, s = math.cos(view_yaw), math.sin(view_yaw)
    ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return matrix_to_euler(ry @ FACING_CAMERA)


def _build_table(band_layout, provenance: str) -> PriorTable:
    priors = []
    pid = 1
    for head in (1, 2, 3):
        near, mid, far = FRONT_BACK_EDGES[head]
        lat_lo, lat_hi = LATERAL_EDGES[head]
        front_c, left_c, back_c, right_c, hw = band_layout
        regions = [
            (YawBand.FRONT, near, mid, front_c),
            (YawBand.FRONT, mid, far, front_c),
            (YawBand.LEFT, lat_lo, lat_hi, left_c),
            (YawBand.BACK, near, mid, back_c),
            (YawBand.BACK, mid, far, back_c),
            (YawBand.RIGHT, lat_lo, lat_hi, right_c),
        ]
        for band, r_min, r_max, center in regions:
            bounds = RegionBounds(head, band, r_min, r_max, center, hw)
            priors.append(Prior(
                prior_id=pid,
                bounds=bounds,
                anchor_orientation=facing_orientation(center),
                anchor_distance=(r_min + r_max) / 2.0,
            ))
            pid += 1
    return PriorTable(tuple(priors), provenance=provenance)


def default_region_table() -> PriorTable:
    """The 18-region table with full-circle yaw bands.

    Anchor orientations start at each region's angular center with zero
    view elevation; :func:`compute_priors` replaces them with dataset means.
    """
    layout = (0.0, math.pi / 2.0, math.pi, 3.0 * math.pi / 2.0, math.pi / 4.0)
    return _build_table(layout, provenance="default")


def strict_region_table() -> PriorTable:
    """The narrow-band variant with 45-degree yaw bands (comparison only).

    Band centers sit at 0, pi/4, pi/2 and 3pi/4; the table covers only a
    quarter of placements and is therefore never used for assignment.
    """
    layout = (0.0, math.pi / 4.0, math.pi / 2.0, 3.0 * math.pi / 4.0, math.pi / 8.0)
    return _build_table(layout, provenance="strict")


_DEFAULT_TABLE: PriorTable | None = None


def _default_table() -> PriorTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = default_region_table()
    return _DEFAULT_TABLE


def assign_region(s, table: PriorTable | None = None) -> int:
    """Prior id (1..18) of a spherical sample.

    Raises NegativePitchError for phi < 0 and DistanceOutOfRangeError when
    the sample lies beyond the farthest region of its yaw band.
    """
    table = table or _default_table()
    if s.phi < -PHI_TOLERANCE:
        raise NegativePitchError(f"phi {s.phi} < 0")
    for p in table.priors:
        if p.bounds.contains(s.r, s.theta):
            return p.prior_id
    raise DistanceOutOfRangeError(f"r {s.r} not covered for theta {s.theta}")


def assign_region_batch(r, theta, phi, table: PriorTable | None = None):
    """Vectorized assignment.

    Returns (ids, counts): ids holds prior ids 1..18, 0 where the distance
    is out of range, -1 where phi < 0; counts is the number of matching
    regions per sample (1 everywhere for a well-formed table).
    """
    table = table or _default_table()
    r = np.ascontiguousarray(r, dtype=np.float64).ravel()
    theta = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    phi = np.ascontiguousarray(phi, dtype=np.float64).ravel()
    ids, counts = _kernels.region_match_counts(r, theta, phi, table.region_params())
    out = np.where(ids == -2, -1, np.where(ids == -1, 0, ids + 1)).astype(np.int32)
    return out, counts


def head_of(prior_id: int) -> int:
    """Head index 1..3 owning a prior; lower heads cover nearer objects."""
    if not 1 <= prior_id <= NUM_PRIORS:
        raise InvalidIdError(f"prior id {prior_id}")
    return (prior_id - 1) // PRIORS_PER_HEAD + 1


def compute_priors(dataset, table: PriorTable | None = None) -> PriorTable:
    """Recompute anchor orientations from annotated samples.

    Each region's anchor becomes the rotation mean of the object-in-camera
    orientations of the samples assigned to it.  Regions without samples
    keep their default anchor (sample_count stays 0).  Samples with phi < 0
    or out-of-range distance are skipped: they belong to no region.
    Region bounds and anchor distances are never modified.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDatasetError("no annotations")
    table = table or _default_table()
    buckets: dict[int, list[np.ndarray]] = {p.prior_id: [] for p in table.priors}
    for ann in dataset:
        s = ann.spherical
        try:
            pid = assign_region(s, table)
        except (NegativePitchError, DistanceOutOfRangeError):
            continue
        buckets[pid].append(euler_to_matrix(ann.pose_in_camera().rotation))
    priors = []
    for p in table.priors:
        samples = buckets[p.prior_id]
        if samples:
            mean = so3_mean(samples)
            priors.append(replace(
                p,
                anchor_orientation=matrix_to_euler(mean),
                sample_count=len(samples),
            ))
        else:
            priors.append(replace(p, sample_count=0))
    return PriorTable(tuple(priors), provenance="computed")
