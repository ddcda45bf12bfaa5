import math

import numpy as np
import pytest

from arenatrack import codec as C
from arenatrack import geometry as G
from arenatrack import priors as P


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation via a normalized random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng, span: float = 10.0) -> G.Pose:
    t = G.Vec3(*rng.uniform(-span, span, 3))
    return G.Pose(G.matrix_to_euler(random_rotation(rng)), t)


def axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def sample_in_coverage_gt(rng, grids, table, intrinsics, config, head=None,
                          min_distance=0.0):
    """A random encodable ground truth, built by decoding a random slot.

    Roll offsets are biased upward so the implied camera sits above the
    object's base plane most of the time; out-of-coverage draws are
    rejected and resampled.  ``min_distance`` filters out objects close
    enough to wrap around the camera (needed wherever the hull must stay
    fully in front of it).
    """
    while True:
        h = int(rng.integers(1, 4)) if head is None else head
        grid = grids[h]
        anchor = int(rng.integers(0, P.PRIORS_PER_HEAD))
        p = C.CellPrediction(
            cell=(int(rng.integers(0, grid.cols)), int(rng.integers(0, grid.rows))),
            prior_id=(h - 1) * P.PRIORS_PER_HEAD + anchor + 1,
            t_x=float(rng.uniform(-2, 2)),
            t_y=float(rng.uniform(-2, 2)),
            t_r=float(rng.uniform(-3, 3)),
            t_yaw=float(rng.uniform(-1.2, 1.2)),
            t_pitch=float(rng.uniform(-1.2, 1.2)),
            t_roll=float(rng.uniform(0.1, 1.5)),
        )
        d = C.decode_cell(p, grid, table, config)
        if d.distance < min_distance:
            continue
        pose = G.Pose(d.orientation, G.backproject(intrinsics, d.origin_px, d.distance))
        gt = C.PosedObject(pose)
        try:
            C.encode_ground_truth(gt, grids, table, intrinsics, config)
        except (C.OrientationOutOfRangeError, C.OriginOffScreenError,
                C.InverseOutOfRangeError, P.DistanceOutOfRangeError,
                P.NegativePitchError):
            continue
        return gt, d


@pytest.fixture(scope="session")
def table():
    return P.default_region_table()


@pytest.fixture(scope="session")
def intrinsics():
    return G.CameraIntrinsics(1.2, 416, 416)


@pytest.fixture(scope="session")
def codec_config():
    return C.CodecConfig(reference_resolution=(416, 416))


@pytest.fixture(scope="session")
def grids(codec_config, intrinsics):
    return codec_config.grids_for(intrinsics)
