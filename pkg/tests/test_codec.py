import math

import numpy as np
import pytest

from arenatrack import codec as C
from arenatrack import geometry as G
from arenatrack import priors as P

from conftest import sample_in_coverage_gt


def test_bounded_sigmoid_midpoint():
    assert C.bounded_sigmoid(0.0, 0.0, 2.0) == pytest.approx(1.0)
    assert C.bounded_sigmoid(0.0, 5.0, 9.0) == pytest.approx(7.0)


def test_bounded_sigmoid_inverse_round_trip():
    for t in np.linspace(-10, 10, 81):
        y = C.bounded_sigmoid(float(t), -3.0, 12.0)
        assert C.bounded_sigmoid_inv(y, -3.0, 12.0) == pytest.approx(float(t), abs=1e-9)


def test_bounded_sigmoid_saturates():
    assert abs(C.bounded_sigmoid(-50.0, 0.0, 17.5) - 0.0) < 1e-9
    assert abs(C.bounded_sigmoid(50.0, 0.0, 17.5) - 17.5) < 1e-9


def test_bounded_sigmoid_errors():
    with pytest.raises(C.RangeInvertedError):
        C.bounded_sigmoid(0.0, 2.0, 1.0)
    with pytest.raises(C.RangeInvertedError):
        C.bounded_sigmoid_inv(0.5, 2.0, 1.0)
    with pytest.raises(C.InverseOutOfRangeError):
        C.bounded_sigmoid_inv(1.0, 1.0, 2.0)
    with pytest.raises(C.InverseOutOfRangeError):
        C.bounded_sigmoid_inv(2.5, 1.0, 2.0)


def test_decode_cell_zero_logits(table, grids, codec_config):
    p = C.CellPrediction(cell=(5, 5), prior_id=1)
    d = C.decode_cell(p, grids[1], table, codec_config)
    assert d.origin_px == pytest.approx((176.0, 176.0))  # cell center, stride 32
    assert d.distance == pytest.approx(8.75)  # midpoint of [0, 17.5)
    anchor = G.euler_to_matrix(table.by_id(1).anchor_orientation)
    assert G.geodesic_distance(G.euler_to_matrix(d.orientation), anchor) < 1e-12
    assert d.objectness == pytest.approx(0.5)


def test_decode_cell_head_mismatch(table, grids, codec_config):
    p = C.CellPrediction(cell=(0, 0), prior_id=7)  # head-2 prior on head-1 grid
    with pytest.raises(C.PriorHeadMismatchError):
        C.decode_cell(p, grids[1], table, codec_config)


def test_decode_distance_saturates_at_band_edge(table, grids, codec_config):
    p = C.CellPrediction(cell=(3, 3), prior_id=1, t_r=50.0)
    d = C.decode_cell(p, grids[1], table, codec_config)
    assert abs(d.distance - 17.5) < 1e-6
    p = C.CellPrediction(cell=(3, 3), prior_id=1, t_r=-50.0)
    assert abs(C.decode_cell(p, grids[1], table, codec_config).distance) < 1e-6


def test_origin_spread_spans_two_cells(table, grids, codec_config):
    lo = C.decode_cell(C.CellPrediction(cell=(5, 5), prior_id=1, t_x=-50.0),
                       grids[1], table, codec_config)
    hi = C.decode_cell(C.CellPrediction(cell=(5, 5), prior_id=1, t_x=50.0),
                       grids[1], table, codec_config)
    assert lo.origin_px[0] == pytest.approx((5 - 0.5) * 32, abs=1e-6)
    assert hi.origin_px[0] == pytest.approx((5 + 1.5) * 32, abs=1e-6)


def test_encode_dead_center_object(table, grids, intrinsics, codec_config):
    pose = G.Pose(P.facing_orientation(0.0), G.Vec3(0.0, 0.0, 8.75))
    t = C.encode_ground_truth(C.PosedObject(pose), grids, table, intrinsics,
                              codec_config)
    assert t.prior_id == 1
    assert t.cell == (6, 6)  # center cell of the 13x13 grid
    assert t.target.t_r == pytest.approx(0.0, abs=1e-9)
    assert t.target.t_x == pytest.approx(0.0, abs=1e-9)
    assert t.target.t_y == pytest.approx(0.0, abs=1e-9)
    assert t.target.t_obj == 0.0


def test_encode_mid_distance_goes_to_head_two(table, grids, intrinsics, codec_config):
    pose = G.Pose(P.facing_orientation(0.0), G.Vec3(0.0, 0.0, 40.0))
    t = C.encode_ground_truth(C.PosedObject(pose), grids, table, intrinsics,
                              codec_config)
    assert t.head == 2
    assert 7 <= t.prior_id <= 12


def test_encode_rejects_off_screen(table, grids, intrinsics, codec_config):
    behind = G.Pose(P.facing_orientation(0.0), G.Vec3(0.0, 0.0, -8.0))
    with pytest.raises(C.OriginOffScreenError):
        C.encode_ground_truth(C.PosedObject(behind), grids, table, intrinsics,
                              codec_config)
    # in front but projecting far outside the frame
    off = G.Pose(P.facing_orientation(0.0), G.Vec3(30.0, 0.0, 8.0))
    with pytest.raises(C.OriginOffScreenError):
        C.encode_ground_truth(C.PosedObject(off), grids, table, intrinsics,
                              codec_config)


def test_encode_propagates_region_errors(table, grids, intrinsics, codec_config):
    too_far = G.Pose(P.facing_orientation(0.0), G.Vec3(0.0, 0.0, 200.0))
    with pytest.raises(P.DistanceOutOfRangeError):
        C.encode_ground_truth(C.PosedObject(too_far), grids, table, intrinsics,
                              codec_config)


def test_aspect_ratio_guard(table, codec_config):
    wide = G.CameraIntrinsics(1.2, 832, 416)
    with pytest.raises(C.AspectRatioMismatchError):
        codec_config.check_intrinsics(wide)
    pose = G.Pose(P.facing_orientation(0.0), G.Vec3(0.0, 0.0, 8.75))
    with pytest.raises(C.AspectRatioMismatchError):
        C.encode_ground_truth(C.PosedObject(pose), {}, table, wide, codec_config)


def test_resolution_must_match_strides(codec_config):
    odd = G.CameraIntrinsics(1.2, 420, 420)
    with pytest.raises(ValueError):
        codec_config.grids_for(odd)


def test_round_trip_randomized_per_head(table, grids, intrinsics, codec_config):
    rng = np.random.default_rng(30)
    for head in (1, 2, 3):
        for _ in range(300):
            gt, want = sample_in_coverage_gt(rng, grids, table, intrinsics,
                                             codec_config, head=head)
            enc = C.encode_ground_truth(gt, grids, table, intrinsics, codec_config)
            got = C.decode_cell(enc.target, grids[enc.head], table, codec_config)
            assert abs(got.origin_px[0] - want.origin_px[0]) < 1e-9
            assert abs(got.origin_px[1] - want.origin_px[1]) < 1e-9
            assert abs(got.distance - want.distance) < 1e-9
            assert G.geodesic_distance(
                G.euler_to_matrix(got.orientation),
                G.euler_to_matrix(want.orientation)) < 1e-9


def test_encode_after_decode_recovers_raw_values(table, grids, intrinsics, codec_config):
    # cell-canonical origin offsets (|t| < ln 3) make encode the exact inverse
    rng = np.random.default_rng(31)
    lim = math.log(3.0) - 1e-6
    for _ in range(200):
        head = int(rng.integers(1, 4))
        grid = grids[head]
        p = C.CellPrediction(
            cell=(int(rng.integers(1, grid.cols - 1)), int(rng.integers(1, grid.rows - 1))),
            prior_id=(head - 1) * 6 + int(rng.integers(0, 6)) + 1,
            t_x=float(rng.uniform(-lim, lim)), t_y=float(rng.uniform(-lim, lim)),
            t_r=float(rng.uniform(-3, 3)), t_yaw=float(rng.uniform(-1, 1)),
            t_pitch=float(rng.uniform(-1, 1)), t_roll=float(rng.uniform(0.2, 1.5)))
        d = C.decode_cell(p, grid, table, codec_config)
        pose = G.Pose(d.orientation, G.backproject(intrinsics, d.origin_px, d.distance))
        try:
            enc = C.encode_ground_truth(C.PosedObject(pose), grids, table, intrinsics,
                                        codec_config)
        except (P.NegativePitchError, P.DistanceOutOfRangeError,
                C.OrientationOutOfRangeError):
            continue
        if enc.prior_id != p.prior_id:
            continue  # view azimuth may legitimately cross a band boundary
        assert enc.cell == p.cell
        for name in ("t_x", "t_y", "t_r", "t_yaw", "t_pitch", "t_roll"):
            assert getattr(enc.target, name) == pytest.approx(getattr(p, name), abs=1e-9)


def test_decode_legacy_box():
    l = C.LegacyBoxParams(t_w=0.0, t_h=0.0, p_w=40.0, p_h=30.0)
    assert C.decode_legacy_box(l) == pytest.approx((40.0, 30.0))
    doubled = C.LegacyBoxParams(t_w=math.log(2.0), t_h=0.0, p_w=40.0, p_h=30.0)
    assert C.decode_legacy_box(doubled)[0] == pytest.approx(80.0)


def test_legacy_box_round_trip():
    rng = np.random.default_rng(32)
    for _ in range(200):
        p_w, p_h = rng.uniform(5, 300, 2)
        t_w, t_h = rng.uniform(-3, 3, 2)
        w, h = C.decode_legacy_box(C.LegacyBoxParams(t_w, t_h, p_w, p_h))
        t_w2, t_h2 = C.encode_legacy_box(w, h, p_w, p_h)
        assert t_w2 == pytest.approx(t_w, abs=1e-12)
        assert t_h2 == pytest.approx(t_h, abs=1e-12)


def test_legacy_box_rejects_non_positive_priors():
    with pytest.raises(ValueError):
        C.LegacyBoxParams(0.0, 0.0, 0.0, 10.0)


def _centered_detection(intrinsics, distance, orientation=None):
    return C.DecodedDetection(
        origin_px=intrinsics.center,
        distance=distance,
        orientation=orientation or G.matrix_to_euler(np.array(
            [[-1.0, 0, 0], [0, 0, -1.0], [0, -1.0, 0]])),
        objectness=1.0,
    )


def test_reproject_bbox_symmetric_for_centered_cube(intrinsics):
    # origin-centered unit cube so both axes are symmetric about the center
    half = 0.5
    hull = np.array([[sx * half, sy * half, sz * half]
                     for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    box = C.reproject_bbox(_centered_detection(intrinsics, 10.0), hull, intrinsics)
    cx, cy = intrinsics.center
    assert box.min_u + box.max_u == pytest.approx(2 * cx, abs=1e-9)
    assert box.min_v + box.max_v == pytest.approx(2 * cy, abs=1e-9)


def test_reproject_bbox_encloses_dense_surface_samples(table, grids, intrinsics,
                                                       codec_config):
    # oracle: a dense per-face grid (corners included) of cuboid surface
    # points; their projections must fall inside the box, and the box must
    # not over-cover the sampled extents by more than 1% in area
    rng = np.random.default_rng(33)
    spec = G.CuboidSpec(3.0, 1.6, 1.4)
    hull = G.object_corner_points(spec)
    surface = _cuboid_surface_grid(spec, per_face=17)
    for _ in range(50):
        gt, det = sample_in_coverage_gt(rng, grids, table, intrinsics, codec_config,
                                        min_distance=4.0)
        box = C.reproject_bbox(det, hull, intrinsics)
        R = G.euler_to_matrix(det.orientation)
        t = G.backproject(intrinsics, det.origin_px, det.distance).as_array()
        pts = surface @ R.T + t
        us = intrinsics.center[0] + intrinsics.focal_px * pts[:, 0] / pts[:, 2]
        vs = intrinsics.center[1] + intrinsics.focal_px * pts[:, 1] / pts[:, 2]
        assert us.min() >= box.min_u - 1e-9 and us.max() <= box.max_u + 1e-9
        assert vs.min() >= box.min_v - 1e-9 and vs.max() <= box.max_v + 1e-9
        sampled_area = (us.max() - us.min()) * (vs.max() - vs.min())
        assert box.area <= sampled_area * 1.01


def _cuboid_surface_grid(spec, per_face=17):
    hw, hl, h = spec.width / 2, spec.length / 2, spec.height
    lin = np.linspace(0.0, 1.0, per_face)
    u, v = np.meshgrid(lin, lin)
    u, v = u.ravel(), v.ravel()
    faces = []
    xs = -hw + 2 * hw * u
    ys = -hl + 2 * hl * v
    zs = h * v
    faces.append(np.column_stack([xs, ys, np.zeros_like(u)]))          # bottom
    faces.append(np.column_stack([xs, ys, np.full_like(u, h)]))        # top
    faces.append(np.column_stack([xs, np.full_like(u, -hl), zs]))      # back face
    faces.append(np.column_stack([xs, np.full_like(u, hl), zs]))       # front face
    faces.append(np.column_stack([np.full_like(u, -hw), ys, zs]))      # left
    faces.append(np.column_stack([np.full_like(u, hw), ys, zs]))       # right
    return np.vstack(faces)


def test_reproject_bbox_shrinks_with_distance(intrinsics):
    # object depth small relative to distance keeps the scaling near-pinhole
    hull = G.object_corner_points(G.CuboidSpec(1.0, 1.0, 1.0))
    near = C.reproject_bbox(_centered_detection(intrinsics, 10.0), hull, intrinsics)
    far = C.reproject_bbox(_centered_detection(intrinsics, 20.0), hull, intrinsics)
    ratio = (near.max_u - near.min_u) / (far.max_u - far.min_u)
    assert 1.9 < ratio < 2.1


def test_reproject_bbox_hull_behind_camera(intrinsics):
    hull = G.object_corner_points(G.CuboidSpec(4.0, 4.0, 4.0))
    with pytest.raises(C.HullBehindCameraError):
        C.reproject_bbox(_centered_detection(intrinsics, 0.5), hull, intrinsics)


def test_iou_cases():
    a = C.Bbox2D(0, 0, 1, 1)
    assert C.iou(a, a) == pytest.approx(1.0)
    assert C.iou(a, C.Bbox2D(5, 5, 6, 6)) == 0.0
    # unit squares overlapping by half: 0.5 / (1 + 1 - 0.5)
    b = C.Bbox2D(0.5, 0.0, 1.5, 1.0)
    assert C.iou(a, b) == pytest.approx(1.0 / 3.0)


def test_iou_symmetric_and_bounded():
    rng = np.random.default_rng(34)
    for _ in range(200):
        x = rng.uniform(0, 100, 4)
        y = rng.uniform(0, 100, 4)
        a = C.Bbox2D(min(x[0], x[1]), min(x[2], x[3]), max(x[0], x[1]), max(x[2], x[3]))
        b = C.Bbox2D(min(y[0], y[1]), min(y[2], y[3]), max(y[0], y[1]), max(y[2], y[3]))
        ab, ba = C.iou(a, b), C.iou(b, a)
        assert ab == ba
        assert 0.0 <= ab <= 1.0


def test_bbox_validates_ordering():
    with pytest.raises(ValueError):
        C.Bbox2D(2, 0, 1, 1)


def test_prediction_tensor_flat_layout_round_trip(codec_config, intrinsics):
    tensors = C.PredictionTensors(codec_config, intrinsics)
    rng = np.random.default_rng(35)
    for arr in tensors.heads.values():
        arr[:] = rng.normal(size=arr.shape)
    flat = tensors.to_flat()
    assert flat.size == sum(a.size for a in tensors.heads.values())
    other = C.PredictionTensors(codec_config, intrinsics)
    other.load_flat(flat)
    for h in (1, 2, 3):
        np.testing.assert_array_equal(other.heads[h], tensors.heads[h])
    with pytest.raises(ValueError):
        other.load_flat(flat[:-1])


def test_tensor_write_target_and_decode(table, grids, intrinsics, codec_config):
    rng = np.random.default_rng(36)
    gt, want = sample_in_coverage_gt(rng, grids, table, intrinsics, codec_config)
    enc = C.encode_ground_truth(gt, grids, table, intrinsics, codec_config)
    tensors = C.PredictionTensors(codec_config, intrinsics)
    for arr in tensors.heads.values():
        arr[..., C.CH_TOBJ] = -50.0
    tensors.write_target(enc, objectness_logit=50.0, class_logits=[50.0])
    dets = C.decode_tensors(tensors, table, objectness_threshold=0.9)
    assert len(dets) == 1
    assert dets[0].origin_px == pytest.approx(want.origin_px, abs=1e-9)
    assert dets[0].confidence > 0.99
    p = tensors.cell_prediction(enc.head, enc.cell[0], enc.cell[1], enc.anchor_index)
    assert p.prior_id == enc.prior_id
    assert p.t_r == pytest.approx(enc.target.t_r)


def test_suppress_overlaps_drops_duplicates(table, grids, intrinsics, codec_config):
    hull = G.object_corner_points(G.CuboidSpec(3.0, 1.6, 1.4))
    det = _centered_detection(intrinsics, 12.0)
    near_dup = C.DecodedDetection(
        origin_px=(det.origin_px[0] + 2.0, det.origin_px[1]),
        distance=12.1, orientation=det.orientation, objectness=0.8, confidence=0.8)
    kept = C.suppress_overlaps([det, near_dup], hull, intrinsics, iou_threshold=0.45)
    assert len(kept) == 1
    far_apart = C.DecodedDetection(
        origin_px=(50.0, 50.0), distance=12.0, orientation=det.orientation,
        objectness=0.8, confidence=0.8)
    kept = C.suppress_overlaps([det, far_apart], hull, intrinsics)
    assert len(kept) == 2


def test_decoded_values_respect_prior_envelope(table, grids, codec_config):
    # distance stays strictly inside the radial band; orientation stays
    # within the summed offset halfwidths of the anchor
    rng = np.random.default_rng(37)
    for _ in range(300):
        head = int(rng.integers(1, 4))
        grid = grids[head]
        pid = (head - 1) * 6 + int(rng.integers(0, 6)) + 1
        p = C.CellPrediction(
            cell=(int(rng.integers(0, grid.cols)), int(rng.integers(0, grid.rows))),
            prior_id=pid,
            t_x=float(rng.uniform(-30, 30)), t_y=float(rng.uniform(-30, 30)),
            t_r=float(rng.uniform(-30, 30)), t_yaw=float(rng.uniform(-30, 30)),
            t_pitch=float(rng.uniform(-30, 30)), t_roll=float(rng.uniform(-30, 30)))
        d = C.decode_cell(p, grid, table, codec_config)
        prior = table.by_id(pid)
        assert prior.bounds.r_min < d.distance < prior.bounds.r_max
        envelope = (prior.bounds.theta_halfwidth + codec_config.pitch_halfwidth
                    + codec_config.roll_halfwidth)
        gap = G.geodesic_distance(G.euler_to_matrix(d.orientation),
                                  G.euler_to_matrix(prior.anchor_orientation))
        assert gap <= envelope + 1e-9
        # origin never strays further than half a cell outside its cell
        assert (p.cell[0] - 0.5) * grid.stride_px <= d.origin_px[0]
        assert d.origin_px[0] <= (p.cell[0] + 1.5) * grid.stride_px


def test_prediction_tensor_copy_is_independent(codec_config, intrinsics):
    tensors = C.PredictionTensors(codec_config, intrinsics)
    tensors.heads[1][0, 0, 0, 0] = 5.0
    dup = tensors.copy()
    dup.heads[1][0, 0, 0, 0] = -1.0
    assert tensors.heads[1][0, 0, 0, 0] == 5.0
    assert dup.resolution == tensors.resolution
