import json
import math

import numpy as np
import pytest

from arenatrack import geometry as G
from arenatrack import syngen as S


def minimal_profile_doc(**overrides):
    doc = {
        "seed": 3,
        "bundles": [{"bundle_id": "cart", "class_id": 0,
                     "cuboid_m": {"length": 3.0, "width": 1.6, "height": 1.4}}],
        "domes": [{
            "dome_id": "d0", "bundle": "cart",
            "target": {"position_m": [0.0, 0.0, 0.0], "yaw_rad": 0.3},
            "orbit": {"radius_m": [8.0, 8.0], "azimuth_steps": 8,
                      "elevation_rad": [0.05, 0.25], "elevation_steps": 3},
            "camera": {"horizontal_fov_rad": 1.2, "resolution": [416, 416]},
        }],
    }
    doc.update(overrides)
    return doc


def sequence_doc(duration=10.0, rate=24.0, objects=1, cameras=None):
    if cameras is None:
        cameras = [{
            "camera_id": "cam-a",
            "intrinsics": {"horizontal_fov_rad": 1.4, "resolution": [832, 832]},
            "position_m": [0.0, -25.0, 8.0], "look_at_m": [0.0, 0.0, 0.0],
        }]
    return {
        "sequence_id": "s0", "bundle": "cart", "object_count": objects,
        "arena_m": {"x": [-5.0, 5.0], "y": [-5.0, 5.0]},
        "duration_s": duration, "rate_hz": rate,
        "motion": {"speed_mps": [0.5, 3.0], "turn_rate_rps": [0.5, 2.0]},
        "cameras": cameras,
    }


def test_minimal_profile_parses_with_defaults():
    cfg = S.load_profile(minimal_profile_doc())
    assert cfg.seed == 3
    assert cfg.output.annotations_file == "annotations.jsonl"
    assert cfg.domes[0].radius_steps == 1
    assert cfg.domes[0].fov_jitter_rad == 0.0


def test_profile_rejects_unknown_fields():
    doc = minimal_profile_doc()
    doc["domes"][0]["orbit"]["speling_mistake"] = 1
    with pytest.raises(S.ValidationError, match="speling_mistake"):
        S.load_profile(doc)
    with pytest.raises(S.ValidationError, match="extra"):
        S.load_profile(minimal_profile_doc(extra=1))


def test_profile_rejects_unknown_bundle_reference():
    doc = minimal_profile_doc()
    doc["domes"][0]["bundle"] = "ghost"
    with pytest.raises(S.ValidationError, match="ghost"):
        S.load_profile(doc)


def test_profile_rejects_bad_values():
    doc = minimal_profile_doc()
    doc["domes"][0]["orbit"]["elevation_rad"] = [-0.1, 0.2]
    with pytest.raises(S.ValidationError):
        S.load_profile(doc)

    doc = minimal_profile_doc(domes=[], sequences=[sequence_doc(duration=-1.0)])
    with pytest.raises(S.ValidationError):
        S.load_profile(doc)

    with pytest.raises(S.ValidationError):
        S.load_profile(minimal_profile_doc(domes=[], sequences=[]))


def test_profile_parse_error_on_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(S.ParseError):
        S.load_profile(p)


def test_profile_serialization_round_trip():
    doc = minimal_profile_doc(sequences=[sequence_doc()])
    cfg = S.load_profile(doc)
    assert S.load_profile(S.serialize_profile(cfg)) == cfg
    assert cfg.digest() == S.load_profile(S.serialize_profile(cfg)).digest()


def test_dome_shot_count():
    cfg = S.load_profile(minimal_profile_doc())
    dome = cfg.domes[0]
    assert dome.shot_count == 24  # 1 radius x 3 elevations x 8 azimuths
    anns = S.generate_dome(dome, cfg.bundles[0], seed=5)
    assert len(anns) == 24
    assert {a.frame_id for a in anns} == set(range(24))


def test_dome_radius_reproduced_exactly():
    cfg = S.load_profile(minimal_profile_doc())
    anns = S.generate_dome(cfg.domes[0], cfg.bundles[0], seed=5)
    for a in anns:
        assert a.spherical.r == pytest.approx(8.0, abs=1e-9)
        assert a.spherical.phi >= 0.0


def test_dome_deterministic_output():
    cfg = S.load_profile(minimal_profile_doc())
    a = S.generate_dome(cfg.domes[0], cfg.bundles[0], seed=5)
    b = S.generate_dome(cfg.domes[0], cfg.bundles[0], seed=5)
    assert [x.to_record() for x in a] == [y.to_record() for y in b]
    c = S.generate_dome(cfg.domes[0], cfg.bundles[0], seed=6)
    # different seed with jitter-free config is still identical geometry
    assert [x.to_record() for x in c] == [x.to_record() for x in a]


def test_dome_fov_jitter_stays_within_bounds():
    doc = minimal_profile_doc()
    doc["domes"][0]["camera"]["fov_jitter_rad"] = 0.02
    cfg = S.load_profile(doc)
    anns = S.generate_dome(cfg.domes[0], cfg.bundles[0], seed=5)
    fovs = {a.camera_intrinsics.horizontal_fov for a in anns}
    assert len(fovs) > 1
    assert all(abs(f - 1.2) <= 0.02 for f in fovs)


def test_sequence_frame_and_annotation_count():
    doc = minimal_profile_doc(domes=[], sequences=[sequence_doc()])
    cfg = S.load_profile(doc)
    anns = S.generate_sequence(cfg.sequences[0], cfg.bundles_by_id(), seed=7)
    # arena fully inside the camera frustum: every frame annotated
    assert len(anns) == 240
    assert {a.frame_id for a in anns} == set(range(240))
    assert anns[0].time_s == 0.0
    assert anns[-1].time_s == pytest.approx(239 / 24.0)


def test_sequence_objects_stay_in_arena():
    doc = minimal_profile_doc(domes=[], sequences=[sequence_doc(objects=3)])
    cfg = S.load_profile(doc)
    anns = S.generate_sequence(cfg.sequences[0], cfg.bundles_by_id(), seed=8)
    for a in anns:
        p = a.cuboid_world.base_center
        assert -5.0 - 1e-9 <= p.x <= 5.0 + 1e-9
        assert -5.0 - 1e-9 <= p.y <= 5.0 + 1e-9
        assert a.cuboid_world.base_center.z == pytest.approx(0.0, abs=1e-12)


def test_sequence_kinematic_bound():
    doc = minimal_profile_doc(domes=[], sequences=[sequence_doc(objects=2)])
    cfg = S.load_profile(doc)
    anns = S.generate_sequence(cfg.sequences[0], cfg.bundles_by_id(), seed=9)
    speed_max = cfg.sequences[0].motion.speed_mps[1]
    dt = 1.0 / cfg.sequences[0].rate_hz
    track: dict[int, dict[int, np.ndarray]] = {}
    for a in anns:
        track.setdefault(a.object_id, {})[a.frame_id] = a.cuboid_world.base_center.as_array()
    for frames in track.values():
        for f, p in frames.items():
            if f + 1 in frames:
                step = float(np.linalg.norm(frames[f + 1] - p))
                assert step <= speed_max * dt + 1e-9


def test_annotation_visibility_soundness():
    doc = minimal_profile_doc(domes=[], sequences=[sequence_doc(objects=2)])
    cfg = S.load_profile(doc)
    anns = S.generate_sequence(cfg.sequences[0], cfg.bundles_by_id(), seed=10)
    for a in anns:
        u, v = a.screen_origin
        assert 0.0 <= u < a.camera_intrinsics.width
        assert 0.0 <= v < a.camera_intrinsics.height
        assert a.cuboid_camera.base_center.z > 0.0
        assert a.spherical.phi >= 0.0


def test_annotation_three_cuboid_fields_mutually_consistent():
    doc = minimal_profile_doc(sequences=[sequence_doc()])
    cfg = S.load_profile(doc)
    anns = S.generate_all(cfg)
    rigs = {c.camera_id: c.rig() for c in cfg.sequences[0].cameras}
    for a in anns[:50] + anns[-50:]:
        pose_cam = a.pose_in_camera()
        # screen points regenerate from the camera-frame cuboid
        corners = G.cuboid_corners(a.cuboid_size, pose_cam)
        k = a.camera_intrinsics
        for (u, v), c in zip(a.screen_corners, corners):
            uu, vv = G.project(k, G.Vec3.from_array(c))
            assert abs(uu - u) < 1e-6 and abs(vv - v) < 1e-6
        uo, vo = G.project(k, pose_cam.translation)
        assert abs(uo - a.screen_origin[0]) < 1e-6
        assert abs(vo - a.screen_origin[1]) < 1e-6
        # world cuboid equals the camera cuboid pushed through the extrinsics
        if a.camera_id in rigs:
            rig_pose = rigs[a.camera_id].extrinsic_pose
            for name in ("base_center", "base_right", "base_front", "top_center"):
                cam_pt = getattr(a.cuboid_camera, name).as_array()
                world_pt = getattr(a.cuboid_world, name).as_array()
                np.testing.assert_allclose(
                    G.apply_pose(rig_pose, cam_pt), world_pt, atol=1e-9)


def test_annotation_record_round_trip(tmp_path):
    cfg = S.load_profile(minimal_profile_doc())
    anns = S.generate_dome(cfg.domes[0], cfg.bundles[0], seed=5)
    path = tmp_path / "ann.jsonl"
    written = S.write_annotations(anns, path)
    loaded = S.load_annotations(path)
    assert loaded == written


def test_split_dataset_proportions():
    m = S.split_dataset(list(range(100)), seed=1)
    assert (len(m.train), len(m.val), len(m.test)) == (80, 10, 10)
    m = S.split_dataset(list(range(101)), seed=1)
    assert (len(m.train), len(m.val), len(m.test)) == (81, 10, 10)
    m = S.split_dataset(list(range(10)), seed=1)
    assert (len(m.train), len(m.val), len(m.test)) == (8, 1, 1)


def test_split_dataset_disjoint_and_exhaustive():
    ids = list(range(73))
    m = S.split_dataset(ids, seed=4)
    parts = [set(m.train), set(m.val), set(m.test)]
    assert sum(len(p) for p in parts) == 73
    assert set().union(*parts) == set(ids)


def test_split_dataset_too_few():
    with pytest.raises(S.TooFewRecordsError):
        S.split_dataset(list(range(9)), seed=1)


def test_manifest_round_trip(tmp_path):
    m = S.split_dataset(list(range(50)), seed=2, config_digest="sha256:abc",
                        annotations_path="a.jsonl", rigs_path="r.json")
    path = tmp_path / "manifest.json"
    m.save(path)
    assert S.DatasetManifest.load(path) == m


def test_run_profile_writes_dataset(tmp_path):
    doc = minimal_profile_doc(sequences=[sequence_doc(duration=2.0)])
    cfg = S.load_profile(doc)
    anns, manifest = S.run_profile(cfg, tmp_path / "out")
    assert (tmp_path / "out" / "annotations.jsonl").exists()
    assert (tmp_path / "out" / "manifest.json").exists()
    assert (tmp_path / "out" / "rigs.json").exists()
    assert manifest.config_digest.startswith("sha256:")
    assert len(anns) == len(manifest.train) + len(manifest.val) + len(manifest.test)
    assert [a.record_id for a in anns] == list(range(len(anns)))


def test_run_profile_byte_identical_for_same_seed(tmp_path):
    doc = minimal_profile_doc(sequences=[sequence_doc(duration=2.0)])
    doc["domes"][0]["camera"]["fov_jitter_rad"] = 0.02
    cfg = S.load_profile(doc)
    S.run_profile(cfg, tmp_path / "one")
    S.run_profile(cfg, tmp_path / "two")
    a = (tmp_path / "one" / "annotations.jsonl").read_bytes()
    b = (tmp_path / "two" / "annotations.jsonl").read_bytes()
    assert a == b
    S.run_profile(cfg, tmp_path / "three", seed=99)
    c = (tmp_path / "three" / "annotations.jsonl").read_bytes()
    assert c != a  # jitter makes the stream seed-sensitive


def test_duplicate_camera_ids_across_sequences_rejected(tmp_path):
    seq1 = sequence_doc()
    seq2 = sequence_doc()
    seq2 = dict(seq2, sequence_id="s1")
    doc = minimal_profile_doc(domes=[], sequences=[seq1, seq2])
    cfg = S.load_profile(doc)
    with pytest.raises(S.ValidationError, match="cam-a"):
        S.run_profile(cfg, tmp_path / "dup")


def test_sequence_camera_validation():
    bad_height = sequence_doc(cameras=[{
        "camera_id": "cam-low",
        "intrinsics": {"horizontal_fov_rad": 1.4, "resolution": [832, 832]},
        "position_m": [0.0, -25.0, -1.0], "look_at_m": [0.0, 0.0, 0.0]}])
    with pytest.raises(S.ValidationError, match="height"):
        S.load_profile(minimal_profile_doc(domes=[], sequences=[bad_height]))
    degenerate = sequence_doc(cameras=[{
        "camera_id": "cam-self",
        "intrinsics": {"horizontal_fov_rad": 1.4, "resolution": [832, 832]},
        "position_m": [1.0, 2.0, 3.0], "look_at_m": [1.0, 2.0, 3.0]}])
    with pytest.raises(S.ValidationError, match="look_at"):
        S.load_profile(minimal_profile_doc(domes=[], sequences=[degenerate]))


def test_image_format_flows_into_records(tmp_path):
    doc = minimal_profile_doc(output={"image_format": "jpg"})
    cfg = S.load_profile(doc)
    anns, _ = S.run_profile(cfg, tmp_path / "fmt")
    assert all(a.image.endswith(".jpg") for a in anns)
