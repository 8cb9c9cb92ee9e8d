import math

import numpy as np
import pytest

from pointtrack import dataio as D
from pointtrack.config import TEMPLATE_MODES, NetConfig, TrainConfig
from pointtrack.pcops import SEARCH, Box3D, points_in_box, to_box_local

CAR = "0 1 Car 0 0 -1.57 0 0 10 10 1.5 1.8 4.2 1.0 1.5 10.0 0.0"


def row(frame, tid, kind="Car", x=1.0, z=10.0):
    return f"{frame} {tid} {kind} 0 0 0 0 0 10 10 1.5 1.8 4.2 {x} 1.5 {z} 0.3"


def test_parse_single_row_and_conversion():
    (tr,) = D.parse_kitti_labels(CAR)
    assert len(tr) == 1 and tr.category == "Car" and tr.track_id == 1
    box = tr.boxes[0]
    # camera (x right, y down, z forward), bottom-centre location
    np.testing.assert_allclose(box.center, [10.0, -1.0, -0.75])
    np.testing.assert_allclose(box.extents, [1.8, 4.2, 1.5])
    assert box.heading == pytest.approx(-math.pi / 2)


def test_parse_interleaved_tracks_time_ordered():
    text = "\n".join([row(2, 5), row(0, 7), row(0, 5, x=3.0), row(1, 7), row(1, 5), row(0, 9, "DontCare")])
    trs = D.parse_kitti_labels(text)
    assert [t.track_id for t in trs] == [5, 7]
    assert trs[0].frame_ids == [0, 1, 2] and trs[1].frame_ids == [0, 1]
    assert trs[0].boxes[0].center[1] == pytest.approx(-3.0)


def test_parse_empty_and_malformed():
    assert D.parse_kitti_labels("") == []
    with pytest.raises(D.ParseError, match="line 2"):
        D.parse_kitti_labels(row(0, 1) + "\n0 1 Car 0 0\n")
    with pytest.raises(D.ParseError, match="line 1"):
        D.parse_kitti_labels("0 1 Car 0 0 0 0 0 0 0 x 1 1 1 1 1 1")


def test_label_writer_round_trip():
    trs = D.generate_dataset(D.SynthSpec(num_frames=4, clutter=10), 3, seed=4)
    for i, t in enumerate(trs):
        t.track_id = i
    back = D.parse_kitti_labels(D.write_kitti_labels(trs))
    assert len(back) == 3
    for a, b in zip(trs, back):
        for p, q in zip(a.boxes, b.boxes):
            np.testing.assert_allclose(p.center, q.center, atol=1e-9)
            np.testing.assert_allclose(p.extents, q.extents, atol=1e-12)
            assert abs(math.remainder(p.heading - q.heading, 2 * math.pi)) < 1e-9


def test_velodyne_examples():
    import struct
    pc = D.load_velodyne_bin(struct.pack("<4f", 1, 2, 3, 0.5))
    assert pc.points.tolist() == [[1.0, 2.0, 3.0]]
    assert D.load_velodyne_bin(b"").points.shape == (0, 3)
    with pytest.raises(D.FormatError):
        D.load_velodyne_bin(b"\0" * 20)


def test_velodyne_round_trip():
    pts = np.random.default_rng(0).normal(size=(100, 3)).astype(np.float32).astype(float)
    assert np.array_equal(D.load_velodyne_bin(D.write_velodyne_bin(pts)).points, pts)


def test_calib_standard_axes_map_to_identity():
    text = ("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
            "R_rect 1 0 0 0 1 0 0 0 1\n"
            "Tr_velo_cam 0 -1 0 0 0 0 -1 0 1 0 0 0\n")
    np.testing.assert_allclose(D.parse_calib(text), np.eye(4), atol=1e-12)
    with pytest.raises(D.FormatError):
        D.parse_calib("P0: 1 2 3")


def test_kitti_scene_layout(tmp_path):
    (tmp_path / "label_02").mkdir()
    (tmp_path / "velodyne" / "0003").mkdir(parents=True)
    (tmp_path / "label_02" / "0003.txt").write_text(row(0, 1) + "\n" + row(1, 1) + "\n" + row(0, 2, "Tram"))
    for f in (0, 1):
        (tmp_path / "velodyne" / "0003" / f"{f:06d}.bin").write_bytes(D.write_velodyne_bin([[10, -1, 0]]))
    (tr,) = D.load_kitti(tmp_path, [3])
    assert tr.scene == "0003" and len(tr) == 2
    assert tr.cloud(1).tolist() == [[10.0, -1.0, 0.0]]


def test_split_files(tmp_path):
    D.write_split_files(tmp_path)
    assert D.read_split_file(tmp_path / "train.txt") == list(range(17))
    assert D.read_split_file(tmp_path / "val.txt") == [17, 18]
    assert D.read_split_file(tmp_path / "test.txt") == [19, 20]


def test_synthetic_without_clutter_stays_in_enlarged_box():
    tr = D.generate_synthetic_tracklet(D.SynthSpec(clutter=0), 1)
    for t, box in enumerate(tr.boxes):
        assert points_in_box(tr.cloud(t), box, 2.0).all()


def test_synthetic_exact_on_target_counts_and_gt():
    spec = D.SynthSpec(points_on_target=77, clutter=500)
    tr = D.generate_synthetic_tracklet(spec, 2)
    for t, box in enumerate(tr.boxes):
        pts = tr.cloud(t)
        assert points_in_box(pts[:77], box).all()
        assert points_in_box(pts, box).sum() == 77


def test_synthetic_deterministic():
    a = D.generate_dataset(D.SynthSpec(num_frames=3), 2, seed=9)
    b = D.generate_dataset(D.SynthSpec(num_frames=3), 2, seed=9)
    for x, y in zip(a, b):
        assert all(np.array_equal(x.cloud(t), y.cloud(t)) for t in range(3))


@pytest.fixture
def tracklet():
    return D.generate_synthetic_tracklet(D.SynthSpec(num_frames=4, clutter=400), 5)


def test_template_first_gt_frame_zero(tracklet):
    pts, ref = D.build_template(tracklet, 0, "first_gt", [tracklet.boxes[0]], 0, 512)
    assert pts.shape == (512, 3) and ref is tracklet.boxes[0]
    local = to_box_local(tracklet.cloud(0), tracklet.boxes[0])
    inside = {tuple(p) for p in local[points_in_box(tracklet.cloud(0), tracklet.boxes[0])]}
    assert {tuple(p) for p in pts} <= inside


def test_template_first_and_previous_is_union(tracklet):
    prev = list(tracklet.boxes)
    pts, _ = D.build_template(tracklet, 3, "first_and_previous", prev, 0, 1024)
    crops = [to_box_local(tracklet.cloud(t), tracklet.boxes[t])[points_in_box(tracklet.cloud(t), tracklet.boxes[t])]
             for t in (0, 2)]
    union = {tuple(p) for c in crops for p in c}
    # 1024 exceeds the 256 crop points, so every point of both crops appears
    assert {tuple(p) for p in pts} == union


def test_all_template_modes_run(tracklet):
    for mode in TEMPLATE_MODES:
        pts, _ = D.build_template(tracklet, 2, mode, list(tracklet.boxes), 1, 64)
        assert pts.shape == (64, 3)
    with pytest.raises(Exception):
        D.build_template(tracklet, 2, "bogus", list(tracklet.boxes))


def test_template_starvation(tracklet):
    far = Box3D([500, 500, 0], [1, 1, 1], 0)
    with pytest.raises(D.TemplateStarvation):
        D.build_template(tracklet, 1, "previous_result", [far], 0)


def test_search_area_contains_target_and_is_search_frame():
    tr = D.generate_synthetic_tracklet(D.SynthSpec(clutter=0, speed=(0.0, 0.0), max_turn_deg=0.0), 3)
    box = tr.boxes[1]
    pc = D.build_search_area(tr.cloud(1), box, 0, 1024)
    assert pc.frame == SEARCH and pc.points.shape == (1024, 3)
    expect = {tuple(p) for p in to_box_local(tr.cloud(1), box)}
    assert {tuple(p) for p in pc.points} == expect
    with pytest.raises(D.SearchStarvation):
        D.build_search_area(tr.cloud(1), Box3D([900, 0, 0], [1, 1, 1], 0), 0)


def test_zero_offset_sample_is_centered(tracklet):
    cfg = TrainConfig(search_offset=0.0, search_heading_offset_deg=0.0,
                      template_offset=0.0, template_heading_offset_deg=0.0)
    s = D.augment_training_sample(tracklet, 2, 0, NetConfig(), cfg)
    np.testing.assert_allclose(s.gt_box.center, 0.0, atol=1e-12)
    assert s.gt_box.heading == pytest.approx(0.0, abs=1e-12)
    assert s.template.shape == (512, 3) and s.search.shape == (1024, 3)


def test_jitter_within_bounds_and_spread():
    rng = np.random.default_rng(0)
    box = Box3D([1, 2, 3], [1, 1, 1], 0.5)
    d, h = [], []
    for _ in range(10_000):
        j = D.jitter_box(box, rng, 0.3, 5.0)
        d.append(j.center - box.center)
        h.append(math.remainder(j.heading - box.heading, 2 * math.pi))
    d, h = np.array(d), np.degrees(h)
    assert np.all(np.abs(d[:, :2]) <= 0.3) and np.all(d[:, 2] == 0)
    assert np.all(np.abs(h) <= 5.0 + 1e-9)
    # uniform on [-a, a] has standard deviation a / sqrt(3)
    assert np.std(d[:, 0]) == pytest.approx(0.3 / math.sqrt(3), rel=0.05)
    assert np.std(h) == pytest.approx(5.0 / math.sqrt(3), rel=0.05)


def test_sample_mask_matches_brute_force(tracklet):
    from pointtrack.losses import frame_targets
    s = D.augment_training_sample(tracklet, 1, 4)
    ft = frame_targets(s.search, s.gt_box)
    c, sn = math.cos(s.gt_box.heading), math.sin(s.gt_box.heading)
    for p, m in zip(s.search, ft.seed_mask):
        d = p - s.gt_box.center
        inside = (abs(d[0] * c + d[1] * sn) <= s.gt_box.length / 2
                  and abs(-d[0] * sn + d[1] * c) <= s.gt_box.width / 2
                  and abs(d[2]) <= s.gt_box.height / 2)
        assert inside == m


def test_sample_skipped_without_target_points():
    tr = D.generate_synthetic_tracklet(D.SynthSpec(num_frames=3, clutter=50), 0)
    tr.frames[2] = tr.frames[2].points[128:]  # drop the target surface
    counter = {}
    assert D.augment_training_sample(tr, 2, 0, counter=counter) is None
    assert counter == {"skipped": 1}


def test_sample_deterministic(tracklet):
    a = D.augment_training_sample(tracklet, 2, 11)
    b = D.augment_training_sample(tracklet, 2, 11)
    assert np.array_equal(a.search, b.search) and np.array_equal(a.template, b.template)
