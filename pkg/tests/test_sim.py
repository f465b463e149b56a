import math

import numpy as np
import pytest

from surroundcal import io
from surroundcal.camera import board_points, project, unproject
from surroundcal.geometry import Plane, Pose, apply, compose, inverse
from surroundcal.sim import (
    CapturePlan,
    NoiseModel,
    board_pose_facing,
    default_rig,
    export_scenario,
    simulate_captures,
    simulate_lidar_board,
    visible_projection,
)


def _half_fov_deg(intr):
    ray = unproject(intr, [0.0, intr.cy])
    return math.degrees(math.atan2(abs(ray[0]), ray[2]))


def test_default_rig_layout(rig):
    assert len(rig.camera_ids) == 8 and len(rig.lidar_poses) == 6
    front = rig.camera_poses["cam0"].R[:, 2]
    assert math.isclose(math.atan2(front[1], front[0]), 0.0, abs_tol=1e-12)
    yaws = [math.degrees(math.atan2(rig.camera_poses[c].R[1, 2], rig.camera_poses[c].R[0, 2])) for c in rig.camera_ids]
    assert np.allclose(np.diff(np.unwrap(np.radians(yaws))), math.radians(45.0))
    for c in rig.camera_ids:
        assert (rig.intrinsics[c].width, rig.intrinsics[c].height) == (1600, 1200)
    side = {"cam2", "cam6"}
    assert min(_half_fov_deg(rig.intrinsics[c]) for c in side) > max(_half_fov_deg(rig.intrinsics[c]) for c in set(rig.camera_ids) - side)
    assert sum(p.t[0] > 0 for p in rig.lidar_poses.values()) == 3  # three front, three rear


def test_default_rig_is_deterministic():
    a, b = default_rig(), default_rig()
    for c in a.camera_ids:
        assert np.array_equal(a.camera_poses[c].homogeneous(), b.camera_poses[c].homogeneous())
        assert a.intrinsics[c] == b.intrinsics[c]


def test_adjacent_cameras_share_a_board_placement(rig, spec):
    obj = board_points(spec)
    ids = rig.camera_ids
    for i, a in enumerate(ids):
        b = ids[(i + 1) % len(ids)]
        za, zb = rig.camera_poses[a].R[:, 2], rig.camera_poses[b].R[:, 2]
        bis = (za + zb) * [1, 1, 0]
        bis /= np.linalg.norm(bis)
        mid = (rig.camera_poses[a].t + rig.camera_poses[b].t) / 2
        found = False
        for r in np.arange(1.5, 8.0, 0.25):
            bp = board_pose_facing(mid + r * bis, bis, spec)
            pts = apply(bp, obj)
            seen = [visible_projection(rig.intrinsics[c], apply(inverse(rig.camera_poses[c]), pts)) is not None for c in (a, b)]
            if all(seen):
                found = True
                break
        assert found, (a, b)


def test_every_plan_entry_is_seen(clean_captures, plan):
    seen = {v.capture_index for v in clean_captures.views}
    assert seen == set(range(len(plan)))


def test_noiseless_views_reproject_exactly(clean_captures, rig, spec):
    obj = board_points(spec)
    worst = 0.0
    for v in clean_captures.views:
        T = compose(inverse(rig.camera_poses[v.camera_id]), clean_captures.board_poses[v.capture_index])
        uv = project(rig.intrinsics[v.camera_id], apply(T, obj[v.corner_ids]))
        worst = max(worst, float(np.max(np.abs(uv - v.pixels))))
    assert worst < 1e-9


def test_board_behind_every_camera_gives_no_views(rig, spec):
    inside = board_pose_facing([0.65, 0.0, 1.3], [1.0, 0.0, 0.0], spec)
    caps = simulate_captures(rig, CapturePlan((inside,)), spec)
    assert caps.views == []


def test_pixel_noise_statistics(rig, plan, spec):
    clean = simulate_captures(rig, plan, spec, NoiseModel(seed=9))
    noisy = simulate_captures(rig, plan, spec, NoiseModel(pixel_sigma=0.5, seed=9))
    d = np.concatenate([(n.pixels - c.pixels).ravel() for n, c in zip(noisy.views, clean.views)])
    assert d.size >= 10_000
    assert 0.45 <= np.std(d) <= 0.55


def test_dropout_rate(rig, plan, spec):
    full = simulate_captures(rig, plan, spec)
    some = simulate_captures(rig, plan, spec, NoiseModel(dropout_rate=0.3, seed=2))
    kept = sum(len(v.corner_ids) for v in some.views) / sum(len(v.corner_ids) for v in full.views)
    assert 0.65 < kept < 0.75


def test_simulation_is_deterministic(rig, plan, spec):
    a = simulate_captures(rig, plan, spec, NoiseModel(pixel_sigma=0.5, dropout_rate=0.1, seed=5))
    b = simulate_captures(rig, plan, spec, NoiseModel(pixel_sigma=0.5, dropout_rate=0.1, seed=5))
    assert len(a.views) == len(b.views)
    assert all(np.array_equal(x.pixels, y.pixels) and np.array_equal(x.corner_ids, y.corner_ids) for x, y in zip(a.views, b.views))


def _facing_lidar(rig, spec, distance, lid="lidar0"):
    L = rig.lidar_poses[lid]
    forward = L.R[:, 0]
    return board_pose_facing(L.t + distance * forward, forward, spec)


def test_board_at_5m_crosses_four_layers(rig, spec):
    scan = simulate_lidar_board(rig, _facing_lidar(rig, spec, 5.0), NoiseModel(), spec)["lidar0"]
    assert sorted(set(scan.layers.tolist())) == [0, 1, 2, 3]
    # four separate rows: height bands of consecutive layers do not overlap
    bands = [scan.points[scan.layers == li, 2] for li in range(4)]
    assert all(bands[i].max() < bands[i + 1].min() for i in range(3))


def test_noiseless_returns_lie_on_board(rig, spec):
    bp = _facing_lidar(rig, spec, 5.0)
    plane = Plane(bp.R[:, 2], -bp.R[:, 2] @ bp.t)
    for scan in simulate_lidar_board(rig, bp, NoiseModel(), spec).values():
        if len(scan.points):
            assert np.max(np.abs(plane.signed_distance(scan.points))) < 1e-12


def test_board_beyond_range_is_empty(rig, spec):
    scans = simulate_lidar_board(rig, _facing_lidar(rig, spec, 201.0), NoiseModel(), spec)
    assert all(len(s.points) == 0 for s in scans.values())


def test_lidar_range_noise(rig, spec):
    bp = _facing_lidar(rig, spec, 5.0)
    plane = Plane(bp.R[:, 2], -bp.R[:, 2] @ bp.t)
    rng = np.random.default_rng(0)
    d = np.concatenate([plane.signed_distance(simulate_lidar_board(rig, bp, NoiseModel(lidar_sigma=0.01), spec, rng)["lidar0"].points) for _ in range(50)])
    assert 0.009 < np.std(d) < 0.011


@pytest.fixture(scope="module")
def exported(tmp_path_factory, rig, plan, spec):
    noise = NoiseModel(pixel_sigma=0.5, lidar_sigma=0.01, seed=3)
    a = tmp_path_factory.mktemp("a")
    b = tmp_path_factory.mktemp("b")
    export_scenario(rig, plan, spec, noise, a)
    export_scenario(rig, plan, spec, noise, b)
    return a, b, simulate_captures(rig, plan, spec, noise)


def test_export_is_bit_identical(exported):
    a, b, _ = exported
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_export_round_trips_observations(exported, spec):
    a, _, caps = exported
    cf = io.read_corners(a / "corners.csv")
    assert cf.spec == spec and cf.image_size == (1600, 1200)
    key = lambda v: (v.capture_index, v.camera_id)
    got, want = sorted(cf.views, key=key), sorted(caps.views, key=key)
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert key(g) == key(w) and np.array_equal(g.corner_ids, w.corner_ids) and np.array_equal(g.pixels, w.pixels)


def test_exported_stream_rates(exported):
    logs = io.read_streams(exported[0] / "streams.csv")
    kinds = {log.stream_id: log.sensor_kind for log in logs}
    assert sum(k == "camera" for k in kinds.values()) == 8 and sum(k == "lidar" for k in kinds.values()) == 6
    for log in logs:
        assert np.all(np.diff(log.timestamps) > 0)
        n = int(np.sum(log.timestamps < 10_000_000))
        assert abs(n - (300 if log.sensor_kind == "camera" else 125)) <= 1, (log.stream_id, n)


def test_exported_clouds_reference_existing_files(exported):
    a = exported[0]
    logs = io.read_streams(a / "streams.csv")
    payloads = [p for log in logs if log.sensor_kind == "lidar" for p in log.payloads if p != "-"]
    assert payloads
    for p in payloads[:20]:
        cloud = io.read_cloud(a / p)
        assert len(cloud.points) and cloud.layers is not None
