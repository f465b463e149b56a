"""Acceptance criteria 1-9, one PASS/FAIL line each."""
import math
import time

import numpy as np
import pytest

from helpers import verdict
from surroundcal.camera import CameraIntrinsics, ViewObservation, board_points, calibrate_intrinsics, project, project_jacobians
from surroundcal.document import CalibrationDocument
from surroundcal.errors import DegenerateDirections, DisconnectedGraph, RankDeficientNormals
from surroundcal.extrinsic import baseline_report, build_pose_graph, bundle_adjust, spanning_tree_init
from surroundcal.geometry import Pose, Rotation, apply, compose, inverse, pose_exp, random_rotation
from surroundcal.lidar import calibrate_lidar_camera, plane_pair
from surroundcal.report import compare_to_truth, truth_checks
from surroundcal.sim import (
    NoiseModel,
    lidar_target_plan,
    merged_scan,
    simulate_captures,
    simulate_lidar_board,
)
from surroundcal.sync import ingest, nearest, uniform_grid

SEEDS = range(20)


def _rig_errors(state, rig):
    ids = rig.camera_ids
    dc = max(np.linalg.norm(state.rig.poses[c].t - rig.camera_in_reference(c).t) for c in ids)
    dr = max(state.rig.poses[c].rotation.angle_to(rig.camera_in_reference(c).rotation) for c in ids)
    return dc, dr


def _target_indices(plan, spec):
    targets = [bp.t for bp in lidar_target_plan(spec)]
    return [i for i, bp in enumerate(plan.board_poses) if any(np.array_equal(bp.t, t) for t in targets)]


def test_c1_noiseless_rig_recovery(rig, plan, spec, clean_captures):
    t0 = time.perf_counter()
    intr = {c: calibrate_intrinsics(clean_captures.views_for(c), spec).intrinsics for c in rig.camera_ids}
    graph = build_pose_graph(clean_captures.views, intr, spec)
    state = bundle_adjust(spanning_tree_init(graph, intr, spec), graph, spec)
    elapsed = time.perf_counter() - t0
    dc, dr = _rig_errors(state, rig)
    ok = dc < 1e-6 and dr < 1e-6 and elapsed < 60
    verdict(1, ok, f"centers {dc:.2e} m, rotations {dr:.2e} rad, {elapsed:.1f} s (limits 1e-6, 1e-6, 60 s)")
    assert ok


@pytest.fixture(scope="module")
def noisy_seeds(rig, plan, spec):
    """Criteria 2-4 over 20 seeds: 0.5 px corners, 1 cm LIDAR, simulator intrinsics."""
    truth_ref = rig.reference_to_vehicle()
    ids = rig.camera_ids
    true_centers = np.array([rig.camera_in_reference(c).t for c in ids])
    true_base = np.linalg.norm(true_centers[:, None] - true_centers[None], axis=2)
    targets = _target_indices(plan, spec)
    rows = []
    for seed in SEEDS:
        caps = simulate_captures(rig, plan, spec, NoiseModel(pixel_sigma=0.5, seed=seed))
        graph = build_pose_graph(caps.views, rig.intrinsics, spec)
        state = bundle_adjust(spanning_tree_init(graph, rig.intrinsics, spec), graph, spec)
        dc, dr = _rig_errors(state, rig)
        got_ids, base = baseline_report(state.rig)
        assert got_ids == ids
        lidar_rng = np.random.default_rng([seed, 2])
        pairs = []
        for k in targets:
            scan = merged_scan(simulate_lidar_board(rig, plan.board_poses[k], NoiseModel(lidar_sigma=0.01), spec, lidar_rng))
            pairs.append(plane_pair(k, state.board_poses[k], scan.points, spec))
        ext = calibrate_lidar_camera(pairs)
        rows.append(
            dict(
                center=dc,
                rot_deg=math.degrees(dr),
                rms=state.rms(graph, spec),
                baseline=float(np.max(np.abs(base - true_base))),
                lidar_t=float(np.linalg.norm(ext.pose.t - truth_ref.t)),
                lidar_r=math.degrees(ext.pose.rotation.angle_to(truth_ref.rotation)),
            )
        )
    return rows


def test_c2_noisy_rig_robustness(noisy_seeds):
    worst = {k: max(r[k] for r in noisy_seeds) for k in ("center", "rot_deg", "rms")}
    good = sum(r["center"] < 5e-3 and r["rot_deg"] < 0.1 and r["rms"] <= 0.7 for r in noisy_seeds)
    ok = good == len(noisy_seeds)
    verdict(2, ok, f"{good}/{len(noisy_seeds)} seeds; worst center {worst['center'] * 1e3:.2f} mm, rotation {worst['rot_deg']:.4f} deg, rms {worst['rms']:.3f} px")
    assert ok


def test_c3_baselines(noisy_seeds):
    worst = max(r["baseline"] for r in noisy_seeds)
    ok = worst < 0.01
    verdict(3, ok, f"worst pairwise baseline error {worst * 1e3:.2f} mm over {len(noisy_seeds)} seeds (limit 10 mm)")
    assert ok


def test_c4_lidar_camera(rig, plan, spec, noisy_seeds):
    truth_ref = rig.reference_to_vehicle()
    to_ref = inverse(truth_ref)
    pairs = []
    for k in _target_indices(plan, spec):
        scan = merged_scan(simulate_lidar_board(rig, plan.board_poses[k], NoiseModel(), spec))
        pairs.append(plane_pair(k, compose(to_ref, plan.board_poses[k]), scan.points, spec))
    normals = np.array([p.camera_plane.normal for p in pairs[:3]])
    assert np.linalg.matrix_rank(normals) == 3
    exact = []
    for subset in (pairs[:3], pairs):
        ext = calibrate_lidar_camera(subset)
        exact.append(max(np.linalg.norm(ext.pose.t - truth_ref.t), ext.pose.rotation.angle_to(truth_ref.rotation)))
    good = sum(r["lidar_t"] < 0.02 and r["lidar_r"] < 0.5 for r in noisy_seeds)
    worst_t = max(r["lidar_t"] for r in noisy_seeds)
    worst_r = max(r["lidar_r"] for r in noisy_seeds)
    ok = max(exact) < 1e-8 and good == len(noisy_seeds)
    verdict(4, ok, f"noiseless {max(exact):.1e} (3 and {len(pairs)} boards); noisy {good}/{len(noisy_seeds)} seeds, worst {worst_t * 100:.2f} cm, {worst_r:.3f} deg")
    assert ok


def _central(f, x, h):
    cols = []
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def test_c5_projection_jacobians():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(500):
        v = np.array([rng.uniform(0, 2.0), *rng.uniform(400, 1600, 2), *rng.uniform(500, 900, 2), *rng.normal(scale=[0.1, 0.02, 1e-3, 1e-3])])
        P = rng.normal(size=3) * [0.6, 0.6, 0.3] + [0, 0, 2.0]
        _, Jp, Ji, Jx = project_jacobians(v, P)
        fds = (
            (Jp, _central(lambda q: project(v, q), P, 1e-6)),
            (Ji, _central(lambda w: project(w, P), v, 1e-6)),
            (Jx, _central(lambda d: project(v, apply(pose_exp(d), P)), np.zeros(6), 1e-6)),
        )
        for J, fd in fds:
            # relative to the entry, with unit floor for entries near zero
            worst = max(worst, float(np.max(np.abs(J - fd) / np.maximum(np.abs(J), 1.0))))
    ok = worst < 1e-5
    verdict(5, ok, f"max relative error {worst:.2e} over 500 configurations (limit 1e-5)")
    assert ok


def _parallel_lidar_instance(rng, spec):
    """Boards that all share one normal; n in 3..10."""
    truth = Pose(random_rotation(rng), rng.normal(scale=0.5, size=3))
    R = random_rotation(rng).matrix
    if R[2, 2] > 0:  # board normal points back at the camera
        R = R @ np.diag([1.0, -1.0, -1.0])
    pairs = []
    for k in range(rng.integers(3, 11)):
        t = R @ np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0]) + [0.0, 0.0, 4.0 + 0.3 * k]
        bp = Pose.from_matrix(R, t)
        local = np.column_stack([rng.uniform(0, spec.extent[0], 40), rng.uniform(0, spec.extent[1], 40), np.zeros(40)])
        pairs.append(plane_pair(k, bp, apply(truth, apply(bp, local)), spec))
    return pairs


def _disconnected_instance(rng, spec):
    K = CameraIntrinsics(0.0, 800.0, 800.0, 800.0, 600.0)
    n = int(rng.integers(3, 8))
    cams = [f"c{i}" for i in range(n)]
    split = int(rng.integers(1, n))
    groups = [cams[:split], cams[split:]]
    obj = board_points(spec)
    views, k = [], 0
    for group in groups:
        for _ in range(int(rng.integers(1, 4))):
            board = Pose(Rotation.from_rotvec(rng.normal(scale=0.15, size=3)), [-0.25, -0.2, rng.uniform(1.8, 3.0)])
            for c in group:
                cam = Pose(Rotation.from_rotvec(rng.normal(scale=0.05, size=3)), rng.normal(scale=0.1, size=3))
                views.append(ViewObservation(c, k, np.arange(len(obj)), project(K, apply(compose(inverse(cam), board), obj))))
            k += 1
    return views, {c: K for c in cams}, groups


def test_c6_degeneracies_raise(spec):
    rng = np.random.default_rng(6)
    lidar_hits = 0
    for _ in range(50):
        try:
            calibrate_lidar_camera(_parallel_lidar_instance(rng, spec))
        except (DegenerateDirections, RankDeficientNormals):
            lidar_hits += 1
    graph_hits = 0
    for _ in range(50):
        views, intr, groups = _disconnected_instance(rng, spec)
        try:
            build_pose_graph(views, intr, spec)
        except DisconnectedGraph as exc:
            graph_hits += sorted(map(tuple, groups)) == sorted(exc.components)
    ok = lidar_hits == 50 and graph_hits == 50
    verdict(6, ok, f"parallel normals {lidar_hits}/50 raised, disconnected graphs {graph_hits}/50 raised with the right components")
    assert ok


def test_c7_sync(tmp_path):
    rng = np.random.default_rng(7)
    agree = total = 0
    for _ in range(10):
        ts = np.unique(rng.integers(0, 10**7, size=int(rng.integers(1, 2000))))
        log = ingest("s", "lidar", [(int(t), "-") for t in ts])
        q = rng.integers(-10**5, 10**7 + 10**5, size=10**4)
        oracle = np.argmin(np.abs(ts[None, :] - q[:, None]), axis=1)  # linear scan; first minimum wins ties
        got = np.array([nearest(log, int(x))[0].timestamp_us for x in q])
        agree += int(np.sum(got == ts[oracle]))
        total += len(q)
    worst = 0
    for phase in rng.integers(0, 80_000, size=20):
        cam = uniform_grid(0, 10_000_000, 30.0)
        lidar = ingest("l", "lidar", [(int(t), "-") for t in uniform_grid(int(phase), 10_000_000 + 80_000, 12.5)])
        worst = max(worst, max(abs(nearest(lidar, int(t))[1]) for t in cam if t >= lidar.timestamps[0]))
    ok = agree == total and worst <= 40_000
    verdict(7, ok, f"{agree}/{total} queries match the scan; worst camera/LIDAR gap {worst / 1000:.1f} ms (limit 40 ms)")
    assert ok


def test_c8_pipeline_bit_reproducible(pipeline_runs):
    a, b = pipeline_runs
    mismatched, n = [], 0
    for sub in ("scenario", "cal"):
        fa = sorted(p.relative_to(a[sub]) for p in a[sub].rglob("*") if p.is_file())
        fb = sorted(p.relative_to(b[sub]) for p in b[sub].rglob("*") if p.is_file())
        assert fa == fb
        n += len(fa)
        mismatched += [f for f in fa if (a[sub] / f).read_bytes() != (b[sub] / f).read_bytes()]
    # stdout echoes the output paths, which differ only by the run root
    same_stdout = [o.replace(str(a["root"]), "<root>") for o in a["stdout"]] == [o.replace(str(b["root"]), "<root>") for o in b["stdout"]]
    ok = not mismatched and same_stdout
    verdict(8, ok, f"{n - len(mismatched)}/{n} files byte-identical across two seeded runs")
    assert ok, mismatched


def _pinhole_reference(P, fx, fy, cx, cy, k1, k2, p1, p2):
    x, y = P[:, 0] / P[:, 2], P[:, 1] / P[:, 2]
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.column_stack([fx * xd + cx, fy * yd + cy])


def test_c9_xi_zero_is_pinhole():
    rng = np.random.default_rng(9)
    P = np.column_stack([rng.uniform(-1, 1, 10**4), rng.uniform(-1, 1, 10**4), rng.uniform(0.5, 5, 10**4)])
    k = (900.0, 905.0, 790.0, 610.0, -0.25, 0.07, 1e-3, -5e-4)
    got = project(CameraIntrinsics(0.0, *k), P)
    ref = _pinhole_reference(P, *k)
    err = float(np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)))
    ok = err <= 1e-12
    verdict(9, ok, f"max relative deviation {err:.1e} on 1e4 points (limit 1e-12)")
    assert ok


def test_c9_matches_opencv():
    cv2 = pytest.importorskip("cv2")
    rng = np.random.default_rng(19)
    P = np.column_stack([rng.uniform(-1, 1, 10**4), rng.uniform(-1, 1, 10**4), rng.uniform(0.5, 5, 10**4)])
    fx, fy, cx, cy, k1, k2, p1, p2 = 900.0, 905.0, 790.0, 610.0, -0.25, 0.07, 1e-3, -5e-4
    A = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
    ref, _ = cv2.projectPoints(P.reshape(-1, 1, 3), np.zeros(3), np.zeros(3), A, np.array([k1, k2, p1, p2]))
    got = project(CameraIntrinsics(0.0, fx, fy, cx, cy, k1, k2, p1, p2), P)
    err = float(np.max(np.abs(got - ref[:, 0]) / np.maximum(np.abs(ref[:, 0]), 1.0)))
    assert err <= 1e-12


@pytest.mark.xfail(strict=True, reason="with intrinsics estimated from 0.5 px corners, principal point and xi are too weakly observed for 5 mm / 0.1 deg")
def test_end_to_end_with_estimated_intrinsics(pipeline_runs):
    run = pipeline_runs[0]
    doc = CalibrationDocument.load(run["cal"] / "calibration.json")
    truth = CalibrationDocument.load(run["scenario"] / "truth.json")
    checks = truth_checks(compare_to_truth(doc, truth))
    ok = all(c[1] for c in checks)
    verdict("2+4 end to end", ok, "; ".join(f"{name} {'ok' if good else 'over'} ({detail})" for name, good, detail in checks))
    assert ok
