"""Eight-camera rig extrinsics, baselines and the LIDAR transform.

Run with ``python demos/02_rig_and_lidar.py``.  Intrinsics are taken from
the simulator here so the extrinsic stages can be looked at on their own.
"""
# %%
import math

import numpy as np

from surroundcal.camera import CheckerboardSpec
from surroundcal.extrinsic import baseline_report, calibrate_rig
from surroundcal.lidar import calibrate_lidar_camera, plane_pair
from surroundcal.sim import NoiseModel, default_capture_plan, default_rig, lidar_target_plan, merged_scan, simulate_captures, simulate_lidar_board

spec = CheckerboardSpec()
rig = default_rig()
plan = default_capture_plan(spec, rig)
caps = simulate_captures(rig, plan, spec, NoiseModel(pixel_sigma=0.5, seed=3))

# %% Pose graph, spanning-tree start, bundle adjustment
graph, init, final = calibrate_rig(caps.views, rig.intrinsics, spec)
print(f"{len(graph.edges)} camera-board edges; rms {init.rms(graph, spec):.3f} px -> {final.rms(graph, spec):.3f} px")
for c in rig.camera_ids:
    d = np.linalg.norm(final.rig.poses[c].t - rig.camera_in_reference(c).t)
    a = math.degrees(final.rig.poses[c].rotation.angle_to(rig.camera_in_reference(c).rotation))
    print(f"  {c}: center off by {d * 1000:.2f} mm, rotation by {a:.3f} deg")

# %% Baselines, the usual sanity check against a tape measure
ids, D = baseline_report(final.rig)
print("baselines (m) from cam0:", ", ".join(f"{c} {d:.3f}" for c, d in zip(ids, D[0])))

# %% Board planes seen by both sensors give the LIDAR transform
targets = {tuple(bp.t) for bp in lidar_target_plan(spec)}
rng = np.random.default_rng(4)
pairs = []
for k, bp in enumerate(plan.board_poses):
    if tuple(bp.t) in targets:
        scan = merged_scan(simulate_lidar_board(rig, bp, NoiseModel(lidar_sigma=0.01), spec, rng))
        pairs.append(plane_pair(k, final.board_poses[k], scan.points, spec))
ext = calibrate_lidar_camera(pairs)
truth = rig.reference_to_vehicle()
print(f"{len(pairs)} plane pairs; translation off by {np.linalg.norm(ext.pose.t - truth.t) * 100:.2f} cm, "
      f"rotation by {math.degrees(ext.pose.rotation.angle_to(truth.rotation)):.3f} deg")
