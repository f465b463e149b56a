"""Calibrating one wide-angle camera from checkerboard views.

Run with ``python demos/01_wide_camera_intrinsics.py``.
"""
# %% A side camera of the simulated rig and the boards it saw
import numpy as np

from surroundcal.camera import CheckerboardSpec, calibrate_intrinsics, unproject
from surroundcal.sim import NoiseModel, default_capture_plan, default_rig, simulate_captures

spec = CheckerboardSpec()
rig = default_rig()
plan = default_capture_plan(spec, rig)
truth = rig.intrinsics["cam2"]
print("true parameters:", np.round(truth.to_vector(), 4))

caps = simulate_captures(rig, plan, spec, NoiseModel(pixel_sigma=0.5, seed=1))
views = caps.views_for("cam2")
print(f"{len(views)} views, {sum(len(v) for v in views)} corners")

# %% Calibrate
# The solver starts from a pinhole fit, scans the mirror parameter xi on a
# grid and then frees every parameter.
cal = calibrate_intrinsics(views, spec)
est = cal.intrinsics
print("estimate:       ", np.round(est.to_vector(), 4))
print(f"rms {cal.initial_rms:.2f} px -> {cal.rms:.3f} px in {cal.iterations} iterations")

# %% xi and the focal lengths trade off against each other
# Near the image centre only fx / (1 + xi) is pinned down, so the raw numbers
# can drift apart while the model still fits.
print(f"fx / (1 + xi): truth {truth.fx / (1 + truth.xi):.1f}, estimate {est.fx / (1 + est.xi):.1f}")

# %% What matters downstream is the ray for each pixel, not the raw numbers
grid = np.stack(np.meshgrid(np.linspace(50, 1550, 7), np.linspace(50, 1150, 5)), -1).reshape(-1, 2)
a = unproject(truth, grid)
b = unproject(est, grid)
cos = np.sum(a * b, axis=1) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
print(f"worst ray angle error over the image: {np.degrees(np.arccos(np.clip(cos, -1, 1))).max():.3f} deg")
