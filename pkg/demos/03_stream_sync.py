"""Nearest-timestamp alignment of 30 Hz cameras and a 12.5 Hz LIDAR.

Run with ``python demos/03_stream_sync.py``.
"""
# %%
import numpy as np

from surroundcal.sync import align, ingest, resample_track, uniform_grid

cam = ingest("cam0", "camera", [(int(t), f"frame{i}") for i, t in enumerate(uniform_grid(0, 2_000_000, 30.0))])
lidar = ingest("lidar0", "lidar", [(int(t), f"scan{i}") for i, t in enumerate(uniform_grid(12_000, 2_100_000, 12.5))])

# %% Every camera frame gets the nearest scan; the gap never exceeds half a LIDAR period
gaps = [align([cam, lidar], int(t)).matches["lidar0"].offset_us for t in cam.timestamps]
print(f"{len(gaps)} frames, worst gap {max(map(abs, gaps)) / 1000:.1f} ms (half period 40 ms)")

# %% With a tolerance, far-off streams show up as absent instead of silently matched
b = align([cam, lidar], 1_000_000, tolerance_us=10_000)
print("present:", b.present(), "absent:", b.absent())

# %% A 5 Hz track, as used for playback overlays
track = resample_track(lidar, 5.0)
print(f"{len(track)} resampled bundles, offsets (us):", [m.matches["lidar0"].offset_us for m in track[:6]])
