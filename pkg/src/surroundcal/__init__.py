"""Calibration of a surround-view camera rig and its LIDARs from checkerboard captures."""

from .camera import CameraIntrinsics, CheckerboardSpec, ViewObservation, calibrate_intrinsics, project, unproject
from .document import CalibrationDocument
from .errors import CalibrationError
from .extrinsic import BundleConfig, build_pose_graph, bundle_adjust, spanning_tree_init
from .geometry import Pose, Rotation
from .lidar import calibrate_lidar_camera, project_cloud
from .sim import NoiseModel, default_capture_plan, default_rig

__version__ = "0.1.0"
