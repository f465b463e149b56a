import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import WIDE
from surroundcal import io
from surroundcal.camera import CheckerboardSpec, ViewObservation
from surroundcal.document import CalibrationDocument, CameraEntry, LidarCameraEntry, file_digest
from surroundcal.errors import IoFailure, ParseError
from surroundcal.geometry import Pose, Rotation
from surroundcal.sync import ingest

SPEC = CheckerboardSpec()
HEAD = "# surroundcal corners v1 board=6x9x0.08 image=1600x1200\ncapture_index,camera_id,corner_id,u,v\n"

floats = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, (7, 3), elements=floats), st.booleans())
def test_cloud_round_trip_is_exact(pts, with_layers):
    layers = np.arange(7) % 4 if with_layers else None
    back = io.parse_cloud(io.format_cloud(pts, layers, {"lidar": "lidar0"}))
    assert np.array_equal(back.points, pts)
    assert back.meta == {"lidar": "lidar0"}
    assert (back.layers is None) == (not with_layers)
    if with_layers:
        assert np.array_equal(back.layers, layers)


@given(arrays(np.float64, (5, 2), elements=floats))
def test_corner_round_trip_is_exact(px):
    views = [ViewObservation("cam1", 3, np.array([0, 4, 9, 17, 53]), px), ViewObservation("cam0", 3, np.array([1, 2, 3, 4]), px[:4])]
    cf = io.parse_corners(io.format_corners(SPEC, (1600, 1200), views))
    assert cf.spec == SPEC and cf.image_size == (1600, 1200) and cf.camera_ids == ["cam0", "cam1"]
    for v in views:
        (got,) = [g for g in cf.views if g.camera_id == v.camera_id]
        assert np.array_equal(got.corner_ids, v.corner_ids) and np.array_equal(got.pixels, v.pixels)


def test_streams_round_trip():
    logs = [ingest("cam0", "camera", [(0, "0"), (33333, "-")]), ingest("lidar0", "lidar", [(370, "clouds/a.csv")])]
    back = io.parse_streams(io.format_streams(logs))
    assert [(l.stream_id, l.sensor_kind) for l in back] == [("cam0", "camera"), ("lidar0", "lidar")]
    assert np.array_equal(back[0].timestamps, [0, 33333]) and back[1].payloads == ("clouds/a.csv",)


@pytest.mark.parametrize(
    "body, line, field",
    [
        ("0,cam0,1,10.0,20.0\n0,cam0,2,abc,20.0\n", 4, "u"),
        ("0,cam0,1,10.0,20.0\n0,cam0,99,1.0,2.0\n", 4, "corner_id"),
        ("0,cam0,1,10.0,20.0\n0,cam0,1,11.0,20.0\n", 4, "corner_id"),
        ("x,cam0,1,10.0,20.0\n", 3, "capture_index"),
        ("0,cam0,1,10.0,nan\n", 3, "v"),
        ("0,cam0,1,10.0\n", 3, None),
    ],
)
def test_corner_parse_errors_name_line_and_field(body, line, field):
    with pytest.raises(ParseError) as exc:
        io.parse_corners(HEAD + body, "c.csv")
    assert exc.value.line == line and exc.value.field == field
    assert f"line {line}" in str(exc.value)


def test_header_errors():
    with pytest.raises(ParseError) as exc:
        io.parse_corners("# surroundcal corners v2 board=6x9x0.08 image=1600x1200\n")
    assert exc.value.line == 1 and "version" in str(exc.value)
    with pytest.raises(ParseError) as exc:
        io.parse_corners("# surroundcal corners v1 board=6x9x0.08 image=1600x1200\nu,v\n")
    assert exc.value.line == 2
    with pytest.raises(ParseError) as exc:
        io.parse_cloud("")
    assert exc.value.line == 1


def test_stream_regression_reports_its_line():
    text = "# surroundcal streams v1 kinds=cam0:camera\nstream_id,timestamp_us,payload\ncam0,10,-\ncam0,30,-\ncam0,20,-\n"
    with pytest.raises(ParseError) as exc:
        io.parse_streams(text, "s.csv")
    assert exc.value.line == 5 and exc.value.field == "timestamp_us"


def test_unreadable_file_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        io.read_corners(tmp_path / "missing.csv")


def _doc():
    doc = CalibrationDocument("cam0", str(SPEC))
    doc.cameras["cam0"] = CameraEntry(WIDE, Pose.identity())
    doc.cameras["cam1"] = CameraEntry(WIDE, Pose(Rotation.from_rotvec([0, 0.7, 0]), [0.4, 0.0, -0.1]))
    doc.lidar_camera = LidarCameraEntry(Pose(Rotation.from_rotvec([0.1, 0.2, 0.3]), [1.9, 0, 1.35]), {4: 0.012})
    doc.provenance = {"timestamp": None}
    return doc


def test_document_round_trip_and_unknown_keys(tmp_path):
    obj = _doc().to_json_obj()
    obj["site_notes"] = {"garage": 3}
    obj["cameras"]["cam1"]["mount_serial"] = "A-17"
    doc = CalibrationDocument.loads(json.dumps(obj))
    assert doc.extra == {"site_notes": {"garage": 3}}
    assert doc.cameras["cam1"].extra == {"mount_serial": "A-17"}
    doc.save(tmp_path / "d.json")
    again = CalibrationDocument.load(tmp_path / "d.json")
    assert again.dumps() == doc.dumps()
    assert json.loads(doc.dumps()) == obj
    assert again.intrinsics()["cam1"] == WIDE
    assert np.array_equal(again.rig_poses()["cam1"].rotation.quat, doc.rig_poses()["cam1"].rotation.quat)


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda o: o.pop("cameras"), "cameras"),
        (lambda o: o.update(version=99), "version"),
        (lambda o: o["cameras"]["cam1"]["intrinsics"].update(fx="wide"), "cameras.cam1.intrinsics.fx"),
        (lambda o: o["cameras"]["cam1"]["pose_in_reference"].update(quaternion_wxyz=[1, 0, 0]), "cameras.cam1.pose_in_reference.quaternion_wxyz"),
        (lambda o: o.update(lidar_camera={}), "lidar_camera.pose_reference_to_vehicle"),
    ],
)
def test_document_strict_fields(mutate, field):
    obj = _doc().to_json_obj()
    mutate(obj)
    with pytest.raises(ParseError) as exc:
        CalibrationDocument.loads(json.dumps(obj), "doc.json")
    assert exc.value.field == field


def test_document_bad_json_reports_line():
    with pytest.raises(ParseError) as exc:
        CalibrationDocument.loads('{\n  "format": 1,\n  oops\n}')
    assert exc.value.line == 3


def test_missing_fields_of_partial_document():
    doc = CalibrationDocument("cam0")
    doc.cameras["cam0"] = CameraEntry(WIDE)
    missing = doc.missing_fields()
    assert "cameras.cam0.pose_in_reference" in missing and "lidar_camera" in missing and "board" in missing


def test_file_digest_of_directory_is_order_free(tmp_path):
    (tmp_path / "b.txt").write_text("2")
    (tmp_path / "a.txt").write_text("1")
    d1 = file_digest(tmp_path)
    (tmp_path / "a.txt").write_text("1")
    assert file_digest(tmp_path) == d1
    (tmp_path / "a.txt").write_text("3")
    assert file_digest(tmp_path) != d1
