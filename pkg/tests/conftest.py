import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from surroundcal.camera import CheckerboardSpec
from helpers import run_cli
from surroundcal.sim import NoiseModel, default_capture_plan, default_rig, simulate_captures

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def spec():
    return CheckerboardSpec()


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture(scope="session")
def plan(spec, rig):
    return default_capture_plan(spec, rig)


@pytest.fixture(scope="session")
def clean_captures(rig, plan, spec):
    return simulate_captures(rig, plan, spec, NoiseModel())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _pipeline(root, seed=0):
    sc, cal = root / "scenario", root / "cal"
    steps = [
        ("simulate", "--out", sc, "--seed", seed),
        ("calib-intrinsics", "--corners", sc / "corners.csv", "--out", cal),
        ("calib-extrinsics", "--corners", sc / "corners.csv", "--out", cal),
        ("calib-lidar", "--corners", sc / "corners.csv", "--streams", sc / "streams.csv", "--out", cal),
        ("report", "--out", cal, "--truth", sc / "truth.json"),
    ]
    logs = []
    for step in steps:
        code, out, err = run_cli(*step)
        assert code == 0, (step, err)
        logs.append(out)
    return {"root": root, "scenario": sc, "cal": cal, "report": logs[-1], "stdout": logs}


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    """The default end-to-end CLI chain, run twice with the same seed."""
    return [_pipeline(tmp_path_factory.mktemp(f"run{i}")) for i in range(2)]


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
