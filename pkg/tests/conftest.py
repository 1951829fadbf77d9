import numpy as np
import pytest

from aesplan.geometry import PointCloud, Pose3D, rotation_about_axis
from aesplan.kernels import available_backends
from aesplan.perception import build_truck_template


@pytest.fixture(scope="session")
def truck_template():
    return build_truck_template()


@pytest.fixture(params=sorted(available_backends()))
def backend(request):
    return available_backends()[request.param]


def random_pose(rng, max_angle=np.pi, max_shift=1.0):
    axis = rng.normal(size=3)
    return Pose3D(rotation_about_axis(axis, rng.uniform(-max_angle, max_angle)),
                  rng.uniform(-max_shift, max_shift, 3))


def random_cloud(rng, n=200, scale=1.0):
    return PointCloud(rng.uniform(-scale, scale, (n, 3)))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
