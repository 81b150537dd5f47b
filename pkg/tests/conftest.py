import numpy as np
import pytest

from surfdraw import shapes
from surfdraw.mapping import METHODS, MappingConfig
from surfdraw.metrics import benchmark
from surfdraw.strokes import lattice_strokes
from surfdraw.surface import SurfaceModel

RADIUS = 50.0
START_ANGLE = -0.8  # first lattice point sits 40 mm of arc from the crest

ACCEPTANCE_LINES: list[str] = []


def cylinder_start():
    a = START_ANGLE
    return (np.array([-40.0, RADIUS * np.sin(a), RADIUS * np.cos(a)]),
            np.array([0.0, np.sin(a), np.cos(a)]))


def cylinder_reports(samples: int, methods=METHODS, seed: int = 0):
    surf = SurfaceModel.from_mesh(shapes.half_cylinder(), samples, seed, chart_mesh=shapes.cylinder_chart())
    start, normal = cylinder_start()
    cfg = MappingConfig(start_point_3d=start, start_normal=normal, seed=seed)
    return {r.method: r for r in benchmark(surf, lattice_strokes(), list(methods), cfg)}


@pytest.fixture(scope="session")
def lattice():
    return lattice_strokes()


@pytest.fixture(scope="session")
def plane_reports(lattice):
    # grid vertices only, so lattice points coincide with samples
    surf = SurfaceModel.from_mesh(shapes.plane_grid(), 0, 0)
    cfg = MappingConfig(start_point_3d=np.array([-40.0, -40.0, 0.0]), start_normal=np.array([0.0, 0.0, 1.0]))
    return {r.method: r for r in benchmark(surf, lattice, list(METHODS), cfg)}


@pytest.fixture(scope="session")
def cylinder_1e6():
    return cylinder_reports(1_000_000)


@pytest.fixture(scope="session")
def cylinder_1e5():
    return cylinder_reports(100_000, methods=("baseline", "DI", "EI"))


@pytest.fixture
def record():
    def _record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
