import numpy as np
import pytest

from shapegrowth.mesh import SurfaceMesh
from shapegrowth.phantom import PhantomParams, generate_phantom


def cylinder_params(**kw):
    # a huge arc radius makes the sweep path straight to ~1e-13 mm
    base = dict(arc_radius=1e9, arc_angle=100.0 / 1e9, base_radius=10.0, bulge_amplitude=0.0,
                axial_samples=41, circumferential_samples=48)
    base.update(kw)
    return PhantomParams(**base)


def torus_params(**kw):
    base = dict(arc_radius=30.0, arc_angle=np.pi / 2, base_radius=10.0, bulge_amplitude=0.0,
                axial_samples=61, circumferential_samples=48)
    base.update(kw)
    return PhantomParams(**base)


@pytest.fixture(scope="session")
def cylinder():
    return generate_phantom(cylinder_params())


@pytest.fixture(scope="session")
def torus():
    return generate_phantom(torus_params())


@pytest.fixture(scope="session")
def default_phantom():
    return generate_phantom(PhantomParams())


def unit_cube() -> SurfaceMesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                  [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    f = np.array([[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4],
                  [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]])
    return SurfaceMesh(v, f)


def random_rotation(rng, max_deg=180.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = np.radians(rng.uniform(-max_deg, max_deg))
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(ang) * k + (1 - np.cos(ang)) * k @ k


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
