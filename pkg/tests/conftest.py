import numpy as np
import pytest
from hypothesis import settings

from metric_upscaling.media import CoefficientField, MediumSpec, generate
from metric_upscaling.mesh import build_disk_mesh

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def disk4():
    """Disk hierarchy with four refinements, boundary projected up to level 2."""
    return build_disk_mesh(4, project_levels=2)


@pytest.fixture(scope="session")
def trig5():
    """Disk hierarchy to level 5 with the trigonometric medium on the finest level."""
    hier = build_disk_mesh(5, project_levels=2)
    return hier, generate(hier[5], MediumSpec("trigonometric"))


def identity(mesh):
    return CoefficientField.scalar(np.ones(mesh.n_triangles))


def random_spd(rng, n, lo=0.2, hi=5.0):
    """Random symmetric positive definite 2x2 tensors."""
    theta = rng.uniform(0, np.pi, n)
    lam = rng.uniform(lo, hi, (n, 2))
    c, s = np.cos(theta), np.sin(theta)
    R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    return np.einsum("tij,tj,tkj->tik", R, lam, R)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
