import numpy as np
import pytest

from pcwm import synthetic
from pcwm.geometry_io import load_mesh, normalize, sample_surface


@pytest.fixture(scope="session")
def mesh_root(tmp_path_factory):
    """Synthetic ModelNet-style tree: 10 classes x (10 train + 10 test)."""
    return synthetic.write_dataset(tmp_path_factory.mktemp("meshes"), 10, 10, seed=2024)


@pytest.fixture(scope="session")
def small_root(tmp_path_factory):
    """Tiny tree: 2 classes x (2 train + 1 test)."""
    return synthetic.write_dataset(tmp_path_factory.mktemp("small"), 2, 1, seed=5,
                                   classes=("box", "torus"))


def sampled_clouds(root, count, n_points=1024, seed=0):
    paths = sorted(p for p in root.rglob("*") if p.suffix in (".off", ".ply"))
    out = []
    for p in paths[:count]:
        rel = p.relative_to(root).as_posix()
        out.append(normalize(sample_surface(load_mesh(p), n_points, seed, rel))[0])
    return out


@pytest.fixture(scope="session")
def clouds(mesh_root):
    """Twenty normalized 1024-point clouds, two per class."""
    paths = sorted(p for p in mesh_root.rglob("*") if p.suffix in (".off", ".ply"))
    picked = paths[::10][:20]
    return [normalize(sample_surface(load_mesh(p), 1024, 0, p.name))[0] for p in picked]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
