import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dentseg.mesh import TriangleMesh  # noqa: E402
from dentseg.synth import ArchSpec, generate  # noqa: E402

CUBE_VERTICES = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
# outward-facing, counter-clockwise seen from outside
CUBE_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # z = 0
    [4, 5, 6], [4, 6, 7],  # z = 1
    [0, 1, 5], [0, 5, 4],  # y = 0
    [3, 7, 6], [3, 6, 2],  # y = 1
    [0, 4, 7], [0, 7, 3],  # x = 0
    [1, 2, 6], [1, 6, 5],  # x = 1
])


def cube_mesh() -> TriangleMesh:
    return TriangleMesh(CUBE_VERTICES.copy(), CUBE_FACES.copy())


def triangle_mesh() -> TriangleMesh:
    return TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))


def grid_mesh(nx: int, ny: int, height=None) -> TriangleMesh:
    """Planar (or height-mapped) grid of 2*nx*ny triangles."""
    xs, ys = np.meshgrid(np.arange(nx + 1, dtype=float), np.arange(ny + 1, dtype=float), indexing="ij")
    z = np.zeros_like(xs) if height is None else height(xs, ys)
    v = np.stack([xs.ravel(), ys.ravel(), z.ravel()], axis=1)
    idx = lambda i, j: i * (ny + 1) + j  # noqa: E731
    f = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            f += [[a, b, c], [a, c, d]]
    return TriangleMesh(v, np.array(f))


@pytest.fixture
def cube():
    return cube_mesh()


@pytest.fixture(scope="session")
def small_arch():
    return generate(ArchSpec(target_cells=600, seed=3))


OVERFIT_WIDTHS = (32, 64, 64, 128, 128)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """One synthetic arch trained with augmentation for 200 epochs at lr 1e-3.

    Shared by the capacity check and the end-to-end evaluation test.
    """
    from dentseg.pipeline import RunConfig, run_regime
    from dentseg.segnet.model import Widths
    from dentseg.segnet.train import Hyperparameters

    mesh, labels = generate(ArchSpec(target_cells=1000, seed=0))
    ck = tmp_path_factory.mktemp("overfit") / "checkpoint.bin"
    cfg = RunConfig(hp=Hyperparameters(learning_rate=1e-3), widths=Widths(*OVERFIT_WIDTHS))
    _, log = run_regime([(mesh, labels)], cfg, checkpoint_path=ck)
    return mesh, labels, ck, log


# acceptance results, filled by tests/test_acceptance.py and echoed in the summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
