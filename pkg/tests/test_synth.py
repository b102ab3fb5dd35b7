import numpy as np
import pytest
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from dentseg.mesh import face_adjacency
from dentseg.synth import ArchSpec, generate


def test_deterministic():
    a = generate(ArchSpec(target_cells=2000, seed=5))
    b = generate(ArchSpec(target_cells=2000, seed=5))
    assert a[0].vertices.tobytes() == b[0].vertices.tobytes()
    assert a[0].faces.tobytes() == b[0].faces.tobytes()
    assert a[1].labels.tobytes() == b[1].labels.tobytes()


def test_full_label_set_and_gingiva_majority():
    m, l = generate(ArchSpec(target_cells=3000))
    assert set(l.labels.tolist()) == set(range(15))
    counts = np.bincount(l.labels)
    assert counts.argmax() == 0 and counts[0] > l.labels.size / 2


@pytest.mark.parametrize("target", [1000, 10_000, 100_000])
def test_cell_count_within_ten_percent(target):
    m, l = generate(ArchSpec(target_cells=target, seed=1))
    assert 0.9 * target <= m.n_cells <= 1.1 * target
    assert len(l) == m.n_cells
    m.validate()


def test_missing_teeth():
    _, l = generate(ArchSpec(target_cells=3000, missing_teeth=frozenset({0, 5})))
    present = set(l.labels.tolist())
    assert 1 not in present and 6 not in present and 2 in present


def test_teeth_connected():
    m, l = generate(ArchSpec(target_cells=4000, seed=2))
    pairs = face_adjacency(m.faces)
    for k in range(1, 15):
        idx = np.flatnonzero(l.labels == k)
        local = np.full(m.n_cells, -1)
        local[idx] = np.arange(idx.size)
        keep = (l.labels[pairs[:, 0]] == k) & (l.labels[pairs[:, 1]] == k)
        p = local[pairs[keep]]
        g = coo_matrix((np.ones(len(p)), (p[:, 0], p[:, 1])), shape=(idx.size, idx.size))
        assert connected_components(g, directed=False)[0] == 1


def test_maxilla_mirrors():
    mand, _ = generate(ArchSpec(target_cells=1000, jaw="mandible", seed=0))
    maxi, _ = generate(ArchSpec(target_cells=1000, jaw="maxilla", seed=0))
    np.testing.assert_allclose(maxi.vertices[:, 2], -mand.vertices[:, 2])


@pytest.mark.parametrize("spec", [
    ArchSpec(n_teeth=0), ArchSpec(n_teeth=15), ArchSpec(target_cells=10), ArchSpec(jaw="upper"),
    ArchSpec(n_teeth=2, missing_teeth=frozenset({0, 1})),
])
def test_infeasible(spec):
    with pytest.raises(ValueError):
        generate(spec)
