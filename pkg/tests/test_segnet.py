import math

import numpy as np
import pytest

from conftest import grid_mesh, triangle_mesh
from dentseg.features import SparseAdjacency, build_adjacency, build_features, default_radii
from dentseg.mesh import TriangleMesh, compute_cell_geometry
from dentseg.segnet.model import (
    GraphInput,
    ModelParameters,
    ShapeError,
    Widths,
    backward,
    cce_loss,
    dropout_mask,
    forward,
    layer_shapes,
)
from oracles import finite_difference_errors
import scipy.sparse as sp


def graph_for(mesh, dtype=np.float64, fractions=(0.3, 0.6)):
    g = compute_cell_geometry(mesh)
    rs, rl = default_radii(g, *fractions)
    a_s, a_l = build_adjacency(g, rs, rl)
    return GraphInput.build(build_features(mesh, g), a_s, a_l, dtype)


def bumpy_grid(nx=2, ny=5):
    return grid_mesh(nx, ny, lambda x, y: 0.4 * np.sin(1.3 * x + 0.7 * y) + 0.1 * x * y)


def test_default_shapes():
    s = layer_shapes(Widths())
    assert s["enc1"] == (15, 64) and s["enc2"] == (64, 64)
    assert s["ctx1"] == (128, 128) and s["ctx2"] == (256, 128)
    assert s["fuse"] == (64 + 128 + 128 + 256, 256) and s["cls"] == (256, 15)


def test_rows_sum_to_one(small_arch):
    m, _ = small_arch
    g = graph_for(m, np.float32, (0.05, 0.12))
    p = forward(ModelParameters.init(Widths.uniform(16), seed=1), g)
    assert p.shape == (m.n_cells, 15)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    assert (p >= 0).all() and (p <= 1).all()
    pt = forward(ModelParameters.init(Widths.uniform(16), seed=1), g, training=True, rng=np.random.default_rng(0))
    np.testing.assert_allclose(pt.sum(axis=1), 1, atol=1e-6)


def test_permutation_equivariance():
    m = bumpy_grid(4, 5)
    perm = np.random.default_rng(0).permutation(m.n_cells)
    params = ModelParameters.init(Widths.uniform(8), seed=2, dtype=np.float64)
    p = forward(params, graph_for(m))
    pp = forward(params, graph_for(TriangleMesh(m.vertices, m.faces[perm])))
    np.testing.assert_allclose(pp, p[perm], rtol=1e-5, atol=1e-12)


def _hand_forward(params, x):
    """Single cell, no neighbours: plain-Python matrix arithmetic."""
    def lin(v, name):
        W, b = params.W[name].tolist(), params.b[name].tolist()
        return [max(0.0, sum(v[i] * W[i][j] for i in range(len(v))) + b[j]) for j in range(len(b))]
    e = lin(lin(x, "enc1"), "enc2")
    c1 = lin(e + e, "ctx1")
    c2 = lin(c1 + c1, "ctx2")
    loc = e + c1 + c2
    g = lin(loc, "glob")
    f = lin(loc + g, "fuse")
    W, b = params.W["cls"].tolist(), params.b["cls"].tolist()
    z = [sum(f[i] * W[i][j] for i in range(len(f))) + b[j] for j in range(15)]
    mx = max(z)
    ez = [math.exp(v - mx) for v in z]
    return [v / sum(ez) for v in ez]


def test_single_cell_matches_hand_trace():
    m = triangle_mesh()
    g = compute_cell_geometry(m)
    empty = SparseAdjacency(sp.csr_matrix((1, 1), dtype=bool), 1.0)
    x = np.random.default_rng(5).standard_normal((1, 15))  # arbitrary non-zero input
    params = ModelParameters.init(Widths.uniform(4), seed=3, dtype=np.float64)
    for k in params.b:
        params.b[k] += 0.1
    gi = GraphInput.build(x, empty, empty, np.float64)
    np.testing.assert_allclose(forward(params, gi)[0], _hand_forward(params, x[0].tolist()), rtol=1e-12)
    assert build_features(m, g).matrix.shape == (1, 15)


def test_shape_errors_name_stage():
    m = bumpy_grid()
    g = compute_cell_geometry(m)
    a, _ = build_adjacency(g, 1.0, 1.0)
    with pytest.raises(ShapeError, match="input stage"):
        GraphInput.build(np.zeros((20, 14)), a, a)
    other, _ = build_adjacency(compute_cell_geometry(grid_mesh(1, 1)), 1.0, 1.0)
    with pytest.raises(ShapeError, match="small-radius context stage"):
        GraphInput.build(np.zeros((20, 15)), other, a)
    with pytest.raises(ShapeError, match="large-radius context stage"):
        GraphInput.build(np.zeros((20, 15)), a, other)


def test_cce_examples():
    uni = np.full((4, 15), 1 / 15)
    assert cce_loss(uni, [0, 3, 7, 14]) == pytest.approx(math.log(15), abs=1e-12)
    assert round(math.log(15), 5) == 2.70805
    assert cce_loss(np.eye(15)[[2, 5]], [2, 5]) <= 1e-10
    p = np.zeros((2, 15))
    p[0, :2] = [0.5, 0.5]
    p[1, :2] = [0.25, 0.75]
    assert cce_loss(p, [0, 1]) == pytest.approx((-math.log(0.5) - math.log(0.75)) / 2, abs=1e-15)
    with pytest.raises(ShapeError):
        cce_loss(p, [0])
    # floor keeps a confident miss finite
    assert cce_loss(np.eye(15)[[0]], [1]) == pytest.approx(-math.log(1e-12))


def test_gradients_finite(small_arch):
    m, l = small_arch
    g = graph_for(m, np.float32, (0.05, 0.12))
    params = ModelParameters.init(Widths.uniform(16), seed=0)
    _, grads, _ = backward(params, g, l.labels, dropout_mask(np.random.default_rng(0), (m.n_cells, 16), 0.5, np.float32))
    assert all(np.isfinite(v).all() for v in grads.values())
    assert set(grads) == {n for n, _ in params.tensors()}


def test_classifier_bias_gradient_at_uniform_logits():
    m = bumpy_grid()
    g = graph_for(m)
    params = ModelParameters.init(Widths.uniform(8), seed=4, dtype=np.float64)
    params.W["cls"][:] = 0
    params.b["cls"][:] = 0
    truth = np.random.default_rng(0).integers(0, 15, m.n_cells)
    loss, grads, p = backward(params, g, truth)
    np.testing.assert_allclose(p, 1 / 15)
    expected = 1 / 15 - np.bincount(truth, minlength=15) / m.n_cells
    np.testing.assert_allclose(grads["cls.b"], expected, atol=1e-15)
    assert loss == pytest.approx(math.log(15))


@pytest.mark.parametrize("with_mask", [False, True])
def test_finite_differences(with_mask):
    m = bumpy_grid()
    assert m.n_cells == 20
    g = graph_for(m)
    rng = np.random.default_rng(7)
    params = ModelParameters.init(Widths.uniform(8), seed=5, dtype=np.float64)
    for k in params.b:
        params.b[k] += rng.normal(0, 0.1, params.b[k].shape)
    truth = rng.integers(0, 15, 20)
    mask = dropout_mask(rng, (20, 8), 0.5, np.float64) if with_mask else None
    err = finite_difference_errors(params, g, truth, 200, 1e-4, rng, mask)
    assert len(err) == 200
    assert err.max() <= 1e-4


def test_forward_pure_without_dropout(small_arch):
    m, _ = small_arch
    g = graph_for(m, np.float32, (0.05, 0.12))
    params = ModelParameters.init(Widths.uniform(8), seed=1)
    assert forward(params, g).tobytes() == forward(params, g).tobytes()


def test_dropout_mask_scaling():
    mk = dropout_mask(np.random.default_rng(0), (1000, 50), 0.5, np.float64)
    assert set(np.unique(mk)) == {0.0, 2.0}
    assert abs(mk.mean() - 1) < 0.05


def test_parameter_check():
    p = ModelParameters.init(Widths.uniform(4))
    p.W["enc1"] = np.zeros((15, 5), np.float32)
    with pytest.raises(ShapeError, match="enc1"):
        p.check()
    p = ModelParameters.init(Widths.uniform(4))
    p.b["cls"][0] = np.nan
    with pytest.raises(ShapeError, match="non-finite"):
        p.check()
