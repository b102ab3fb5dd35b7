"""Slow, independent reference computations used by the tests."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import cKDTree


def closest_point_on_triangles(p, a, b, c):
    """Closest points to p on triangles (a, b, c); all inputs (M, 3).

    Region-by-region closest point test (Ericson, Real-Time Collision
    Detection, 5.1.5), vectorised.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def put(mask, val):
        m = mask & ~done
        out[m] = val[m]
        done[m] = True

    put((d1 <= 0) & (d2 <= 0), a)
    put((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        put((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        put(np.ones(len(p), dtype=bool), a + ab * v[:, None] + ac * w[:, None])
    return out


def point_mesh_distance(points, vertices, faces, candidates=None):
    """Distance from each point to the triangle set.

    With ``candidates`` None every triangle is checked (true brute force).
    Otherwise only the ``candidates`` triangles with the nearest centroids
    are checked, which can only over-estimate the distance.
    """
    tri = vertices[faces]
    if candidates is None:
        best = np.full(len(points), np.inf)
        for t in range(len(faces)):
            a = np.broadcast_to(tri[t, 0], points.shape)
            b = np.broadcast_to(tri[t, 1], points.shape)
            c = np.broadcast_to(tri[t, 2], points.shape)
            q = closest_point_on_triangles(points, a, b, c)
            best = np.minimum(best, np.linalg.norm(points - q, axis=1))
        return best
    k = min(candidates, len(faces))
    _, idx = cKDTree(tri.mean(axis=1)).query(points, k=k)
    idx = idx.reshape(len(points), k)
    best = np.full(len(points), np.inf)
    for j in range(k):
        t = tri[idx[:, j]]
        q = closest_point_on_triangles(points, t[:, 0], t[:, 1], t[:, 2])
        best = np.minimum(best, np.linalg.norm(points - q, axis=1))
    return best


def sample_surface(vertices, faces, per_face, rng):
    tri = vertices[faces]
    r = rng.random((len(faces), per_face, 2))
    flip = r.sum(axis=2) > 1
    r[flip] = 1 - r[flip]
    pts = tri[:, None, 0] + r[..., :1] * (tri[:, None, 1] - tri[:, None, 0]) + r[..., 1:] * (
        tri[:, None, 2] - tri[:, None, 0]
    )
    return np.concatenate([pts.reshape(-1, 3), vertices[np.unique(faces)]])


def hausdorff(mesh_a, mesh_b, per_face, rng, candidates=None):
    pa = sample_surface(mesh_a.vertices, mesh_a.faces, per_face, rng)
    pb = sample_surface(mesh_b.vertices, mesh_b.faces, per_face, rng)
    dab = point_mesh_distance(pa, mesh_b.vertices, mesh_b.faces, candidates)
    dba = point_mesh_distance(pb, mesh_a.vertices, mesh_a.faces, candidates)
    return max(dab.max(), dba.max())


def radius_neighbors_brute(points, r):
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    adj = d <= r
    np.fill_diagonal(adj, False)
    return [sorted(np.flatnonzero(row).tolist()) for row in adj]


def knn_vote_brute(coarse, labels, fine, k, chunk=500):
    """All-pairs k-NN vote: distance ties to the lower index, vote ties to the
    nearest neighbour among the tied classes."""
    labels = np.asarray(labels)
    out = np.empty(len(fine), dtype=np.int64)
    for s in range(0, len(fine), chunk):
        d = ((coarse[None, :, :] - fine[s : s + chunk, None, :]) ** 2).sum(axis=2)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]  # stable keeps index order on ties
        for r, row in enumerate(order):
            votes = {}
            for j in row:
                votes[labels[j]] = votes.get(labels[j], 0) + 1
            top = max(votes.values())
            out[s + r] = next(labels[j] for j in row if votes[labels[j]] == top)
    return out


def brute_min_cut(n, s, t, arcs):
    """Min s-t cut by enumerating all source sets. arcs: (u, v, cap)."""
    others = [v for v in range(n) if v not in (s, t)]
    best = np.inf
    for bits in itertools.product([0, 1], repeat=len(others)):
        src = {s} | {v for v, b in zip(others, bits) if b}
        cut = sum(c for u, v, c in arcs if u in src and v not in src)
        best = min(best, cut)
    return best


def potts_energy(labels, unary, pairs, weights, lam):
    return float(
        unary[np.arange(len(labels)), labels].sum()
        + lam * (weights * (labels[pairs[:, 0]] != labels[pairs[:, 1]])).sum()
    )


def exhaustive_binary_minimum(unary, pairs, weights, lam, la, lb):
    """Global minimum over labelings restricted to {la, lb} by enumeration."""
    n = unary.shape[0]
    codes = np.arange(2**n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    u = np.where(bits, unary[:, lb][None, :], unary[:, la][None, :]).sum(axis=1)
    cut = (bits[:, pairs[:, 0]] != bits[:, pairs[:, 1]]).astype(float) @ weights
    return float((u + lam * cut).min())


def finite_difference_errors(params, graph, truth, n_samples, h, rng, mask=None):
    """Relative error |a - n| / max(|a| + |n|, 1e-8) between backward() and
    central differences of the loss at ``n_samples`` sampled parameters.

    Every tensor contributes at least one sample.
    """
    from dentseg.segnet.model import _forward, backward, cce_loss

    def loss_at():
        p, _ = _forward(params, graph, mask)
        return cce_loss(p, truth)

    _, grads, _ = backward(params, graph, truth, mask)
    tensors = params.tensors()
    sizes = np.array([t.size for _, t in tensors])
    picks = [(k, int(rng.integers(sizes[k]))) for k in range(len(tensors))]
    flat = rng.choice(sizes.sum(), size=n_samples - len(picks), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for f in flat:
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        picks.append((k, int(f - offsets[k])))
    errs = []
    for k, j in picks:
        name, t = tensors[k]
        view = t.reshape(-1)
        old = view[j]
        view[j] = old + h
        up = loss_at()
        view[j] = old - h
        down = loss_at()
        view[j] = old
        num = (up - down) / (2 * h)
        ana = grads[name].reshape(-1)[j]
        errs.append(abs(ana - num) / max(abs(ana) + abs(num), 1e-8))
    return np.array(errs)
