"""Quadric-error-metric edge-collapse decimation.

Greedy: the cheapest collapse (by Garland-Heckbert quadric error) is taken
from a min-heap until the face count reaches the target. Ties on equal
error resolve to the lexicographically smallest endpoint pair. A collapse
is vetoed when it would flip or flatten a surviving face, break the link
condition, or pinch two boundary loops together. Open boundaries carry
extra perpendicular constraint planes weighted ``boundary_weight``.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numba
import numpy as np

from .mesh import MeshError, TriangleMesh, boundary_edges

log = logging.getLogger(__name__)

MIN_CELLS = 4
BOUNDARY_WEIGHT = 1000.0


@dataclass(frozen=True)
class DecimationReport:
    input_cells: int
    output_cells: int
    achieved_rate: float
    max_quadric_error: float


def _plane_quadrics(mesh: TriangleMesh, boundary_weight: float) -> np.ndarray:
    v, f = mesh.vertices, mesh.faces
    q = np.zeros((mesh.n_vertices, 4, 4))
    c = v[f]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    ln = np.linalg.norm(n, axis=1)
    ok = ln > 0
    n[ok] /= ln[ok, None]
    n[~ok] = 0.0
    planes = np.concatenate([n, -np.einsum("ij,ij->i", n, c[:, 0])[:, None]], axis=1)
    kp = planes[:, :, None] * planes[:, None, :]
    for k in range(3):
        np.add.at(q, f[:, k], kp)

    be = boundary_edges(f)
    if len(be) and boundary_weight > 0:
        # owning face of each boundary edge, for the perpendicular plane
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        owner = np.tile(np.arange(len(f)), 3)
        key = e[:, 0] * mesh.n_vertices + e[:, 1]
        bkey = be[:, 0] * mesh.n_vertices + be[:, 1]
        order = np.argsort(key, kind="stable")
        pos = np.searchsorted(key[order], bkey)
        fo = owner[order][pos]
        d = v[be[:, 1]] - v[be[:, 0]]
        m = np.cross(d, n[fo])
        lm = np.linalg.norm(m, axis=1)
        good = lm > 0
        m = m[good] / lm[good, None]
        p0 = v[be[good, 0]]
        bp = np.concatenate([m, -np.einsum("ij,ij->i", m, p0)[:, None]], axis=1)
        kb = boundary_weight * bp[:, :, None] * bp[:, None, :]
        np.add.at(q, be[good, 0], kb)
        np.add.at(q, be[good, 1], kb)
    return q


@numba.njit(cache=True)
def _quad_eval(q, x, y, z):
    return (
        q[0, 0] * x * x + 2 * q[0, 1] * x * y + 2 * q[0, 2] * x * z + 2 * q[0, 3] * x
        + q[1, 1] * y * y + 2 * q[1, 2] * y * z + 2 * q[1, 3] * y
        + q[2, 2] * z * z + 2 * q[2, 3] * z + q[3, 3]
    )


@numba.njit(cache=True)
def _edge_cost(qa, qb, pa, pb):
    q = qa + qb
    a00, a01, a02 = q[0, 0], q[0, 1], q[0, 2]
    a11, a12, a22 = q[1, 1], q[1, 2], q[2, 2]
    b0, b1, b2 = -q[0, 3], -q[1, 3], -q[2, 3]
    c00 = a11 * a22 - a12 * a12
    c01 = a02 * a12 - a01 * a22
    c02 = a01 * a12 - a02 * a11
    det = a00 * c00 + a01 * c01 + a02 * c02
    tr = a00 + a11 + a22
    mx = 0.5 * (pa[0] + pb[0])
    my = 0.5 * (pa[1] + pb[1])
    mz = 0.5 * (pa[2] + pb[2])
    span2 = (pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2 + (pa[2] - pb[2]) ** 2
    if tr > 0 and abs(det) > 1e-9 * tr * tr * tr:
        c11 = a00 * a22 - a02 * a02
        c12 = a01 * a02 - a00 * a12
        c22 = a00 * a11 - a01 * a01
        x = (c00 * b0 + c01 * b1 + c02 * b2) / det
        y = (c01 * b0 + c11 * b1 + c12 * b2) / det
        z = (c02 * b0 + c12 * b1 + c22 * b2) / det
        if (x - mx) ** 2 + (y - my) ** 2 + (z - mz) ** 2 <= 4.0 * span2:
            return max(_quad_eval(q, x, y, z), 0.0), x, y, z
    best = _quad_eval(q, mx, my, mz)
    bx, by, bz = mx, my, mz
    ca = _quad_eval(q, pa[0], pa[1], pa[2])
    if ca < best:
        best, bx, by, bz = ca, pa[0], pa[1], pa[2]
    cb = _quad_eval(q, pb[0], pb[1], pb[2])
    if cb < best:
        best, bx, by, bz = cb, pb[0], pb[1], pb[2]
    return max(best, 0.0), bx, by, bz


@numba.njit(cache=True)
def _gather_faces(v, head, pool_face, pool_next, face_alive, out):
    """Fill ``out`` with v's alive faces, unlinking dead ones. Returns count."""
    k = 0
    prev = -1
    node = head[v]
    while node != -1:
        f = pool_face[node]
        nxt = pool_next[node]
        if face_alive[f]:
            if k < out.shape[0]:
                out[k] = f
            k += 1
            prev = node
        else:
            if prev == -1:
                head[v] = nxt
            else:
                pool_next[prev] = nxt
        node = nxt
    return k


@numba.njit(cache=True)
def _neighbors(v, faces, fbuf, nf, nbuf):
    k = 0
    for i in range(nf):
        f = fbuf[i]
        for c in range(3):
            u = faces[f, c]
            if u != v:
                seen = False
                for j in range(k):
                    if nbuf[j] == u:
                        seen = True
                        break
                if not seen:
                    nbuf[k] = u
                    k += 1
    return k


@numba.njit(cache=True)
def _is_boundary_vertex(v, faces, fbuf, nf, nbuf, nn):
    for j in range(nn):
        u = nbuf[j]
        cnt = 0
        for i in range(nf):
            f = fbuf[i]
            if faces[f, 0] == u or faces[f, 1] == u or faces[f, 2] == u:
                cnt += 1
        if cnt == 1:
            return True
    return False


@numba.njit(cache=True)
def _face_cross(p0, p1, p2):
    e1x, e1y, e1z = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    e2x, e2y, e2z = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    return e1y * e2z - e1z * e2y, e1z * e2x - e1x * e2z, e1x * e2y - e1y * e2x


@numba.njit(cache=True)
def _collapse_loop(pos, q, faces, edges, target):
    nv = pos.shape[0]
    n_faces = faces.shape[0]
    face_alive = np.ones(n_faces, dtype=np.bool_)
    v_alive = np.ones(nv, dtype=np.bool_)
    stamp = np.zeros(nv, dtype=np.int64)

    cap = 3 * n_faces
    pool_face = np.empty(cap, dtype=np.int64)
    pool_next = np.full(cap, -1, dtype=np.int64)
    head = np.full(nv, -1, dtype=np.int64)
    node = 0
    for f in range(n_faces):
        for c in range(3):
            v = faces[f, c]
            pool_face[node] = f
            pool_next[node] = head[v]
            head[v] = node
            node += 1

    buf = 4096
    fa = np.empty(buf, dtype=np.int64)
    fb = np.empty(buf, dtype=np.int64)
    na = np.empty(2 * buf, dtype=np.int64)
    nb = np.empty(2 * buf, dtype=np.int64)
    newp = np.empty(3)

    alive_count = n_faces
    max_err = 0.0
    n_collapsed = 0

    while alive_count > target:
        heap = [(0.0, np.int64(0), np.int64(0), np.int64(0), np.int64(0))]
        heap.pop()
        if n_collapsed == 0:
            for e in range(edges.shape[0]):
                a, b = edges[e, 0], edges[e, 1]
                cost, x, y, z = _edge_cost(q[a], q[b], pos[a], pos[b])
                heap.append((cost, a, b, stamp[a], stamp[b]))
        else:
            # rebuild from surviving edges when the heap ran dry
            for a in range(nv):
                if not v_alive[a]:
                    continue
                nfa = _gather_faces(a, head, pool_face, pool_next, face_alive, fa)
                if nfa > buf:
                    continue
                nna = _neighbors(a, faces, fa, nfa, na)
                for j in range(nna):
                    b = na[j]
                    if b > a:
                        cost, x, y, z = _edge_cost(q[a], q[b], pos[a], pos[b])
                        heap.append((cost, a, b, stamp[a], stamp[b]))
        heapq.heapify(heap)
        progress = False

        while len(heap) > 0 and alive_count > target:
            cost, a, b, sa, sb = heapq.heappop(heap)
            if not (v_alive[a] and v_alive[b]) or stamp[a] != sa or stamp[b] != sb:
                continue
            nfa = _gather_faces(a, head, pool_face, pool_next, face_alive, fa)
            nfb = _gather_faces(b, head, pool_face, pool_next, face_alive, fb)
            if nfa > buf or nfb > buf:
                continue
            nna = _neighbors(a, faces, fa, nfa, na)
            nnb = _neighbors(b, faces, fb, nfb, nb)

            # faces shared by the edge, and their apex vertices
            shared = 0
            apex0 = -1
            apex1 = -1
            for i in range(nfa):
                f = fa[i]
                if faces[f, 0] == b or faces[f, 1] == b or faces[f, 2] == b:
                    shared += 1
                    for c in range(3):
                        u = faces[f, c]
                        if u != a and u != b:
                            if apex0 == -1:
                                apex0 = u
                            else:
                                apex1 = u
            if shared == 0 or shared > 2:
                continue
            # link condition
            common = 0
            for i in range(nna):
                for j in range(nnb):
                    if na[i] == nb[j]:
                        common += 1
            if common != shared:
                continue
            if shared == 2:
                if _is_boundary_vertex(a, faces, fa, nfa, na, nna) and _is_boundary_vertex(
                    b, faces, fb, nfb, nb, nnb
                ):
                    continue
            # refuse to close a lone triangle / tetrahedron-like cap
            if nna <= 2 or nnb <= 2:
                continue

            cost, x, y, z = _edge_cost(q[a], q[b], pos[a], pos[b])
            newp[0] = x
            newp[1] = y
            newp[2] = z

            veto = False
            for side in range(2):
                nfs = nfa if side == 0 else nfb
                for i in range(nfs):
                    f = fa[i] if side == 0 else fb[i]
                    i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
                    if (i0 == a or i1 == a or i2 == a) and (i0 == b or i1 == b or i2 == b):
                        continue
                    ox, oy, oz = _face_cross(pos[i0], pos[i1], pos[i2])
                    if ox == 0.0 and oy == 0.0 and oz == 0.0:
                        continue
                    p0 = newp if (i0 == a or i0 == b) else pos[i0]
                    p1 = newp if (i1 == a or i1 == b) else pos[i1]
                    p2 = newp if (i2 == a or i2 == b) else pos[i2]
                    nx, ny, nz = _face_cross(p0, p1, p2)
                    if ox * nx + oy * ny + oz * nz <= 0.0:
                        veto = True
                        break
                if veto:
                    break
            if veto:
                continue

            # commit: b merges into a
            for i in range(nfb):
                f = fb[i]
                has_a = faces[f, 0] == a or faces[f, 1] == a or faces[f, 2] == a
                if has_a:
                    face_alive[f] = False
                    alive_count -= 1
                else:
                    for c in range(3):
                        if faces[f, c] == b:
                            faces[f, c] = a
            # splice b's incidence list onto a's
            tail = head[b]
            if tail != -1:
                while pool_next[tail] != -1:
                    tail = pool_next[tail]
                pool_next[tail] = head[a]
                head[a] = head[b]
            head[b] = -1
            v_alive[b] = False
            pos[a, 0] = x
            pos[a, 1] = y
            pos[a, 2] = z
            q[a] += q[b]
            stamp[a] += 1
            if cost > max_err:
                max_err = cost
            n_collapsed += 1
            progress = True

            nfa = _gather_faces(a, head, pool_face, pool_next, face_alive, fa)
            nna = _neighbors(a, faces, fa, min(nfa, buf), na)
            for j in range(nna):
                u = na[j]
                lo = a if a < u else u
                hi = u if a < u else a
                c2, _x, _y, _z = _edge_cost(q[lo], q[hi], pos[lo], pos[hi])
                heapq.heappush(heap, (c2, lo, hi, stamp[lo], stamp[hi]))

        if not progress:
            break
    return face_alive, max_err


def _unique_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def decimate(
    mesh: TriangleMesh,
    rate: float,
    boundary_weight: float = BOUNDARY_WEIGHT,
) -> tuple[TriangleMesh, DecimationReport]:
    """Keep roughly ``rate`` of the cells of ``mesh``.

    ``rate = 1`` returns the input unchanged. The result keeps surviving
    faces in their original relative order.
    """
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    mesh.validate()
    n = mesh.n_cells
    if rate == 1.0:
        return mesh, DecimationReport(n, n, 1.0, 0.0)
    target = int(round(rate * n))
    if target < MIN_CELLS:
        log.warning("decimation target %d below %d cells; clamped", target, MIN_CELLS)
        target = min(MIN_CELLS, n)

    pos = mesh.vertices.copy()
    faces = mesh.faces.copy()
    q = _plane_quadrics(mesh, boundary_weight)
    alive, max_err = _collapse_loop(pos, q, faces, _unique_edges(mesh.faces), target)

    kept = faces[alive]
    used = np.unique(kept)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    out = TriangleMesh(pos[used], remap[kept])
    if out.n_cells == 0:
        raise MeshError("decimation removed every cell")
    report = DecimationReport(n, out.n_cells, out.n_cells / n, float(max_err))
    if abs(out.n_cells - target) > 0.02 * target:
        log.warning("decimation stalled at %d cells (target %d)", out.n_cells, target)
    return out, report
