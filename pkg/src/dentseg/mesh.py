"""Triangle mesh container and per-cell geometry.

A *cell* is one triangular face. Everything downstream (labels, features,
adjacency) is indexed by face order, so nothing in here reorders faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (N, 3) int64

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            if f.size == 0:
                f = f.reshape(0, 3)
            else:
                raise MeshError(f"faces must be (N, 3), got {f.shape}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_cells(self) -> int:
        return int(self.faces.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    def validate(self) -> None:
        """Raise MeshError unless the mesh is fit to enter the pipeline."""
        if self.n_cells < 1:
            raise MeshError("empty mesh")
        if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
            raise MeshError("face index out of range")
        f = self.faces
        repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if repeated.any():
            raise MeshError(f"face {int(np.flatnonzero(repeated)[0])} repeats a vertex index")
        if not np.isfinite(self.vertices).all():
            raise MeshError("non-finite vertex coordinate")

    def corners(self) -> np.ndarray:
        """(N, 3, 3) array of the three corner positions of every cell."""
        return self.vertices[self.faces]

    def transformed(self, matrix: np.ndarray, offset: np.ndarray) -> "TriangleMesh":
        return TriangleMesh(self.vertices @ np.asarray(matrix).T + np.asarray(offset), self.faces.copy())


@dataclass(frozen=True)
class CellGeometry:
    centroids: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3), unit or zero
    mesh_centroid: np.ndarray  # (3,)
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_cells(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bbox_max - self.bbox_min))


# Relative to the longest edge squared; below this a face counts as zero-area.
_DEGENERATE_TOL = 1e-14


def face_normals(corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals by the right-hand rule on stored winding, plus a degenerate mask."""
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=1)
    scale = np.maximum(
        np.einsum("ij,ij->i", e1, e1),
        np.einsum("ij,ij->i", e2, e2),
    )
    degenerate = (norm <= _DEGENERATE_TOL * scale) | (norm == 0.0)
    normals = np.zeros_like(cross)
    ok = ~degenerate
    normals[ok] = cross[ok] / norm[ok, None]
    return normals, degenerate


def compute_cell_geometry(mesh: TriangleMesh) -> CellGeometry:
    if mesh.n_cells == 0:
        raise MeshError("empty mesh")
    corners = mesh.corners()
    centroids = corners.sum(axis=1) / 3.0
    normals, degenerate = face_normals(corners)
    used = mesh.vertices[np.unique(mesh.faces)]
    return CellGeometry(
        centroids=centroids,
        normals=normals,
        mesh_centroid=centroids.mean(axis=0),
        bbox_min=used.min(axis=0),
        bbox_max=used.max(axis=0),
        degenerate=np.flatnonzero(degenerate),
    )


def face_adjacency(faces: np.ndarray) -> np.ndarray:
    """Pairs (i, j), i < j, of cells sharing an undirected mesh edge.

    Sorted lexicographically. Edges shared by more than two faces
    (non-manifold) connect every pair of faces around them.
    """
    faces = np.asarray(faces, dtype=np.int64)
    n = faces.shape[0]
    if n == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    owner = np.tile(np.arange(n, dtype=np.int64), 3)
    order = np.lexsort((owner, e[:, 1], e[:, 0]))
    e, owner = e[order], owner[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    pairs = [np.stack([owner[:-1][same], owner[1:][same]], axis=1)]
    # non-manifold edges: runs longer than two
    run_start = np.flatnonzero(np.concatenate([[True], ~same]))
    run_len = np.diff(np.concatenate([run_start, [len(e)]]))
    for s, ln in zip(run_start[run_len > 2], run_len[run_len > 2]):
        members = owner[s : s + ln]
        for a in range(ln):
            for b in range(a + 2, ln):
                pairs.append(np.array([[members[a], members[b]]]))
    p = np.concatenate(pairs)
    p.sort(axis=1)
    p = p[p[:, 0] != p[:, 1]]
    return np.unique(p, axis=0)


def boundary_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges used by exactly one face, as sorted (a, b) rows."""
    faces = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]
