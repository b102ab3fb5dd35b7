"""Per-cell input attributes and centroid-radius adjacency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import CellGeometry, MeshError, TriangleMesh

N_FEATURES = 15
RADIUS_SMALL_FRACTION = 0.05
RADIUS_LARGE_FRACTION = 0.12


@dataclass(frozen=True)
class CellFeatures:
    """N x 15 matrix: 9 corner coordinates, unit normal, centroid offset.

    ``mean`` and ``std`` are the per-column statistics used for z-scoring;
    columns that are constant keep std = 1.
    """

    matrix: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(self.matrix.shape[0])


def raw_features(mesh: TriangleMesh, geometry: CellGeometry) -> np.ndarray:
    if mesh.n_cells == 0:
        raise MeshError("empty mesh")
    if geometry.n_cells != mesh.n_cells:
        raise ValueError("geometry does not belong to this mesh")
    normals = geometry.normals.copy()
    if len(geometry.degenerate):
        good = np.setdiff1d(np.arange(mesh.n_cells), geometry.degenerate)
        avg = normals[good].mean(axis=0) if good.size else np.zeros(3)
        ln = np.linalg.norm(avg)
        normals[geometry.degenerate] = avg / ln if ln > 0 else 0.0
    corners = mesh.corners().reshape(-1, 9)
    rel = geometry.centroids - geometry.mesh_centroid
    return np.concatenate([corners, normals, rel], axis=1)


def build_features(mesh: TriangleMesh, geometry: CellGeometry) -> CellFeatures:
    raw = raw_features(mesh, geometry)
    mean = raw.mean(axis=0)
    centered = raw - mean
    std = np.sqrt((centered**2).mean(axis=0))
    # treat near-constant columns (rounding noise only) as constant
    scale = np.maximum(np.abs(mean), 1.0)
    std = np.where(std > 1e-9 * scale, std, 1.0)
    return CellFeatures(centered / std, mean, std)


@dataclass(frozen=True)
class SparseAdjacency:
    """Symmetric, irreflexive cell adjacency as a boolean CSR matrix."""

    matrix: sp.csr_matrix
    radius: float

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    def neighbors(self, i: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[i] : m.indptr[i + 1]]

    def edges(self) -> set[tuple[int, int]]:
        c = sp.triu(self.matrix, k=1).tocoo()
        return set(zip(c.row.tolist(), c.col.tolist()))

    def smoothing(self, dtype=np.float64) -> sp.csr_matrix:
        """rownorm(A + I)."""
        a = self.matrix.astype(dtype) + sp.identity(self.n, dtype=dtype, format="csr")
        deg = np.asarray(a.sum(axis=1)).ravel()
        return sp.csr_matrix(sp.diags((1.0 / deg).astype(dtype)) @ a)


def radius_adjacency(points: np.ndarray, radius: float, tree: cKDTree | None = None) -> SparseAdjacency:
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    n = len(points)
    tree = tree if tree is not None else cKDTree(points)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    m = sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n, n))
    m.sort_indices()
    return SparseAdjacency(m, float(radius))


def build_adjacency(
    geometry: CellGeometry, radius_small: float, radius_large: float
) -> tuple[SparseAdjacency, SparseAdjacency]:
    if not (radius_small > 0 and radius_large > 0):
        raise ValueError("radii must be positive")
    if radius_small > radius_large:
        raise ValueError(f"radius_small {radius_small} exceeds radius_large {radius_large}")
    tree = cKDTree(geometry.centroids)
    small = radius_adjacency(geometry.centroids, radius_small, tree)
    if radius_large == radius_small:
        return small, small
    return small, radius_adjacency(geometry.centroids, radius_large, tree)


def default_radii(
    geometry: CellGeometry,
    small_fraction: float = RADIUS_SMALL_FRACTION,
    large_fraction: float = RADIUS_LARGE_FRACTION,
) -> tuple[float, float]:
    d = geometry.diagonal
    return small_fraction * d, large_fraction * d
