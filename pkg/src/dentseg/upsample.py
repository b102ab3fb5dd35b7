"""Label transfer from a coarse mesh to a fine one by k-NN vote."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .io import LabelField
from .mesh import CellGeometry

DEFAULT_K = 3
CELL_CEILING = 100_000


@dataclass(frozen=True)
class TransferSpec:
    k: int = DEFAULT_K
    cell_ceiling: int = CELL_CEILING

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.cell_ceiling < 1:
            raise ValueError(f"cell ceiling must be >= 1, got {self.cell_ceiling}")


class CeilingError(ValueError):
    pass


def nearest_k(coarse: np.ndarray, fine: np.ndarray, k: int, tree: cKDTree | None = None) -> np.ndarray:
    """Indices of the k nearest coarse points for every fine point.

    Rows are ordered by (squared distance, coarse index), so distance ties
    go to the lower index.
    """
    m = len(coarse)
    tree = tree if tree is not None else cKDTree(coarse)
    extra = min(m, k + 4)
    _, cand = tree.query(fine, k=extra)
    cand = np.asarray(cand).reshape(len(fine), extra)
    d2 = ((coarse[cand] - fine[:, None, :]) ** 2).sum(axis=2)
    # sort by index, then stably by distance
    by_idx = np.argsort(cand, axis=1, kind="stable")
    cand = np.take_along_axis(cand, by_idx, 1)
    d2 = np.take_along_axis(d2, by_idx, 1)
    by_d = np.argsort(d2, axis=1, kind="stable")
    cand = np.take_along_axis(cand, by_d, 1)
    d2 = np.take_along_axis(d2, by_d, 1)
    out = cand[:, :k].copy()
    if extra < m:
        # a tie at the k-th distance may extend past the candidate window
        spill = d2[:, k - 1] >= d2[:, -1]
        for i in np.flatnonzero(spill):
            r = np.sqrt(d2[i, k - 1])
            near = np.asarray(tree.query_ball_point(fine[i], r * (1 + 1e-12) + 1e-300))
            dd = ((coarse[near] - fine[i]) ** 2).sum(axis=1)
            sel = np.lexsort((near, dd))[:k]
            out[i] = near[sel]
    return out


def vote(neighbor_labels: np.ndarray) -> np.ndarray:
    """Majority label per row; ties go to the class of the nearest tied neighbour.

    Rows of ``neighbor_labels`` are ordered nearest first.
    """
    n, k = neighbor_labels.shape
    if k == 1:
        return neighbor_labels[:, 0].copy()
    # count of each row entry's label within its row
    counts = (neighbor_labels[:, :, None] == neighbor_labels[:, None, :]).sum(axis=2)
    best = counts.max(axis=1, keepdims=True)
    first = np.argmax(counts == best, axis=1)  # nearest position among the winners
    return neighbor_labels[np.arange(n), first]


def knn_transfer(
    coarse_geom: CellGeometry,
    coarse_labels: LabelField,
    fine_geom: CellGeometry,
    spec: TransferSpec = TransferSpec(),
) -> LabelField:
    spec.validate()
    m = coarse_geom.n_cells
    n = fine_geom.n_cells
    if len(coarse_labels) != m:
        raise ValueError(f"{len(coarse_labels)} coarse labels for {m} coarse cells")
    if n > spec.cell_ceiling:
        raise CeilingError(
            f"target mesh has {n} cells, above the ceiling of {spec.cell_ceiling}; "
            "decimate the target mesh first"
        )
    if spec.k > m:
        raise ValueError(f"k = {spec.k} exceeds the {m} coarse cells")
    idx = nearest_k(coarse_geom.centroids, fine_geom.centroids, spec.k)
    return LabelField(vote(coarse_labels.labels[idx]))
