"""Multi-label graph-cut refinement of per-cell posteriors.

Energy over the face-adjacency graph::

    E(l) = sum_i U[i, l_i] + lam * sum_(i,j) w_ij [l_i != l_j]

with U = -log(max(p, 1e-12)) shifted so each row's minimum is 0 and
w_ij = exp(-theta_ij / sigma), theta_ij the angle between the two cell
normals. Minimised by alpha-expansion from the argmax labeling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..io import LabelField, N_CLASSES
from ..mesh import CellGeometry, TriangleMesh, face_adjacency
from .maxflow import FlowNetwork

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
DEFAULT_LAMBDA = 1.0
DEFAULT_SIGMA = 0.5
MAX_SWEEPS = 50


@dataclass(frozen=True)
class MrfProblem:
    unary: np.ndarray  # (N, L)
    pairs: np.ndarray  # (M, 2), i < j, unique
    weights: np.ndarray  # (M,)
    lam: float

    def energy(self, labels: np.ndarray) -> float:
        labels = np.asarray(labels)
        u = self.unary[np.arange(labels.size), labels].sum()
        if len(self.pairs) == 0 or self.lam == 0:
            return float(u)
        cut = labels[self.pairs[:, 0]] != labels[self.pairs[:, 1]]
        return float(u + self.lam * self.weights[cut].sum())


def unary_costs(prob: np.ndarray) -> np.ndarray:
    u = -np.log(np.maximum(np.asarray(prob, dtype=np.float64), PROB_FLOOR))
    return u - u.min(axis=1, keepdims=True)


def crease_weights(normals: np.ndarray, pairs: np.ndarray, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    cos = np.einsum("ij,ij->i", normals[pairs[:, 0]], normals[pairs[:, 1]])
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    return np.exp(-theta / sigma)


def build_problem(
    prob: np.ndarray,
    mesh: TriangleMesh,
    geometry: CellGeometry,
    lam: float = DEFAULT_LAMBDA,
    sigma: float = DEFAULT_SIGMA,
) -> MrfProblem:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    prob = np.asarray(prob)
    if prob.shape[0] != mesh.n_cells:
        raise ValueError(f"{prob.shape[0]} probability rows for {mesh.n_cells} cells")
    pairs = face_adjacency(mesh.faces)
    return MrfProblem(unary_costs(prob), pairs, crease_weights(geometry.normals, pairs, sigma), float(lam))


class _ExpansionGraph:
    """s-t network for one expansion move; topology shared across labels."""

    def __init__(self, n: int, pairs: np.ndarray):
        self.n = n
        self.s, self.t = n, n + 1
        nodes = np.arange(n)
        tail = np.concatenate([np.full(n, self.s), nodes, pairs[:, 0]])
        head = np.concatenate([nodes, np.full(n, self.t), pairs[:, 1]])
        self.net = FlowNetwork(n + 2, tail, head)

    def move(self, problem: MrfProblem, labels: np.ndarray, alpha: int) -> np.ndarray:
        """Labels after the optimal alpha-expansion of ``labels``."""
        n = self.n
        u = problem.unary
        cost0 = u[np.arange(n), labels].copy()  # keep current label
        cost1 = u[:, alpha].copy()  # switch to alpha
        i, j = problem.pairs[:, 0], problem.pairs[:, 1]
        w = problem.lam * problem.weights
        li, lj = labels[i], labels[j]
        A = w * (li != lj)
        B = w * (li != alpha)
        C = w * (alpha != lj)
        # E_ij = A + (C - A) x_i + (0 - C) x_j + (B + C - A) (1 - x_i) x_j
        np.add.at(cost1, i, C - A)
        np.add.at(cost1, j, -C)
        pair_cap = np.maximum(B + C - A, 0.0)
        base = np.minimum(cost0, cost1)
        caps = np.concatenate([cost1 - base, cost0 - base, pair_cap])
        _, source = self.net.solve(self.s, self.t, caps)
        out = labels.copy()
        out[~source[:n]] = alpha
        return out


def expand(problem: MrfProblem, init: np.ndarray | None = None) -> np.ndarray:
    """Alpha-expansion: sweep alpha = 0..L-1 until a sweep lowers nothing."""
    n, n_labels = problem.unary.shape
    labels = problem.unary.argmin(axis=1) if init is None else np.asarray(init).copy()
    if problem.lam == 0 or len(problem.pairs) == 0 or not problem.weights.any():
        return labels
    graph = _ExpansionGraph(n, problem.pairs)
    energy = problem.energy(labels)
    for sweep in range(MAX_SWEEPS):
        improved = False
        for alpha in range(n_labels):
            cand = graph.move(problem, labels, alpha)
            e = problem.energy(cand)
            if e < energy - 1e-12 * max(1.0, abs(energy)):
                labels, energy = cand, e
                improved = True
        if not improved:
            break
    else:
        log.warning("alpha-expansion stopped after %d sweeps", MAX_SWEEPS)
    return labels


def refine(
    prob: np.ndarray,
    mesh: TriangleMesh,
    geometry: CellGeometry,
    lam: float = DEFAULT_LAMBDA,
    sigma: float = DEFAULT_SIGMA,
) -> LabelField:
    problem = build_problem(prob, mesh, geometry, lam, sigma)
    if problem.unary.shape[1] != N_CLASSES:
        log.debug("refining over %d labels", problem.unary.shape[1])
    return LabelField(expand(problem))
