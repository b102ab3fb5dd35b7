"""Parametric labeled dental arches.

The gum is a half-annulus band (label 0) tessellated on a regular
(arch angle, radial offset) grid; each tooth is an ellipsoidal bump on the
band whose footprint cells carry labels 1..n in arch order. Nothing here
aims at anatomical realism, only at exact, free ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .io import LabelField
from .mesh import TriangleMesh, face_adjacency

ARCH_RADIUS = 25.0
BAND_WIDTH = 10.0


@dataclass(frozen=True)
class ArchSpec:
    n_teeth: int = 14
    target_cells: int = 10_000
    jaw: str = "mandible"
    missing_teeth: frozenset = field(default_factory=frozenset)
    seed: int = 0

    def validate(self) -> None:
        if not 1 <= self.n_teeth <= 14:
            raise ValueError(f"n_teeth must be in [1, 14], got {self.n_teeth}")
        if self.target_cells < 100:
            raise ValueError(f"target_cells must be >= 100, got {self.target_cells}")
        if self.jaw not in ("maxilla", "mandible"):
            raise ValueError(f"jaw must be 'maxilla' or 'mandible', got {self.jaw!r}")
        missing = set(self.missing_teeth)
        if any(not 0 <= m < self.n_teeth for m in missing):
            raise ValueError("missing_teeth indices must be in [0, n_teeth)")
        if self.n_teeth - len(missing) < 1:
            raise ValueError("at least one tooth must be present")


def _grid_shape(target: int, aspect: float) -> tuple[int, int]:
    """(segments along the arch, segments across) giving ~target cells."""
    m = max(1, int(round(np.sqrt(target / (2.0 * aspect)))))
    n = max(1, int(round(target / (2.0 * m))))
    return n, m


def _largest_component(mask: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(mask)
    if idx.size <= 1:
        return mask
    local = np.full(mask.size, -1)
    local[idx] = np.arange(idx.size)
    keep = mask[pairs[:, 0]] & mask[pairs[:, 1]]
    p = local[pairs[keep]]
    g = coo_matrix((np.ones(len(p)), (p[:, 0], p[:, 1])), shape=(idx.size, idx.size))
    n_comp, comp = connected_components(g, directed=False)
    if n_comp == 1:
        return mask
    sizes = np.bincount(comp)
    best = int(np.argmax(sizes))  # first largest, deterministic
    out = np.zeros_like(mask)
    out[idx[comp == best]] = True
    return out


def generate(spec: ArchSpec) -> tuple[TriangleMesh, LabelField]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    radius = ARCH_RADIUS * rng.uniform(0.92, 1.08)
    width = BAND_WIDTH * rng.uniform(0.9, 1.1)
    arc = np.pi * radius
    n_seg, m_seg = _grid_shape(spec.target_cells, arc / width)

    theta = np.linspace(0.0, np.pi, n_seg + 1)
    offset = np.linspace(-0.5 * width, 0.5 * width, m_seg + 1)
    T, R = np.meshgrid(theta, offset, indexing="ij")
    s = T * radius  # arc-length coordinate

    # gum: a low ridge across the band
    u = 2.0 * R / width
    z = 2.0 * (1.0 - u * u)

    # tooth slots along the arch, leaving a margin at both ends
    margin = 0.04 * arc
    slot = (arc - 2 * margin) / spec.n_teeth
    centers_s = margin + slot * (np.arange(spec.n_teeth) + 0.5)
    half_len = 0.40 * slot * rng.uniform(0.9, 1.1, spec.n_teeth)
    half_wid = 0.28 * width * rng.uniform(0.9, 1.1, spec.n_teeth)
    center_r = 0.05 * width * rng.uniform(-1.0, 1.0, spec.n_teeth)
    height = np.clip(1.6 * half_len, 2.0, 6.0) * rng.uniform(0.9, 1.1, spec.n_teeth)
    present = [k for k in range(spec.n_teeth) if k not in set(spec.missing_teeth)]

    for k in present:
        rho2 = ((s - centers_s[k]) / half_len[k]) ** 2 + ((R - center_r[k]) / half_wid[k]) ** 2
        z = z + height[k] * np.sqrt(np.clip(1.0 - rho2, 0.0, None))

    xr = (radius + R) * np.cos(T)
    yr = (radius + R) * np.sin(T)
    verts = np.stack([xr, yr, z], axis=-1).reshape(-1, 3)

    vid = np.arange((n_seg + 1) * (m_seg + 1)).reshape(n_seg + 1, m_seg + 1)
    p00 = vid[:-1, :-1].ravel()
    p01 = vid[:-1, 1:].ravel()
    p10 = vid[1:, :-1].ravel()
    p11 = vid[1:, 1:].ravel()
    # radial x tangent points +z for the mandible
    tri_a = np.stack([p00, p01, p10], axis=1)
    tri_b = np.stack([p01, p11, p10], axis=1)
    faces = np.stack([tri_a, tri_b], axis=1).reshape(-1, 3)

    cs = s.ravel()[faces].mean(axis=1)
    cr = R.ravel()[faces].mean(axis=1)
    labels = np.zeros(len(faces), dtype=np.int64)
    pairs = face_adjacency(faces)
    for k in present:
        rho2 = ((cs - centers_s[k]) / half_len[k]) ** 2 + ((cr - center_r[k]) / half_wid[k]) ** 2
        mask = _largest_component(rho2 < 1.0, pairs)
        if not mask.any():
            raise ValueError(
                f"target_cells={spec.target_cells} too coarse to resolve tooth {k} "
                f"of {spec.n_teeth}"
            )
        labels[mask] = k + 1

    if spec.jaw == "maxilla":
        verts = verts * np.array([1.0, 1.0, -1.0])
        faces = faces[:, [0, 2, 1]]
    return TriangleMesh(verts, faces), LabelField(labels)
