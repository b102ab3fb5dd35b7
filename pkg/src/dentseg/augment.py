"""Random rigid-plus-scale augmentation of labeled meshes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .io import LabelField
from .mesh import TriangleMesh, compute_cell_geometry


@dataclass(frozen=True)
class AugmentationSpec:
    rotation_range_deg: tuple[float, float] = (-15.0, 15.0)
    scale_range: tuple[float, float] = (0.8, 1.2)
    translation_range: tuple[float, float] = (-10.0, 10.0)
    factor: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.factor < 1:
            raise ValueError(f"augmentation factor must be >= 1, got {self.factor}")
        for name in ("rotation_range_deg", "scale_range", "translation_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")


@dataclass(frozen=True)
class Draw:
    """Parameters of one augmented variant, enough to replay it exactly."""

    source: int
    variant: int
    angles_deg: tuple[float, float, float]  # about x, y, z
    scale: float
    translation: tuple[float, float, float]
    center: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


def rotation_matrix(angles_deg) -> np.ndarray:
    """Rz @ Ry @ Rx for angles (x, y, z) in degrees."""
    ax, ay, az = np.radians(np.asarray(angles_deg, dtype=np.float64))
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def draw_transform(draw: Draw) -> tuple[np.ndarray, np.ndarray]:
    """Affine (matrix, offset): v -> matrix @ v + offset.

    Rotation and scale act about ``draw.center``; written in affine form so
    an identity draw reproduces the input bit for bit.
    """
    m = draw.scale * rotation_matrix(draw.angles_deg)
    c = np.asarray(draw.center)
    offset = c - m @ c + np.asarray(draw.translation)
    return m, offset


def apply_draw(mesh: TriangleMesh, draw: Draw) -> TriangleMesh:
    m, offset = draw_transform(draw)
    return mesh.transformed(m, offset)


def _variant_rng(seed: int, source: int, variant: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, source, variant]))


def sample_draw(spec: AugmentationSpec, source: int, variant: int, center) -> Draw:
    rng = _variant_rng(spec.seed, source, variant)
    lo, hi = spec.rotation_range_deg
    angles = rng.uniform(lo, hi, 3) if hi > lo else np.full(3, float(lo))
    lo, hi = spec.scale_range
    scale = rng.uniform(lo, hi) if hi > lo else float(lo)
    lo, hi = spec.translation_range
    shift = rng.uniform(lo, hi, 3) if hi > lo else np.full(3, float(lo))
    return Draw(
        source=source,
        variant=variant,
        angles_deg=tuple(float(a) for a in angles),
        scale=float(scale),
        translation=tuple(float(t) for t in shift),
        center=tuple(float(c) for c in center),
    )


def augment(
    mesh: TriangleMesh,
    labels: LabelField,
    spec: AugmentationSpec,
    source: int = 0,
) -> list[tuple[TriangleMesh, LabelField, Draw]]:
    """``spec.factor`` transformed copies of one labeled mesh.

    Each variant draws from its own stream keyed by (seed, source, variant),
    so generating variants in any order or in parallel gives the same set.
    """
    spec.validate()
    labels.check(mesh.n_cells)
    center = compute_cell_geometry(mesh).mesh_centroid
    out = []
    for i in range(spec.factor):
        d = sample_draw(spec, source, i, center)
        out.append((apply_draw(mesh, d), LabelField(labels.labels.copy()), d))
    return out


def augment_dataset(samples, spec: AugmentationSpec):
    out = []
    for src, (mesh, labels) in enumerate(samples):
        out.extend(augment(mesh, labels, spec, source=src))
    return out
