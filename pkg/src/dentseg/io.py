"""STL/OBJ readers and writers plus the JSON label sidecar."""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import TriangleMesh, face_normals

log = logging.getLogger(__name__)

N_CLASSES = 15
MAX_LABEL = N_CLASSES - 1
SIDECAR_VERSION = 1

_STL_HEADER = b"dentseg binary STL".ljust(80, b" ")
_STL_RECORD = np.dtype(
    [("normal", "<f4", (3,)), ("corners", "<f4", (3, 3)), ("attr", "<u2")]
)
assert _STL_RECORD.itemsize == 50


class MeshParseError(ValueError):
    pass


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelField:
    labels: np.ndarray  # (N,) int64 in [0, 14]

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def check(self, n_cells: int | None = None) -> None:
        if n_cells is not None and len(self) != n_cells:
            raise LabelError(f"label count {len(self)} does not match cell count {n_cells}")
        if len(self) and (self.labels.min() < 0 or self.labels.max() > MAX_LABEL):
            raise LabelError("labels must lie in [0, 14]")


def clip_labels(raw) -> np.ndarray:
    """Map every class index above 14 onto 14; negatives are rejected."""
    raw = np.asarray(raw, dtype=np.int64).reshape(-1)
    neg = np.flatnonzero(raw < 0)
    if neg.size:
        raise LabelError(f"negative label {int(raw[neg[0]])} at cell index {int(neg[0])}")
    return np.minimum(raw, MAX_LABEL)


# ---------------------------------------------------------------- sidecar


def write_labels(labels: LabelField | np.ndarray, path) -> None:
    lab = labels.labels if isinstance(labels, LabelField) else np.asarray(labels, dtype=np.int64)
    doc = {
        "format_version": SIDECAR_VERSION,
        "cell_count": int(lab.shape[0]),
        "labels": [int(v) for v in lab],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def read_labels(path, n_cells: int | None = None) -> LabelField:
    doc = json.loads(Path(path).read_text())
    try:
        version = int(doc["format_version"])
        count = int(doc["cell_count"])
        raw = doc["labels"]
    except (KeyError, TypeError) as exc:
        raise LabelError(f"{path}: malformed label sidecar ({exc})") from None
    if version != SIDECAR_VERSION:
        raise LabelError(f"{path}: unsupported sidecar version {version}")
    if count != len(raw):
        raise LabelError(f"{path}: cell_count {count} but {len(raw)} labels")
    if n_cells is not None and count != n_cells:
        raise LabelError(f"{path}: sidecar has {count} cells, mesh has {n_cells}")
    return LabelField(clip_labels(raw))


def sidecar_path(mesh_path) -> Path:
    p = Path(mesh_path)
    return p.with_name(p.stem + ".labels.json")


# ---------------------------------------------------------------- meshes


def _weld(corners: np.ndarray) -> TriangleMesh:
    """Weld an (N, 3, 3) triangle soup by exact coordinate equality.

    Vertices come out in order of first appearance.
    """
    flat = np.ascontiguousarray(corners.reshape(-1, 3))
    _, first, inverse = np.unique(flat, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # renumber unique rows by first occurrence
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    verts = flat[first[order]].astype(np.float64)
    faces = rank[inverse].reshape(-1, 3)
    return TriangleMesh(verts, faces)


def _read_stl_binary(data: bytes, path) -> TriangleMesh:
    if len(data) < 84:
        raise MeshParseError(f"{path}: truncated binary STL header at byte offset {len(data)}")
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        complete = (len(data) - 84) // 50
        raise MeshParseError(
            f"{path}: declared {count} facets but file ends at byte offset {len(data)} "
            f"(facet {complete} starts at offset {84 + 50 * complete}, need {need} bytes)"
        )
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    return _weld(rec["corners"].astype(np.float64))


def _read_stl_ascii(text: str, path) -> TriangleMesh:
    corners = []
    facet = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        key = tok[0].lower()
        if key == "vertex":
            if len(tok) != 4:
                raise MeshParseError(f"{path}:{lineno}: expected 3 coordinates after 'vertex'")
            try:
                facet.append([float(t) for t in tok[1:]])
            except ValueError:
                raise MeshParseError(f"{path}:{lineno}: non-numeric coordinate in {line.strip()!r}") from None
        elif key == "endfacet":
            if len(facet) != 3:
                raise MeshParseError(f"{path}:{lineno}: facet with {len(facet)} vertices")
            corners.append(facet)
            facet = []
        elif key not in ("solid", "facet", "outer", "endloop", "endsolid"):
            raise MeshParseError(f"{path}:{lineno}: unexpected token {tok[0]!r}")
    if facet:
        raise MeshParseError(f"{path}: unterminated facet at end of file")
    arr = np.asarray(corners, dtype=np.float64).reshape(-1, 3, 3)
    return _weld(arr)


def _looks_ascii_stl(data: bytes) -> bool:
    if not data.lstrip().startswith(b"solid"):
        return False
    head = data[:4096]
    try:
        head.decode("ascii")
    except UnicodeDecodeError:
        return False
    # binary exporters sometimes write "solid" in the 80-byte header
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count and b"facet" not in head:
            return False
    return b"facet" in head or b"endsolid" in head


def _read_obj(text: str, path) -> TriangleMesh:
    verts: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    fanned = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            try:
                verts.append([float(t) for t in tok[1:4]])
            except ValueError:
                raise MeshParseError(f"{path}:{lineno}: non-numeric coordinate in {line.strip()!r}") from None
            if len(verts[-1]) != 3:
                raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
        elif tok[0] == "f":
            idx = []
            for t in tok[1:]:
                try:
                    i = int(t.split("/")[0])
                except ValueError:
                    raise MeshParseError(f"{path}:{lineno}: bad face index {t!r}") from None
                idx.append(i - 1 if i > 0 else len(verts) + i)
            if len(idx) < 3:
                raise MeshParseError(f"{path}:{lineno}: face with fewer than 3 vertices")
            if len(idx) > 3:
                fanned += 1
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
    if fanned:
        log.warning("%s: fan-triangulated %d polygon faces", path, fanned)
    mesh = TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3),
                        np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    if mesh.n_cells and (mesh.faces.min() < 0 or mesh.faces.max() >= mesh.n_vertices):
        raise MeshParseError(f"{path}: face index out of range")
    return mesh


def sniff_format(path, data: bytes | None = None) -> str:
    if str(path).lower().endswith(".obj"):
        return "obj"
    if data is None:
        data = Path(path).read_bytes()
    return "stl_ascii" if _looks_ascii_stl(data) else "stl_binary"


def read_mesh(path, format: str = "auto") -> TriangleMesh:
    data = Path(path).read_bytes()
    if format == "auto":
        format = sniff_format(path, data)
    if format == "stl_binary":
        return _read_stl_binary(data, path)
    if format == "stl_ascii":
        return _read_stl_ascii(data.decode("ascii", errors="replace"), path)
    if format == "obj":
        return _read_obj(data.decode("utf-8", errors="replace"), path)
    raise ValueError(f"unknown mesh format {format!r}")


def write_mesh(mesh: TriangleMesh, path, format: str = "stl_binary") -> None:
    if format == "auto":
        format = "obj" if str(path).lower().endswith(".obj") else "stl_binary"
    corners = mesh.corners()
    if format == "stl_binary":
        rec = np.zeros(mesh.n_cells, dtype=_STL_RECORD)
        normals, _ = face_normals(corners)
        rec["normal"] = normals
        rec["corners"] = corners
        with open(path, "wb") as fh:
            fh.write(_STL_HEADER)
            fh.write(struct.pack("<I", mesh.n_cells))
            fh.write(rec.tobytes())
    elif format == "stl_ascii":
        normals, _ = face_normals(corners)
        lines = ["solid dentseg"]
        for n, tri in zip(normals.tolist(), corners.tolist()):
            lines.append(f"  facet normal {n[0]!r} {n[1]!r} {n[2]!r}")
            lines.append("    outer loop")
            for p in tri:
                lines.append(f"      vertex {p[0]!r} {p[1]!r} {p[2]!r}")
            lines.append("    endloop")
            lines.append("  endfacet")
        lines.append("endsolid dentseg")
        Path(path).write_text("\n".join(lines) + "\n")
    elif format == "obj":
        out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
        Path(path).write_text("\n".join(out) + "\n")
    else:
        raise ValueError(f"unknown mesh format {format!r}")


def ensure_parent(path) -> Path:
    p = Path(path)
    if p.parent and not p.parent.exists():
        os.makedirs(p.parent, exist_ok=True)
    return p
