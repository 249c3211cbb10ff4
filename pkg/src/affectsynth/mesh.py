"""Triangle meshes, per-vertex deformation fields, and their algebra.

All meshes belonging to one gallery share a single vertex numbering and
face list (dense correspondence), which is what makes the vertexwise
add/subtract operations below meaningful.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data (bad indices, non-finite coordinates, ...)."""


class ObjParseError(MeshError):
    """Malformed OBJ input."""


class TopologyMismatchError(MeshError):
    """Two meshes that were expected to share topology do not."""


@dataclass(frozen=True)
class Mesh:
    """Fixed-topology triangle mesh.

    vertices: (n, 3) float64, model units.
    faces: (f, 3) int64 vertex-index triples.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (f, 3), got {f.shape}")
        if not np.isfinite(v).all():
            raise MeshError("vertex coordinates must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n(self) -> int:
        return len(self.vertices)

    def same_topology(self, other: "Mesh") -> bool:
        return self.n == other.n and np.array_equal(self.faces, other.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """New mesh with replaced coordinates but identical connectivity."""
        return Mesh(vertices, self.faces)


@dataclass(frozen=True)
class DeformationField:
    """Per-vertex 3D displacement, stored as a flat (3n,) vector.

    Layout is vertex-major: entries 3i..3i+2 are the x, y, z displacement
    of vertex i.
    """

    displacements: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.displacements, dtype=np.float64)).ravel()
        if d.size % 3 != 0:
            raise MeshError(f"displacement length {d.size} is not a multiple of 3")
        if not np.isfinite(d).all():
            raise MeshError("displacements must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "displacements", d)

    @property
    def n(self) -> int:
        return self.displacements.size // 3

    def per_vertex(self) -> np.ndarray:
        """View as (n, 3)."""
        return self.displacements.reshape(-1, 3)

    def scaled(self, alpha: float) -> "DeformationField":
        return DeformationField(self.displacements * float(alpha))


@dataclass(frozen=True)
class LandmarkSet:
    """2D pixel positions paired with the mesh vertices they correspond to."""

    points2d: np.ndarray  # (L, 2) pixels
    indices: np.ndarray  # (L,) vertex indices

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.points2d, dtype=np.float64))
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64)).ravel()
        if p.ndim != 2 or p.shape[1] != 2:
            raise MeshError(f"points2d must be (L, 2), got {p.shape}")
        if len(p) != len(idx):
            raise MeshError("points2d and indices length mismatch")
        if len(idx) < 6:
            raise MeshError(f"need at least 6 landmarks, got {len(idx)}")
        if len(np.unique(idx)) != len(idx):
            raise MeshError("landmark vertex indices must be unique")
        if idx.min() < 0:
            raise MeshError("landmark vertex index out of range")
        p.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "points2d", p)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)


def diff(expressive: Mesh, neutral: Mesh) -> DeformationField:
    """Per-vertex displacement taking `neutral` to `expressive`."""
    if not expressive.same_topology(neutral):
        raise TopologyMismatchError(
            f"cannot diff meshes with different topology "
            f"({expressive.n} vs {neutral.n} vertices)"
        )
    return DeformationField((expressive.vertices - neutral.vertices).ravel())


def apply(base: Mesh, fld: DeformationField) -> Mesh:
    """Displace every vertex of `base` by `fld`; connectivity is unchanged."""
    if fld.n != base.n:
        raise TopologyMismatchError(
            f"field covers {fld.n} vertices but mesh has {base.n}"
        )
    return base.with_vertices(base.vertices + fld.per_vertex())


# ---------------------------------------------------------------------------
# OBJ subset IO: `v x y z` and triangular `f a b c` records only.
# `f` entries may carry /vt/vn suffixes, which are ignored; normals and
# texture coordinate records are skipped on read and never written.

def load_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError as exc:
                    raise ObjParseError(f"{path}:{lineno}: bad coordinate: {exc}") from exc
            elif tag == "f":
                if len(parts) != 4:
                    raise ObjParseError(
                        f"{path}:{lineno}: only triangular faces are supported "
                        f"(got {len(parts) - 1} corners)"
                    )
                corners = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        idx = int(head)
                    except ValueError as exc:
                        raise ObjParseError(f"{path}:{lineno}: bad face index {head!r}") from exc
                    if idx <= 0:
                        raise ObjParseError(
                            f"{path}:{lineno}: face indices are 1-based and positive, got {idx}"
                        )
                    corners.append(idx - 1)
                faces.append(tuple(corners))
            elif tag in ("vn", "vt", "g", "o", "s", "usemtl", "mtllib"):
                continue
            else:
                raise ObjParseError(f"{path}:{lineno}: unsupported record {tag!r}")
    if not vertices:
        raise ObjParseError(f"{path}: no vertices")
    n = len(vertices)
    for a, b, c in faces:
        if max(a, b, c) >= n:
            raise ObjParseError(f"{path}: face index {max(a, b, c) + 1} exceeds vertex count {n}")
    try:
        return Mesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except MeshError as exc:
        raise ObjParseError(f"{path}: {exc}") from exc


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    """Write the OBJ subset; coordinates carry 6 decimal digits."""
    path = Path(path)
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f}")
    for a, b, c in mesh.faces:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_landmarks(text: str, origin: str = "<landmarks>") -> LandmarkSet:
    """Landmark CSV content: header `vertex_index,x_px,y_px`."""
    points = []
    indices = []
    reader = csv.DictReader(text.splitlines())
    expected = ["vertex_index", "x_px", "y_px"]
    if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != expected:
        raise MeshError(
            f"{origin}: landmark CSV header must be {','.join(expected)}, "
            f"got {reader.fieldnames}"
        )
    for row in reader:
        indices.append(int(row["vertex_index"]))
        points.append((float(row["x_px"]), float(row["y_px"])))
    return LandmarkSet(np.array(points, dtype=np.float64), np.array(indices, dtype=np.int64))


def load_landmarks(path: str | Path) -> LandmarkSet:
    path = Path(path)
    return parse_landmarks(path.read_text(encoding="utf-8"), origin=str(path))


def save_landmarks(landmarks: LandmarkSet, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex_index", "x_px", "y_px"])
        for idx, (x, y) in zip(landmarks.indices, landmarks.points2d):
            writer.writerow([int(idx), f"{x:.6f}", f"{y:.6f}"])
