"""Gallery ingestion, per-cell model building, and mesh synthesis.

build_gallery caches its outputs under a digest of every input byte plus
the solver configuration, so unchanged inputs are never recomputed and
rebuilds are byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blendshape import (
    DeformationMatrix,
    SolverConfig,
    SplocsModel,
    fit_splocs,
    synthesize as synthesize_field,
)
from .mesh import DeformationField, Mesh, apply, diff, load_mesh
from .modelio import load_splocs_model, save_splocs_model
from .vagrid import (
    AnnotationSet,
    CellIndex,
    VaGrid,
    build_grid,
    cell_of,
    load_annotations,
)

logger = logging.getLogger(__name__)

CACHE_FORMAT = 1


class GalleryError(ValueError):
    """Unusable gallery inputs (missing files, inconsistent topology)."""


@dataclass(frozen=True)
class GalleryManifest:
    """Paths tying a gallery together; relative entries resolve against
    the manifest file's directory."""

    mesh_dir: Path
    annotations: Path
    template: Path
    cache_dir: Path
    subjects: Path | None = None
    morphable_model: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> "GalleryManifest":
        import sys

        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib

        path = Path(path)
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        required = {"mesh_dir", "annotations", "template", "cache_dir"}
        missing = required - set(doc)
        if missing:
            raise GalleryError(f"{path}: manifest missing keys {sorted(missing)}")
        base = path.parent

        def resolve(key):
            if key not in doc:
                return None
            return (base / doc[key]).resolve()

        manifest = cls(
            mesh_dir=resolve("mesh_dir"),
            annotations=resolve("annotations"),
            template=resolve("template"),
            cache_dir=resolve("cache_dir"),
            subjects=resolve("subjects"),
            morphable_model=resolve("morphable_model"),
        )
        for name, p in (
            ("mesh_dir", manifest.mesh_dir),
            ("annotations", manifest.annotations),
            ("template", manifest.template),
        ):
            if not p.exists():
                raise GalleryError(f"{path}: {name} {p} does not exist")
        if manifest.subjects is not None and not manifest.subjects.exists():
            raise GalleryError(f"{path}: subjects file {manifest.subjects} does not exist")
        if manifest.morphable_model is not None and not manifest.morphable_model.exists():
            raise GalleryError(
                f"{path}: morphable model {manifest.morphable_model} does not exist"
            )
        return manifest


def load_subjects(path: str | Path) -> dict[str, str]:
    """subjects CSV: header frame_id,subject_id."""
    import csv

    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != [
            "frame_id",
            "subject_id",
        ]:
            raise GalleryError(f"{path}: header must be frame_id,subject_id")
        for row in reader:
            out[row["frame_id"]] = row["subject_id"]
    return out


@dataclass
class LoadedGallery:
    """Everything read off disk, topology-checked against the template."""

    template: Mesh
    annotations: AnnotationSet
    grid: VaGrid
    meshes: dict[str, Mesh]
    subject_of: dict[str, str]

    def field_of(self, frame_id: str) -> DeformationField:
        ann = self.annotations[frame_id]
        return diff(self.meshes[frame_id], self.meshes[ann.neutral_frame_id])


def load_gallery(manifest: GalleryManifest) -> LoadedGallery:
    template = load_mesh(manifest.template)
    annotations = load_annotations(manifest.annotations)
    if len(annotations) == 0:
        raise GalleryError("gallery has no annotated frames")
    meshes: dict[str, Mesh] = {}
    for ann in annotations:
        mesh_path = manifest.mesh_dir / f"{ann.frame_id}.obj"
        if not mesh_path.exists():
            raise GalleryError(f"mesh for frame {ann.frame_id!r} missing: {mesh_path}")
        mesh = load_mesh(mesh_path)
        if not mesh.same_topology(template):
            raise GalleryError(
                f"{mesh_path}: topology differs from the template "
                f"({mesh.n} vs {template.n} vertices)"
            )
        meshes[ann.frame_id] = mesh
    if manifest.subjects is not None:
        subject_of = load_subjects(manifest.subjects)
        missing = [a.frame_id for a in annotations if a.frame_id not in subject_of]
        if missing:
            raise GalleryError(f"subjects file missing {len(missing)} frames, e.g. {missing[0]}")
    else:
        # conservative fallback: treat every sequence as its own subject
        subject_of = {a.frame_id: a.sequence_id for a in annotations}
    return LoadedGallery(
        template=template,
        annotations=annotations,
        grid=build_grid(annotations),
        meshes=meshes,
        subject_of=subject_of,
    )


def _input_digest(manifest: GalleryManifest, solver: SolverConfig) -> str:
    hasher = hashlib.sha256()
    hasher.update(b"affectsynth-gallery-v%d\n" % CACHE_FORMAT)
    hasher.update(json.dumps(dataclasses.asdict(solver), sort_keys=True).encode())
    for path in (manifest.annotations, manifest.template):
        hasher.update(path.read_bytes())
    for mesh_path in sorted(manifest.mesh_dir.glob("*.obj")):
        hasher.update(mesh_path.name.encode())
        hasher.update(mesh_path.read_bytes())
    return hasher.hexdigest()[:16]


class GalleryCache:
    """Built gallery artifacts: the grid, per-cell mean deformations, and
    per-cell component models (loaded lazily)."""

    def __init__(self, root: Path):
        self.root = Path(root)
        info_path = self.root / "grid.json"
        if not info_path.exists():
            raise GalleryError(f"{self.root} is not a built gallery cache")
        info = json.loads(info_path.read_text(encoding="utf-8"))
        if info.get("format") != CACHE_FORMAT:
            raise GalleryError(f"{self.root}: unsupported cache format")
        self.histogram = np.array(info["histogram"], dtype=np.int64)
        self.medians = {
            _parse_cell_key(key): tuple(value) for key, value in info["medians"].items()
        }
        self.template = load_mesh(self.root / "template.obj")
        annotations = load_annotations(self.root / "annotations.csv")
        self.grid = build_grid(annotations)
        self._means = np.load(self.root / "means.npz")
        self._models: dict[CellIndex, SplocsModel] = {}

    def mean_deformation(self, cell: CellIndex) -> DeformationField:
        key = _cell_key(cell)
        if key not in self._means:
            raise GalleryError(f"cell ({cell.row}, {cell.col}) has no built mean")
        return DeformationField(self._means[key])

    def cell_model(self, cell: CellIndex) -> SplocsModel:
        if cell not in self._models:
            path = self.root / f"cell_{_cell_key(cell)}.npz"
            if not path.exists():
                raise GalleryError(f"cell ({cell.row}, {cell.col}) has no built model")
            self._models[cell] = load_splocs_model(path)
        return self._models[cell]

    def resolve_cell(self, valence: float, arousal: float) -> CellIndex:
        """Cell for the request, falling back to the nearest populated one."""
        return self.grid.nearest_nonempty_cell(cell_of(valence, arousal))

    def synthesize_mesh(
        self,
        valence: float,
        arousal: float,
        intensity: float = 1.0,
        weights: np.ndarray | None = None,
    ) -> tuple[Mesh, CellIndex, tuple[float, float]]:
        """Expressive template-topology mesh for the target affect.

        Uses the cell's mean deformation, or the cell component model when
        explicit weights are given. Returns (mesh, cell, median va)."""
        cell = self.resolve_cell(valence, arousal)
        if weights is None:
            fld = self.mean_deformation(cell)
        else:
            fld = synthesize_field(self.cell_model(cell), weights)
        if intensity != 1.0:
            fld = fld.scaled(intensity)
        mesh = apply(self.template, fld)
        return mesh, cell, self.medians[cell]


def _cell_key(cell: CellIndex) -> str:
    return f"r{cell.row}c{cell.col}"


def _parse_cell_key(key: str) -> CellIndex:
    row, col = key[1:].split("c")
    return CellIndex(int(row), int(col))


def build_gallery(
    manifest: GalleryManifest, solver: SolverConfig, force: bool = False
) -> GalleryCache:
    """Fit per-cell means and component models, or reuse the cached build."""
    digest = _input_digest(manifest, solver)
    target = manifest.cache_dir / digest
    marker = target / "grid.json"
    if marker.exists() and not force:
        logger.info("gallery cache hit: %s", target)
        return GalleryCache(target)

    gallery = load_gallery(manifest)
    grid = gallery.grid
    target.mkdir(parents=True, exist_ok=True)

    means: dict[str, np.ndarray] = {}
    medians: dict[str, tuple[float, float]] = {}
    for cell in grid.nonempty_cells():
        ids = grid.frame_ids(cell)
        fields = [gallery.field_of(f) for f in ids]
        stack = np.stack([f.displacements for f in fields], axis=1)
        means[_cell_key(cell)] = stack.mean(axis=1)
        medians[_cell_key(cell)] = grid.median_va(cell)

        d_cell = DeformationMatrix(stack)
        h_cell = min(solver.h, d_cell.m, d_cell.D.shape[0])
        cfg = dataclasses.replace(solver, h=h_cell)
        model = fit_splocs(d_cell, gallery.template, cfg)
        save_splocs_model(model, target / f"cell_{_cell_key(cell)}.npz")
        logger.info(
            "cell (%d, %d): %d frames, %d components, objective %.4g",
            cell.row,
            cell.col,
            len(ids),
            h_cell,
            model.objective_history[-1],
        )

    np.savez(target / "means.npz", **means)
    shutil.copyfile(manifest.template, target / "template.obj")
    shutil.copyfile(manifest.annotations, target / "annotations.csv")
    info = {
        "format": CACHE_FORMAT,
        "digest": digest,
        "solver": dataclasses.asdict(solver),
        "histogram": grid.histogram().tolist(),
        "medians": {key: list(value) for key, value in sorted(medians.items())},
    }
    (target / "grid.json").write_text(
        json.dumps(info, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return GalleryCache(target)
