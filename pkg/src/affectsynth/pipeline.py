"""End-to-end image workflows: synthesize affect onto a photo, and batch
augmentation of a labeled dataset from its neutral frames."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import AppConfig
from .gallery import GalleryCache, GalleryError
from .images import Image, load_png, save_png
from .mesh import LandmarkSet, Mesh, load_landmarks
from .morphable import Camera, MorphableModel, fit_3dmm, vertex_normals
from .render import erode_mask, poisson_blend, rasterize
from .transfer import compute_delta, transfer
from .vagrid import CellIndex

logger = logging.getLogger(__name__)


class PipelineStageError(RuntimeError):
    """Failure attributed to a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass(frozen=True)
class SynthRequest:
    """A target affect plus optional photo to impose it on."""

    valence: float
    arousal: float
    intensity: float = 1.0
    image: Path | None = None
    landmarks: Path | None = None

    def __post_init__(self):
        if not (-1.0 <= self.valence <= 1.0):
            raise ValueError(f"valence {self.valence} outside [-1, 1]")
        if not (-1.0 <= self.arousal <= 1.0):
            raise ValueError(f"arousal {self.arousal} outside [-1, 1]")
        if not (0.0 <= self.intensity <= 1.5):
            raise ValueError(f"intensity {self.intensity} outside [0, 1.5]")


@dataclass(frozen=True)
class ProcessResult:
    image: Image
    cell: CellIndex
    median_va: tuple[float, float]
    reprojection_rmse: float
    timings: dict[str, float]


def _timed(timings: dict[str, float], stage: str):
    class _Timer:
        def __enter__(self):
            self.start = time.perf_counter()
            return self

        def __exit__(self, exc_type, exc, tb):
            timings[stage] = time.perf_counter() - self.start
            logger.info("stage %s: %.3f s", stage, timings[stage])
            return False

    return _Timer()


def process_image(
    request: SynthRequest,
    cache: GalleryCache,
    model: MorphableModel,
    cfg: AppConfig,
    image: Image | None = None,
    landmarks: LandmarkSet | None = None,
) -> ProcessResult:
    """Impose the requested affect on the photo.

    Stages: load inputs, reconstruct the face from landmarks, synthesize
    the target expression, carry its template-relative displacement onto
    the reconstruction, rasterize, and blend the render back into the
    photo. Pixels outside the blend region are returned untouched.
    """
    timings: dict[str, float] = {}

    if image is None:
        with _timed(timings, "load-image"):
            if request.image is None or not Path(request.image).exists():
                raise PipelineStageError("load-image", f"image file not found: {request.image}")
            image = load_png(request.image)
    if landmarks is None:
        with _timed(timings, "load-landmarks"):
            if request.landmarks is None or not Path(request.landmarks).exists():
                raise PipelineStageError(
                    "load-landmarks", f"landmark file not found: {request.landmarks}"
                )
            landmarks = load_landmarks(request.landmarks)

    with _timed(timings, "fit"):
        recon = fit_3dmm(image, landmarks, model, cfg.fit)

    with _timed(timings, "synthesize"):
        if not cache.template.same_topology(model.mean):
            raise PipelineStageError(
                "synthesize", "gallery template and morphable model topologies differ"
            )
        synthetic, cell, median = cache.synthesize_mesh(
            request.valence, request.arousal, intensity=1.0
        )
        delta = compute_delta(synthetic, cache.template)

    with _timed(timings, "transfer"):
        expressive = transfer(recon.mesh, delta, intensity=request.intensity)

    with _timed(timings, "rasterize"):
        render, coverage = rasterize(
            expressive,
            recon.camera,
            recon.vertex_colors,
            image.width,
            image.height,
            background=image,
        )

    with _timed(timings, "blend"):
        mask = erode_mask(coverage)
        if not mask.bitmap.any():
            raise PipelineStageError(
                "blend", "rendered face region too small to blend (empty mask)"
            )
        result = poisson_blend(render, image, mask)

    return ProcessResult(
        image=result,
        cell=cell,
        median_va=median,
        reprojection_rmse=recon.reprojection_rmse,
        timings=timings,
    )


def render_preview(mesh: Mesh, size: int = 256) -> Image:
    """Shaded standalone render of a mesh (used when no photo is given).

    Deterministic framing: the mesh is scaled into the viewport with a
    fixed margin and lit by a single fixed directional light.
    """
    v = mesh.vertices
    span = max(float(np.ptp(v[:, 0])), float(np.ptp(v[:, 1])), 1e-9)
    scale = 0.8 * size / span
    center = v[:, :2].mean(axis=0)
    camera = Camera(
        scale=scale,
        rotation=np.eye(3),
        translation2d=np.array(
            [size / 2 - scale * center[0], size / 2 - scale * center[1]]
        ),
    )
    normals = vertex_normals(mesh)
    light = np.array([0.3, -0.3, 0.9])
    light = light / np.linalg.norm(light)
    lambert = np.clip(normals @ light, 0.0, 1.0)
    colors = 0.25 + 0.7 * lambert[:, None] * np.array([[0.9, 0.8, 0.7]])
    image, _ = rasterize(
        mesh, camera, colors, size, size, background=Image.blank(size, size, (0.12, 0.12, 0.14))
    )
    return image


# ---------------------------------------------------------------------------
# Dataset augmentation


@dataclass(frozen=True)
class DatasetFrame:
    frame_id: str
    subject_id: str
    image: Path
    landmarks: Path
    valence: float
    arousal: float


def load_dataset(path: str | Path) -> list[DatasetFrame]:
    """Augmentation dataset CSV: header
    frame_id,subject_id,image,landmarks,valence,arousal; paths resolve
    against the CSV location."""
    path = Path(path)
    expected = ["frame_id", "subject_id", "image", "landmarks", "valence", "arousal"]
    frames = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != expected:
            raise GalleryError(f"{path}: header must be {','.join(expected)}")
        for row in reader:
            frames.append(
                DatasetFrame(
                    frame_id=row["frame_id"],
                    subject_id=row["subject_id"],
                    image=path.parent / row["image"],
                    landmarks=path.parent / row["landmarks"],
                    valence=float(row["valence"]),
                    arousal=float(row["arousal"]),
                )
            )
    return frames


def select_neutral_frames(
    frames: list[DatasetFrame],
    eps: float = 0.01,
    allowlist: set[str] | None = None,
) -> list[DatasetFrame]:
    """Frames labeled (near) zero on both axes; an allowlist of manually
    confirmed frame ids further restricts the zero-labeled set."""
    neutral = [f for f in frames if abs(f.valence) <= eps and abs(f.arousal) <= eps]
    if allowlist is not None:
        neutral = [f for f in neutral if f.frame_id in allowlist]
    return neutral


def augment_dataset(
    frames: list[DatasetFrame],
    cells: list[CellIndex],
    cache: GalleryCache,
    model: MorphableModel,
    cfg: AppConfig,
    out_dir: str | Path,
    allowlist: set[str] | None = None,
) -> Path:
    """Synthesize one image per neutral frame per requested cell.

    Every emitted row is labeled with its cell's median (valence, arousal)
    and keeps the source frame's subject id. Returns the label CSV path.
    """
    out = Path(out_dir)
    neutral = select_neutral_frames(frames, cfg.pipeline.neutral_eps, allowlist)
    if not neutral:
        raise GalleryError(
            f"no neutral frames found: 0 of {len(frames)} pass "
            f"|v|,|a| <= {cfg.pipeline.neutral_eps}"
            + (" and the allowlist" if allowlist is not None else "")
        )
    if not cells:
        raise GalleryError("no target cells requested")
    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    labels_path = out / "labels.csv"
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["frame_id", "subject_id", "source_frame", "valence", "arousal", "cell_row", "cell_col"]
        )
        for frame in neutral:
            for cell in cells:
                median_v, median_a = cache.grid.median_va(cell)
                request = SynthRequest(
                    valence=median_v,
                    arousal=median_a,
                    intensity=1.0,
                    image=frame.image,
                    landmarks=frame.landmarks,
                )
                result = process_image(request, cache, model, cfg)
                name = f"{frame.frame_id}_r{cell.row}c{cell.col}"
                save_png(result.image, image_dir / f"{name}.png")
                writer.writerow(
                    [
                        name,
                        frame.subject_id,
                        frame.frame_id,
                        f"{median_v:.6f}",
                        f"{median_a:.6f}",
                        cell.row,
                        cell.col,
                    ]
                )
    logger.info(
        "augmented %d neutral frames x %d cells -> %s",
        len(neutral),
        len(cells),
        labels_path,
    )
    return labels_path


def pick_cells(cache: GalleryCache, spec: str) -> list[CellIndex]:
    """Cell selection string: 'all' (every populated cell), an integer N
    (N most populated cells), or 'r,c;r,c;...' explicit indices."""
    populated = sorted(cache.grid.nonempty_cells())
    if spec == "all":
        return populated
    if spec.isdigit():
        count = int(spec)
        ranked = sorted(populated, key=lambda c: (-cache.histogram[c.row, c.col], c))
        return ranked[:count]
    cells = []
    for chunk in spec.split(";"):
        row, col = chunk.split(",")
        cells.append(CellIndex(int(row), int(col)))
    return cells
