"""Deterministic synthetic 4D gallery for desk-scale experiments.

Builds a blobby face-like template surface, plants k spatially disjoint
local deformation components on it, and emits per-subject expression
sequences whose (valence, arousal) labels are a known linear function of
the latent component weights. Ground truth is written alongside so tests
can check recovery against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import Image, save_png
from .mesh import LandmarkSet, Mesh, save_landmarks, save_mesh
from .morphable import Camera, MorphableModel, project_points
from .vagrid import Annotation, AnnotationSet, save_annotations


class InfeasiblePlanError(ValueError):
    """The requested plan cannot be realized (e.g. components can't be
    placed disjointly at the requested radius)."""


@dataclass(frozen=True)
class GalleryPlan:
    subjects: int = 10
    sequences_per_subject: int = 2
    frames_per_sequence: int = 15
    grid_side: int = 12  # template resolution; n = grid_side**2
    components: int = 5
    support_radius: float = 0.12
    va_noise: float = 0.0
    identity_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if min(self.subjects, self.sequences_per_subject, self.frames_per_sequence) < 1:
            raise InfeasiblePlanError("plan counts must be positive")
        if self.grid_side < 3:
            raise InfeasiblePlanError("grid_side must be at least 3")
        if self.components < 1:
            raise InfeasiblePlanError("need at least one planted component")
        if self.support_radius <= 0:
            raise InfeasiblePlanError("support_radius must be positive")
        if self.va_noise < 0:
            raise InfeasiblePlanError("va_noise must be >= 0")

    @property
    def n_vertices(self) -> int:
        return self.grid_side**2


@dataclass(frozen=True)
class SyntheticGallery:
    template: Mesh
    frames: dict[str, Mesh]  # frame_id -> mesh (includes neutral frames)
    annotations: AnnotationSet
    subject_of: dict[str, str]  # frame_id -> subject id
    true_components: np.ndarray  # (3n, k)
    va_map: np.ndarray  # (2, k): (v, a) = va_map @ latent
    latents: dict[str, np.ndarray]  # frame_id -> (k,) latent weights


def make_template(grid_side: int) -> Mesh:
    """Dome over the unit square: a smooth, face-sized test surface."""
    axis = np.linspace(0.0, 1.0, grid_side)
    xx, yy = np.meshgrid(axis, axis)
    zz = 0.35 * np.exp(-(((xx - 0.5) ** 2 + (yy - 0.5) ** 2) / 0.18))
    vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    faces = []
    for r in range(grid_side - 1):
        for c in range(grid_side - 1):
            a = r * grid_side + c
            b = a + 1
            d = a + grid_side
            e = d + 1
            faces.append((a, b, e))
            faces.append((a, e, d))
    return Mesh(vertices, np.array(faces, dtype=np.int64))


def _farthest_point_seeds(vertices: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    start = int(rng.integers(len(vertices)))
    seeds = [start]
    dist = np.linalg.norm(vertices - vertices[start], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        seeds.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(vertices - vertices[nxt], axis=1))
    return seeds


def plant_components(template: Mesh, k: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """k local bump components with pairwise disjoint supports, (3n, k)."""
    v = template.vertices
    seeds = _farthest_point_seeds(v, k, rng)
    for a in range(k):
        for b in range(a + 1, k):
            gap = np.linalg.norm(v[seeds[a]] - v[seeds[b]])
            if gap <= 2.0 * radius:
                raise InfeasiblePlanError(
                    f"cannot place {k} disjoint components of radius {radius}: "
                    f"seed distance {gap:.3f} <= {2 * radius:.3f}"
                )
    components = np.zeros((3 * template.n, k))
    for j, seed in enumerate(seeds):
        dist = np.linalg.norm(v - v[seed], axis=1)
        falloff = np.maximum(0.0, 1.0 - dist / radius)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        components[:, j] = (falloff[:, None] * direction).ravel()
    return components


def _identity_offset(template: Mesh, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth low-frequency per-subject shape perturbation, (n, 3)."""
    v = template.vertices
    phase = rng.uniform(0, 2 * math.pi, size=(3, 2))
    freq = rng.uniform(1.0, 2.5, size=(3, 2))
    offset = np.empty_like(v)
    for axis in range(3):
        offset[:, axis] = scale * np.sin(
            freq[axis, 0] * math.pi * v[:, 0] + phase[axis, 0]
        ) * np.cos(freq[axis, 1] * math.pi * v[:, 1] + phase[axis, 1])
    return offset


def generate_gallery(plan: GalleryPlan) -> SyntheticGallery:
    rng = np.random.default_rng(plan.seed)
    template = make_template(plan.grid_side)
    components = plant_components(template, plan.components, plan.support_radius, rng)

    # rows bounded so labels stay inside [-1, 1] even with mild noise
    va_map = rng.uniform(-1.0, 1.0, size=(2, plan.components))
    va_map *= 0.85 / np.abs(va_map).sum(axis=1, keepdims=True)

    frames: dict[str, Mesh] = {}
    subject_of: dict[str, str] = {}
    latents: dict[str, np.ndarray] = {}
    annotations: list[Annotation] = []

    for s in range(plan.subjects):
        subject = f"s{s:03d}"
        neutral_vertices = template.vertices + _identity_offset(
            template, plan.identity_scale, rng
        )
        for q in range(plan.sequences_per_subject):
            sequence = f"{subject}q{q:02d}"
            neutral_id = f"{sequence}f000"
            frames[neutral_id] = template.with_vertices(neutral_vertices)
            subject_of[neutral_id] = subject
            latents[neutral_id] = np.zeros(plan.components)
            annotations.append(
                Annotation(
                    frame_id=neutral_id,
                    sequence_id=sequence,
                    neutral_frame_id=neutral_id,
                    valence=0.0,
                    arousal=0.0,
                )
            )
            for f in range(1, plan.frames_per_sequence):
                frame_id = f"{sequence}f{f:03d}"
                w = rng.uniform(-1.0, 1.0, size=plan.components)
                va = va_map @ w + rng.normal(0.0, plan.va_noise, size=2)
                va = np.clip(va, -1.0, 1.0)
                offset = (components @ w).reshape(-1, 3)
                frames[frame_id] = template.with_vertices(neutral_vertices + offset)
                subject_of[frame_id] = subject
                latents[frame_id] = w
                annotations.append(
                    Annotation(
                        frame_id=frame_id,
                        sequence_id=sequence,
                        neutral_frame_id=neutral_id,
                        valence=float(va[0]),
                        arousal=float(va[1]),
                    )
                )

    return SyntheticGallery(
        template=template,
        frames=frames,
        annotations=AnnotationSet(annotations),
        subject_of=subject_of,
        true_components=components,
        va_map=va_map,
        latents=latents,
    )


def make_identity_model(template: Mesh, modes: int, seed: int = 0) -> MorphableModel:
    """Morphable model around the template: orthonormalized smooth modes.

    Mode frequencies start at 2 cycles per unit so no mode resembles an
    affine warp; lower frequencies would make pose and shape nearly
    interchangeable under orthographic projection and landmark-based
    recovery ill-posed."""
    rng = np.random.default_rng(seed)
    v = template.vertices
    raw = np.empty((3 * template.n, modes))
    for j in range(modes):
        phase = rng.uniform(0, 2 * math.pi, size=3)
        freq = rng.uniform(2.0, 5.0, size=3)
        mode = np.stack(
            [
                np.sin(freq[0] * math.pi * v[:, 0] + phase[0]),
                np.sin(freq[1] * math.pi * v[:, 1] + phase[1]),
                0.3 * np.sin(freq[2] * math.pi * (v[:, 0] + v[:, 1]) + phase[2]),
            ],
            axis=1,
        )
        raw[:, j] = mode.ravel()
    basis, _ = np.linalg.qr(raw)
    eigenvalues = 0.05 / (1.0 + np.arange(modes))
    return MorphableModel(mean=template, identity_basis=basis, eigenvalues=eigenvalues)


@dataclass(frozen=True)
class ImageFixture:
    """A photo rendered from known ground truth, plus its correspondences."""

    image: Image
    landmarks: LandmarkSet
    camera: Camera
    coeffs: np.ndarray


def screen_affine_colors(points2d: np.ndarray, size: int) -> np.ndarray:
    """Color field affine in screen coordinates.

    Affine fields survive barycentric rasterization and bilinear resampling
    exactly, which keeps self-consistency fixtures tight even when the
    refitted pose wobbles slightly."""
    u = np.asarray(points2d, dtype=np.float64) / size
    return np.column_stack(
        [
            0.30 + 0.40 * u[:, 0],
            0.25 + 0.45 * u[:, 1],
            0.70 - 0.30 * (u[:, 0] + u[:, 1]) / 2.0,
        ]
    )


def make_image_fixture(
    model: MorphableModel,
    size: int = 96,
    seed: int = 0,
    landmark_count: int = 20,
    coeff_scale: float = 1.0,
    tilt: float = 0.08,
) -> ImageFixture:
    """Render the identity model under a known pose into a photo.

    The whole photo, background included, carries one color field affine
    in screen coordinates, and the landmarks are exact projections, so
    fitting against this fixture has a zero-residual optimum at the
    generating parameters and resampling its texture is lossless."""
    from .render import rasterize

    rng = np.random.default_rng(seed)
    coeffs = coeff_scale * np.sqrt(model.eigenvalues) * rng.normal(size=model.p)
    mesh = model.instance(coeffs)

    ct, st = math.cos(tilt), math.sin(tilt)
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, ct, -st], [0.0, st, ct]])
    rotated = mesh.vertices @ rotation.T
    lo = rotated[:, :2].min(axis=0)
    hi = rotated[:, :2].max(axis=0)
    span = max(float(hi[0] - lo[0]), float(hi[1] - lo[1]), 1e-9)
    scale = 0.8 * size / span
    center = (lo + hi) / 2.0
    translation = np.array([size / 2.0, size / 2.0]) - scale * center
    camera = Camera(scale=scale, rotation=rotation, translation2d=translation)

    px, py = np.meshgrid(np.arange(size) + 0.5, np.arange(size) + 0.5)
    background = Image(
        screen_affine_colors(
            np.column_stack([px.ravel(), py.ravel()]), size
        ).reshape(size, size, 3)
    )
    colors = screen_affine_colors(project_points(camera, mesh.vertices), size)
    photo, _ = rasterize(mesh, camera, colors, size, size, background=background)

    indices = np.unique(np.linspace(0, mesh.n - 1, landmark_count).astype(np.int64))
    points = project_points(camera, mesh.vertices[indices])
    landmarks = LandmarkSet(points2d=points, indices=indices)
    return ImageFixture(image=photo, landmarks=landmarks, camera=camera, coeffs=coeffs)


def write_image_fixture(fixture: ImageFixture, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_path = out / "photo.png"
    landmarks_path = out / "landmarks.csv"
    save_png(fixture.image, image_path)
    save_landmarks(fixture.landmarks, landmarks_path)
    return image_path, landmarks_path


def write_gallery(gallery: SyntheticGallery, out_dir: str | Path) -> Path:
    """Write meshes, annotations, subjects, template, ground truth and a
    manifest; returns the manifest path."""
    out = Path(out_dir)
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(parents=True, exist_ok=True)
    for frame_id in sorted(gallery.frames):
        save_mesh(gallery.frames[frame_id], mesh_dir / f"{frame_id}.obj")
    save_mesh(gallery.template, out / "template.obj")
    save_annotations(gallery.annotations, out / "annotations.csv")

    with open(out / "subjects.csv", "w", encoding="utf-8") as fh:
        fh.write("frame_id,subject_id\n")
        for frame_id in sorted(gallery.subject_of):
            fh.write(f"{frame_id},{gallery.subject_of[frame_id]}\n")

    order = sorted(gallery.latents)
    np.savez(
        out / "ground_truth.npz",
        true_components=gallery.true_components,
        va_map=gallery.va_map,
        frame_ids=np.array(order),
        latents=np.stack([gallery.latents[f] for f in order]),
    )

    manifest = out / "manifest.toml"
    manifest.write_text(
        "\n".join(
            [
                'mesh_dir = "meshes"',
                'annotations = "annotations.csv"',
                'template = "template.obj"',
                'subjects = "subjects.csv"',
                'cache_dir = "cache"',
                "",
            ]
        ),
        encoding="utf-8",
    )
    return manifest
