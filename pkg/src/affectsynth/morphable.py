"""Landmark-driven face reconstruction from a single image.

A scaled-orthographic camera and identity-basis coefficients are recovered
by alternating two closed-form least-squares solves; per-vertex color is
then sampled from the image at the projected vertex positions.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .images import Image
from .mesh import LandmarkSet, Mesh

logger = logging.getLogger(__name__)


class DegenerateCameraError(ValueError):
    """Landmark configuration too degenerate for pose recovery."""


class SingularFitError(ValueError):
    """Shape normal equations singular; rerun with regularization > 0."""


@dataclass(frozen=True)
class MorphableModel:
    """Neutral mean mesh plus an orthonormal linear identity basis."""

    mean: Mesh
    identity_basis: np.ndarray  # (3n, p), orthonormal columns
    eigenvalues: np.ndarray  # (p,) positive

    def __post_init__(self):
        basis = np.ascontiguousarray(np.asarray(self.identity_basis, dtype=np.float64))
        eig = np.ascontiguousarray(np.asarray(self.eigenvalues, dtype=np.float64)).ravel()
        if basis.ndim != 2 or basis.shape[0] != 3 * self.mean.n:
            raise ValueError(f"basis shape {basis.shape} does not match mean mesh")
        if basis.shape[1] < 1:
            raise ValueError("need at least one basis column")
        if eig.size != basis.shape[1]:
            raise ValueError("eigenvalue count does not match basis")
        if np.any(eig <= 0):
            raise ValueError("eigenvalues must be positive")
        # an all-zero basis (degenerate placeholder) is tolerated
        if np.abs(basis).max() > 0:
            gram = basis.T @ basis
            if np.abs(gram - np.eye(basis.shape[1])).max() > 1e-6:
                raise ValueError("identity basis columns must be orthonormal")
        basis.setflags(write=False)
        eig.setflags(write=False)
        object.__setattr__(self, "identity_basis", basis)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def p(self) -> int:
        return self.identity_basis.shape[1]

    def instance(self, coeffs: np.ndarray) -> Mesh:
        """Mean plus basis combination as a mesh."""
        c = np.asarray(coeffs, dtype=np.float64).ravel()
        if c.size != self.p:
            raise ValueError(f"expected {self.p} coefficients, got {c.size}")
        offset = (self.identity_basis @ c).reshape(-1, 3)
        return self.mean.with_vertices(self.mean.vertices + offset)


@dataclass(frozen=True)
class Camera:
    """Scaled-orthographic pose: p2d = scale * (R @ p3d)[:2] + translation.

    Camera space looks along -z: larger rotated z is nearer the viewer.
    """

    scale: float
    rotation: np.ndarray  # (3, 3), det +1
    translation2d: np.ndarray  # (2,) pixels

    def __post_init__(self):
        rot = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation2d, dtype=np.float64)).ravel()
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")
        if rot.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValueError("rotation must have det +1")
        if t.shape != (2,):
            raise ValueError("translation2d must have 2 entries")
        rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation2d", t)

    @classmethod
    def identity(cls) -> "Camera":
        return cls(scale=1.0, rotation=np.eye(3), translation2d=np.zeros(2))


@dataclass(frozen=True)
class TextureSamples:
    """Per-vertex colors plus sampling flags."""

    colors: np.ndarray  # (n, 3) in [0, 1]
    out_of_bounds: np.ndarray  # (n,) bool
    back_facing: np.ndarray  # (n,) bool


@dataclass(frozen=True)
class ReconstructedFace:
    """Identity mesh, pose, coefficients, and sampled texture."""

    mesh: Mesh
    coeffs: np.ndarray
    camera: Camera
    vertex_colors: np.ndarray  # (n, 3)
    reprojection_rmse: float


@dataclass(frozen=True)
class FitConfig:
    regularization: float = 0.05
    rounds: int = 3


def project_points(camera: Camera, points3d: np.ndarray) -> np.ndarray:
    """Scaled-orthographic projection of (L, 3) points to (L, 2) pixels."""
    pts = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    return camera.scale * (pts @ camera.rotation[:2].T) + camera.translation2d


def camera_depths(camera: Camera, points3d: np.ndarray) -> np.ndarray:
    """Rotated z per point; larger means nearer the viewer."""
    pts = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    return pts @ camera.rotation[2]


def reprojection_rmse(camera: Camera, landmarks: LandmarkSet, mesh: Mesh) -> float:
    proj = project_points(camera, mesh.vertices[landmarks.indices])
    return float(np.sqrt(np.mean(np.sum((proj - landmarks.points2d) ** 2, axis=1))))


def estimate_camera(landmarks: LandmarkSet, mesh: Mesh) -> Camera:
    """Least-squares scaled-orthographic pose from 2D-3D correspondences.

    The unconstrained 2x3 affine map is solved linearly, then projected
    onto the nearest scaled rotation (SVD orthogonalization; the third
    row is the cross product of the first two, fixing det to +1).
    """
    if len(landmarks) < 4:
        raise DegenerateCameraError(f"need at least 4 landmarks, got {len(landmarks)}")
    if landmarks.indices.max() >= mesh.n:
        raise ValueError("landmark vertex index out of mesh range")
    pts3 = mesh.vertices[landmarks.indices]
    pts2 = landmarks.points2d
    mean3 = pts3.mean(axis=0)
    mean2 = pts2.mean(axis=0)
    centered3 = pts3 - mean3
    centered2 = pts2 - mean2
    if np.linalg.matrix_rank(centered3, tol=1e-10) < 2:
        raise DegenerateCameraError("landmark vertices are collinear or coincident")
    sol, *_ = np.linalg.lstsq(centered3, centered2, rcond=None)
    affine = sol.T  # (2, 3)
    u, sigma, vt = np.linalg.svd(affine, full_matrices=False)
    scale = float(sigma.mean())
    if scale <= 0:
        raise DegenerateCameraError("degenerate (zero-scale) projection")
    rows2 = u @ vt  # orthonormal rows, nearest in Frobenius norm
    r3 = np.cross(rows2[0], rows2[1])
    rotation = np.vstack([rows2, r3])
    translation = mean2 - scale * rotation[:2] @ mean3
    camera = Camera(scale=scale, rotation=rotation, translation2d=translation)
    logger.debug("camera estimate: scale=%.6g rmse=%.4g px",
                 scale, reprojection_rmse(camera, landmarks, mesh))
    return camera


def fit_shape(
    model: MorphableModel,
    landmarks: LandmarkSet,
    camera: Camera,
    regularization: float = 0.05,
) -> np.ndarray:
    """Identity coefficients minimizing landmark reprojection error plus
    an eigenvalue-weighted ridge penalty; closed-form linear solve."""
    if regularization < 0:
        raise ValueError("regularization must be >= 0")
    if landmarks.indices.max() >= model.mean.n:
        raise ValueError("landmark vertex index out of model range")
    proj = camera.scale * camera.rotation[:2]  # (2, 3)
    idx = landmarks.indices
    blocks = model.identity_basis.reshape(model.mean.n, 3, model.p)[idx]  # (L, 3, p)
    design = np.einsum("rc,lcp->lrp", proj, blocks).reshape(-1, model.p)  # (2L, p)
    mean_proj = model.mean.vertices[idx] @ proj.T + camera.translation2d
    rhs_vec = (landmarks.points2d - mean_proj).ravel()
    normal = design.T @ design + regularization * np.diag(1.0 / model.eigenvalues)
    if regularization == 0.0:
        cond = np.linalg.cond(normal)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularFitError(
                "normal equations singular with regularization 0; pass regularization > 0"
            )
    return np.linalg.solve(normal, design.T @ rhs_vec)


def sample_texture(image: Image, mesh: Mesh, camera: Camera) -> TextureSamples:
    """Bilinear per-vertex color lookup at the projected positions.

    Out-of-bounds projections are clamped to the nearest pixel and
    flagged; vertices whose normal faces away from the viewer are flagged
    as back-facing.
    """
    proj = project_points(camera, mesh.vertices)
    h, w = image.height, image.width
    x = proj[:, 0]
    y = proj[:, 1]
    oob = (x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)
    if mesh.n and np.count_nonzero(~oob) < 0.9 * mesh.n:
        warnings.warn(
            f"only {np.count_nonzero(~oob)}/{mesh.n} vertices project inside the image",
            stacklevel=2,
        )
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(int)
    y0 = np.floor(yc).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[:, None]
    fy = (yc - y0)[:, None]
    data = image.data
    colors = (
        data[y0, x0] * (1 - fx) * (1 - fy)
        + data[y0, x1] * fx * (1 - fy)
        + data[y1, x0] * (1 - fx) * fy
        + data[y1, x1] * fx * fy
    )
    normals = vertex_normals(mesh)
    back = (normals @ camera.rotation[2]) < 0.0
    return TextureSamples(colors=colors, out_of_bounds=oob, back_facing=back)


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Area-weighted vertex normals (unit length where defined)."""
    v = mesh.vertices
    f = mesh.faces
    normals = np.zeros_like(v)
    if len(f):
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for col in range(3):
            np.add.at(normals, f[:, col], fn)
    length = np.linalg.norm(normals, axis=1, keepdims=True)
    return normals / np.maximum(length, 1e-300)


def fit_3dmm(
    image: Image,
    landmarks: LandmarkSet,
    model: MorphableModel,
    cfg: FitConfig | None = None,
) -> ReconstructedFace:
    """Alternate pose and shape solves, keeping the best iterate.

    A round that does not lower the reprojection RMSE is rejected and
    the alternation stops, so the recorded RMSE never increases.
    """
    cfg = cfg or FitConfig()
    if cfg.rounds < 1:
        raise ValueError("need at least one fitting round")
    coeffs = np.zeros(model.p)
    camera = estimate_camera(landmarks, model.instance(coeffs))
    best_rmse = reprojection_rmse(camera, landmarks, model.instance(coeffs))
    for _ in range(cfg.rounds):
        cand_coeffs = fit_shape(model, landmarks, camera, cfg.regularization)
        cand_camera = estimate_camera(landmarks, model.instance(cand_coeffs))
        rmse = reprojection_rmse(cand_camera, landmarks, model.instance(cand_coeffs))
        if rmse <= best_rmse + 1e-12:
            coeffs, camera, best_rmse = cand_coeffs, cand_camera, rmse
        else:
            break
    mesh = model.instance(coeffs)
    samples = sample_texture(image, mesh, camera)
    logger.debug("3dmm fit: rmse=%.4g px, |coeffs|=%.4g", best_rmse, np.linalg.norm(coeffs))
    return ReconstructedFace(
        mesh=mesh,
        coeffs=coeffs,
        camera=camera,
        vertex_colors=samples.colors,
        reprojection_rmse=best_rmse,
    )
