"""Sparse localized blendshape factorization of deformation data.

Stacks per-frame difference vectors into a 3n x m matrix D and factors it
as D ~= B C, where the h columns of B are spatially localized deformation
components (each rescaled so its largest entry is 1) and the rows of C are
per-sample activation weights, penalized with a group l1/l2 term.

The solve alternates a weight step and a component step. Both steps are
safeguarded: a candidate update is kept only when it does not increase the
objective, so the recorded objective history is non-increasing by
construction and the column constraints hold after every outer iteration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mesh import DeformationField, Mesh, TopologyMismatchError, apply, diff

UNIT_MAX_ABS = "unit-max-abs"
UNIT_MAX_NONNEG = "unit-max-nonneg"
CONSTRAINT_MODES = (UNIT_MAX_ABS, UNIT_MAX_NONNEG)


@dataclass(frozen=True)
class DeformationMatrix:
    """Columns are flattened per-frame difference vectors."""

    D: np.ndarray  # (3n, m)

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.D, dtype=np.float64))
        if d.ndim != 2:
            raise ValueError(f"D must be 2-D, got shape {d.shape}")
        if d.shape[0] % 3 != 0:
            raise ValueError(f"row count {d.shape[0]} is not a multiple of 3")
        if d.shape[1] < 1:
            raise ValueError("need at least one sample column")
        if not np.isfinite(d).all():
            raise ValueError("deformation data must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "D", d)

    @property
    def n(self) -> int:
        return self.D.shape[0] // 3

    @property
    def m(self) -> int:
        return self.D.shape[1]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the alternating solve.

    local_support_radius is in model units on the template surface;
    support_cap bounds the fraction of vertices a component may touch
    (at most max(1, floor(support_cap * n)) vertices are kept).
    """

    h: int
    sparsity_weight: float = 0.0
    local_support_radius: float = 1.0
    max_outer_iters: int = 100
    tol: float = 1e-6
    constraint_mode: str = UNIT_MAX_ABS
    rng_seed: int = 0
    support_cap: float = 0.3
    inner_weight_iters: int = 10

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("component count h must be positive")
        if self.sparsity_weight < 0:
            raise ValueError("sparsity_weight must be >= 0")
        if not self.local_support_radius > 0:
            raise ValueError("local_support_radius must be > 0")
        if self.max_outer_iters <= 0 or self.tol <= 0:
            raise ValueError("max_outer_iters and tol must be positive")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ValueError(f"constraint_mode must be one of {CONSTRAINT_MODES}")
        if not (0 < self.support_cap <= 1):
            raise ValueError("support_cap must be in (0, 1]")


@dataclass(frozen=True)
class SplocsModel:
    """Fitted factorization: B (3n x h) components, C (h x m) weights."""

    B: np.ndarray
    C: np.ndarray
    template: Mesh
    constraint_mode: str
    support_cap: float
    objective_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.B, dtype=np.float64))
        c = np.ascontiguousarray(np.asarray(self.C, dtype=np.float64))
        if b.ndim != 2 or c.ndim != 2 or b.shape[1] != c.shape[0]:
            raise ValueError(f"inconsistent factor shapes {b.shape} / {c.shape}")
        if b.shape[0] != 3 * self.template.n:
            raise ValueError("component rows do not match template vertex count")
        b.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "C", c)

    @property
    def h(self) -> int:
        return self.B.shape[1]

    @property
    def n(self) -> int:
        return self.B.shape[0] // 3

    @property
    def m(self) -> int:
        return self.C.shape[1]

    def check_constraints(self, atol: float = 1e-9) -> None:
        """Raise if any column violates its normalization, sign, or
        support-size constraint."""
        n = self.n
        max_support = max(1, math.floor(self.support_cap * n))
        per_vertex = self.B.reshape(n, 3, self.h)
        for k in range(self.h):
            col = self.B[:, k]
            if self.constraint_mode == UNIT_MAX_ABS:
                if abs(np.abs(col).max() - 1.0) > atol:
                    raise ValueError(f"component {k}: max |entry| is not 1")
            else:
                if col.min() < -atol:
                    raise ValueError(f"component {k}: negative entry in nonneg mode")
                if abs(col.max() - 1.0) > atol:
                    raise ValueError(f"component {k}: max entry is not 1")
            touched = int(np.count_nonzero(np.abs(per_vertex[:, :, k]).max(axis=1)))
            if touched > max_support:
                raise ValueError(
                    f"component {k}: support {touched} vertices exceeds cap {max_support}"
                )


def build_difference_matrix(frames: list[Mesh], neutrals: list[Mesh]) -> DeformationMatrix:
    """Column i is diff(frames[i], neutrals[i]) flattened."""
    if not frames:
        raise ValueError("empty mesh list")
    if len(frames) != len(neutrals):
        raise ValueError("frames and neutrals must pair up")
    first = frames[0]
    cols = []
    for fr, ne in zip(frames, neutrals):
        if not fr.same_topology(first) or not ne.same_topology(first):
            raise TopologyMismatchError("all gallery meshes must share one topology")
        cols.append(diff(fr, ne).displacements)
    return DeformationMatrix(np.column_stack(cols))


def synthesize(model: SplocsModel, weights: np.ndarray) -> DeformationField:
    """Deformation generated by the weighted component mix B @ weights."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size != model.h:
        raise ValueError(f"expected {model.h} weights, got {w.size}")
    return DeformationField(model.B @ w)


def project(model: SplocsModel, fld: DeformationField) -> np.ndarray:
    """Least-squares weights reproducing `fld` in the component span.

    Solved via ridge-stabilized normal equations (ridge 1e-8)."""
    f = fld.displacements
    if f.size != model.B.shape[0]:
        raise ValueError(f"field length {f.size} does not match model ({model.B.shape[0]})")
    bt_b = model.B.T @ model.B + 1e-8 * np.eye(model.h)
    return np.linalg.solve(bt_b, model.B.T @ f)


def project_matrix(model: SplocsModel, D: DeformationMatrix) -> np.ndarray:
    """project() applied to every column of D at once; rows are per-sample
    weight vectors, shape (m, h)."""
    if D.D.shape[0] != model.B.shape[0]:
        raise ValueError("deformation rows do not match the model")
    bt_b = model.B.T @ model.B + 1e-8 * np.eye(model.h)
    return np.linalg.solve(bt_b, model.B.T @ D.D).T


def mean_shape(fields: list[DeformationField], template: Mesh) -> Mesh:
    """Template displaced by the elementwise mean of the fields."""
    if not fields:
        raise ValueError("empty field list")
    stack = np.stack([f.displacements for f in fields], axis=0)
    if stack.shape[1] != 3 * template.n:
        raise TopologyMismatchError("field length does not match template")
    return apply(template, DeformationField(stack.mean(axis=0)))


# ---------------------------------------------------------------------------
# Alternating solver


def _objective(D: np.ndarray, B: np.ndarray, C: np.ndarray, sparsity_weight: float) -> float:
    resid = D - B @ C
    value = float(np.sum(resid * resid))
    if sparsity_weight > 0:
        value += sparsity_weight * float(np.sum(np.linalg.norm(C, axis=1)))
    return value


def _support_mask(template: Mesh, peak: int, radius: float, cap: float) -> np.ndarray:
    """Vertices a component seeded at `peak` may displace: within the
    Euclidean ball of `radius` and no more than the cap-many nearest."""
    dist = np.linalg.norm(template.vertices - template.vertices[peak], axis=1)
    mask = dist <= radius
    limit = max(1, math.floor(cap * template.n))
    if np.count_nonzero(mask) > limit:
        order = np.argsort(dist, kind="stable")
        keep = np.zeros(template.n, dtype=bool)
        keep[order[:limit]] = True
        mask &= keep
    return mask


def _falloff(template: Mesh, peak: int, radius: float) -> np.ndarray:
    dist = np.linalg.norm(template.vertices - template.vertices[peak], axis=1)
    if np.isinf(radius):
        return np.ones(template.n)
    return np.maximum(0.0, 1.0 - dist / radius)


def _project_column(col: np.ndarray, mask: np.ndarray, mode: str) -> np.ndarray | None:
    """Zero entries outside the support, enforce sign, rescale to unit max.

    Returns None when nothing survives (caller keeps the previous column)."""
    out = col.reshape(-1, 3).copy()
    out[~mask] = 0.0
    if mode == UNIT_MAX_NONNEG:
        np.maximum(out, 0.0, out=out)
        peak = out.max()
    else:
        peak = np.abs(out).max()
    if peak <= 0.0:
        return None
    return (out / peak).ravel()


def _seed_components(
    D: np.ndarray, template: Mesh, cfg: SolverConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Greedy initialization: repeatedly place a component at the vertex
    carrying the most residual energy, shaped by a radial falloff."""
    n = template.n
    m = D.shape[1]
    B = np.zeros((3 * n, cfg.h))
    C = np.zeros((cfg.h, m))
    resid = D.copy()
    for k in range(cfg.h):
        energy = np.sum(resid.reshape(n, 3, m) ** 2, axis=(1, 2))
        top = energy.max()
        tied = np.flatnonzero(energy == top)
        peak = int(tied[0]) if len(tied) == 1 else int(rng.choice(tied))
        mask = _support_mask(template, peak, cfg.local_support_radius, cfg.support_cap)
        # sample weights of the residual's dominant direction at the peak,
        # then one power step against the whole residual gives the spatial
        # profile (distinct per component, so the seed matrix is full rank)
        local = resid.reshape(n, 3, m)[peak]  # (3, m)
        u, s, _ = np.linalg.svd(local, full_matrices=False)
        if s[0] > 0:
            weights = u[:, 0] @ local  # (m,)
            shape = (resid @ weights).reshape(n, 3)
        else:
            shape = np.zeros((n, 3))
            shape[peak, 0] = 1.0
        shape = shape * _falloff(template, peak, cfg.local_support_radius)[:, None]
        shape[~mask] = 0.0
        col = _project_column(shape.ravel(), mask, cfg.constraint_mode)
        if col is None:
            col = np.zeros(3 * n)
            col[3 * peak] = 1.0
        denom = float(col @ col)
        weights = (col @ resid) / denom if denom > 0 else np.zeros(m)
        B[:, k] = col
        C[k, :] = weights
        resid -= np.outer(col, weights)
    return B, C


def _weight_step(D: np.ndarray, B: np.ndarray, C: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Update C with B fixed.

    Without the sparsity term this is the exact least-squares block update;
    with it, proximal-gradient steps with group soft-thresholding of the
    rows of C (step 1/L keeps every step non-increasing)."""
    if cfg.sparsity_weight == 0.0:
        sol, *_ = np.linalg.lstsq(B, D, rcond=None)
        return sol
    gram = B.T @ B
    lam_max = float(np.linalg.eigvalsh(gram)[-1])
    if lam_max <= 0.0:
        return C.copy()
    step = 1.0 / (2.0 * lam_max)
    bt_d = B.T @ D
    out = C.copy()
    thresh = step * cfg.sparsity_weight
    for _ in range(cfg.inner_weight_iters):
        grad = 2.0 * (gram @ out - bt_d)
        out = out - step * grad
        norms = np.linalg.norm(out, axis=1)
        scale = np.where(norms > 0, np.maximum(0.0, 1.0 - thresh / np.maximum(norms, 1e-300)), 0.0)
        out *= scale[:, None]
    return out


def _component_step(
    D: np.ndarray, B: np.ndarray, C: np.ndarray, template: Mesh, cfg: SolverConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate B update: joint least squares over components, then
    per-column support selection, sign handling, and unit-max rescale.
    Rescaling is compensated in C so the product B C is unchanged by it."""
    n = template.n
    sol, *_ = np.linalg.lstsq(C.T, D.T, rcond=None)
    B_ls = sol.T  # (3n, h)
    B_new = B.copy()
    C_new = C.copy()
    for k in range(B.shape[1]):
        col = B_ls[:, k]
        if not np.any(col):
            continue
        per_vertex = np.abs(col.reshape(n, 3)).max(axis=1)
        peak = int(np.argmax(per_vertex))
        mask = _support_mask(template, peak, cfg.local_support_radius, cfg.support_cap)
        masked = col.reshape(n, 3).copy()
        masked[~mask] = 0.0
        if cfg.constraint_mode == UNIT_MAX_NONNEG:
            np.maximum(masked, 0.0, out=masked)
            scale = masked.max()
        else:
            scale = np.abs(masked).max()
        if scale <= 0.0:
            continue
        B_new[:, k] = (masked / scale).ravel()
        C_new[k, :] = C[k, :] * scale
    return B_new, C_new


def fit_splocs(
    D: DeformationMatrix,
    template: Mesh,
    cfg: SolverConfig,
    on_iteration=None,
) -> SplocsModel:
    """Alternating solve of the sparse localized factorization.

    Deterministic for a fixed config (the seed only breaks exact ties in
    peak-vertex selection). `on_iteration(B, C, objective)` is invoked
    after every accepted outer iteration.
    """
    if 3 * template.n != D.D.shape[0]:
        raise ValueError("template vertex count does not match D")
    if cfg.h > min(D.D.shape[0], D.m):
        warnings.warn(
            f"h={cfg.h} exceeds min(3n, m)={min(D.D.shape[0], D.m)}; "
            "the factorization will be rank deficient",
            stacklevel=2,
        )
    rng = np.random.default_rng(cfg.rng_seed)
    B, C = _seed_components(D.D, template, cfg, rng)

    sw = cfg.sparsity_weight
    obj = _objective(D.D, B, C, sw)
    history = [obj]
    if on_iteration is not None:
        on_iteration(B, C, obj)
    for _ in range(cfg.max_outer_iters):
        C_cand = _weight_step(D.D, B, C, cfg)
        cand_obj = _objective(D.D, B, C_cand, sw)
        if cand_obj <= obj:
            C, obj = C_cand, cand_obj

        B_cand, C_cand = _component_step(D.D, B, C, template, cfg)
        cand_obj = _objective(D.D, B_cand, C_cand, sw)
        if cand_obj <= obj:
            B, C, obj = B_cand, C_cand, cand_obj

        prev = history[-1]
        history.append(obj)
        if on_iteration is not None:
            on_iteration(B, C, obj)
        if prev <= 0.0 or (prev - obj) / prev < cfg.tol:
            break

    model = SplocsModel(
        B=B,
        C=C,
        template=template,
        constraint_mode=cfg.constraint_mode,
        support_cap=cfg.support_cap,
        objective_history=np.array(history),
    )
    model.check_constraints()
    return model
