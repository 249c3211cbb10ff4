"""Software rasterization and gradient-domain compositing.

The rasterizer draws a textured mesh into the image frame with a z-buffer
and barycentric color interpolation; the Poisson step then re-solves the
rendered region against the photo so the seam disappears.
"""

from __future__ import annotations

import numpy as np

from .images import Image, Mask
from .mesh import Mesh
from .morphable import Camera, camera_depths, project_points


class BlendError(ValueError):
    """Unusable blend inputs (dimension mismatch, empty region)."""


class BlendConvergenceError(RuntimeError):
    """Poisson solve missed the residual target within the iteration cap."""

    def __init__(self, residual: float, cap: int):
        self.residual = residual
        super().__init__(
            f"poisson solve residual {residual:.3e} above 1e-6 after {cap} iterations"
        )


def rasterize(
    mesh: Mesh,
    camera: Camera,
    colors: np.ndarray,
    width: int,
    height: int,
    background: Image | None = None,
) -> tuple[Image, Mask]:
    """Z-buffered triangle rasterization with barycentric interpolation.

    Pixel centers sit at (x + 0.5, y + 0.5). Edge pixels follow the
    top-left fill rule; on exact depth ties the earlier face keeps the
    pixel, so output is deterministic for identical inputs. Depth is the
    rotated z coordinate, larger being nearer the viewer.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"zero-area output {width}x{height}")
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if colors.shape[0] != mesh.n:
        raise ValueError(f"expected {mesh.n} vertex colors, got {colors.shape[0]}")

    if background is None:
        buffer = np.zeros((height, width, 3))
    else:
        if background.width != width or background.height != height:
            raise ValueError("background dimensions do not match output")
        buffer = background.data.copy()
    zbuf = np.full((height, width), -np.inf)
    covered = np.zeros((height, width), dtype=bool)

    proj = project_points(camera, mesh.vertices)
    depth = camera_depths(camera, mesh.vertices)

    for face in mesh.faces:
        i0, i1, i2 = (int(v) for v in face)
        p0, p1, p2 = proj[i0], proj[i1], proj[i2]
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if area == 0.0:
            continue
        if area < 0.0:
            i1, i2 = i2, i1
            p1, p2 = p2, p1
            area = -area
        xs = (p0[0], p1[0], p2[0])
        ys = (p0[1], p1[1], p2[1])
        x_lo = max(int(np.floor(min(xs) - 0.5)), 0)
        x_hi = min(int(np.ceil(max(xs) - 0.5)), width - 1)
        y_lo = max(int(np.floor(min(ys) - 0.5)), 0)
        y_hi = min(int(np.ceil(max(ys) - 0.5)), height - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        px, py = np.meshgrid(
            np.arange(x_lo, x_hi + 1) + 0.5,
            np.arange(y_lo, y_hi + 1) + 0.5,
        )
        w0 = _edge(p1, p2, px, py)
        w1 = _edge(p2, p0, px, py)
        w2 = _edge(p0, p1, px, py)
        inside = (
            _covers(w0, p1, p2) & _covers(w1, p2, p0) & _covers(w2, p0, p1)
        )
        if not inside.any():
            continue
        lam0 = w0 / area
        lam1 = w1 / area
        lam2 = w2 / area
        z = lam0 * depth[i0] + lam1 * depth[i1] + lam2 * depth[i2]
        update = inside & (z > zbuf[y_lo : y_hi + 1, x_lo : x_hi + 1])
        if not update.any():
            continue
        rgb = (
            lam0[..., None] * colors[i0]
            + lam1[..., None] * colors[i1]
            + lam2[..., None] * colors[i2]
        )
        sub = (slice(y_lo, y_hi + 1), slice(x_lo, x_hi + 1))
        zbuf[sub] = np.where(update, z, zbuf[sub])
        covered[sub] |= update
        buffer[sub] = np.where(update[..., None], rgb, buffer[sub])

    return Image(buffer), Mask(covered)


def _edge(a, b, px, py):
    return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])


def _covers(w, a, b):
    """Inside test for one edge: positive side, with boundary pixels kept
    only on top (horizontal, pointing +x) and left (pointing -y) edges."""
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    on_tie = (dy < 0.0) or (dy == 0.0 and dx > 0.0)
    return (w > 0.0) | ((w == 0.0) & on_tie)


def erode_mask(mask: Mask) -> Mask:
    """4-neighborhood erosion; pixels at the image border never survive."""
    m = mask.bitmap
    out = m.copy()
    out[0, :] = out[-1, :] = False
    out[:, 0] = out[:, -1] = False
    out[1:-1, 1:-1] &= m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    return Mask(out)


def poisson_blend(source: Image, target: Image, mask: Mask) -> Image:
    """Seamless cloning: re-solve the masked region of `target` so its
    gradients match `source` while the boundary pins to `target`.

    Solves the 5-point discrete Poisson equation per channel with
    conjugate gradient (tol 1e-8 on the residual infinity norm, cap
    10x the unknown count). Pixels outside the mask are returned
    bit-identical to `target`.
    """
    if source.data.shape != target.data.shape:
        raise BlendError("source and target dimensions differ")
    if not mask.matches(target):
        raise BlendError("mask dimensions do not match the images")

    inside = mask.bitmap
    border = (
        inside[0, :].any()
        or inside[-1, :].any()
        or inside[:, 0].any()
        or inside[:, -1].any()
    )
    if border:
        inside = erode_mask(Mask(inside)).bitmap
    if not inside.any():
        raise BlendError("blend region is empty")

    h, w = inside.shape
    index = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(inside)
    count = len(ys)
    index[ys, xs] = np.arange(count)

    # neighbor bookkeeping: interior neighbor index or -1 (Dirichlet)
    neighbor_idx = np.empty((4, count), dtype=np.int64)
    neighbor_pos = []
    for axis, (dy, dx) in enumerate(((-1, 0), (1, 0), (0, -1), (0, 1))):
        ny = ys + dy
        nx = xs + dx
        neighbor_idx[axis] = index[ny, nx]
        neighbor_pos.append((ny, nx))

    def laplacian_apply(vec: np.ndarray) -> np.ndarray:
        acc = 4.0 * vec
        for axis in range(4):
            idx = neighbor_idx[axis]
            valid = idx >= 0
            acc[valid] -= vec[idx[valid]]
        return acc

    out = target.data.copy()
    cap = max(10 * count, 10)
    for ch in range(3):
        src = source.data[:, :, ch]
        tgt = target.data[:, :, ch]
        # divergence of the source gradient field on the 4-neighborhood
        rhs = 4.0 * src[ys, xs]
        for axis in range(4):
            ny, nx = neighbor_pos[axis]
            rhs -= src[ny, nx]
        # Dirichlet boundary contributions from the target
        for axis in range(4):
            idx = neighbor_idx[axis]
            dirichlet = idx < 0
            ny, nx = neighbor_pos[axis]
            rhs[dirichlet] += tgt[ny[dirichlet], nx[dirichlet]]

        x = tgt[ys, xs].copy()
        r = rhs - laplacian_apply(x)
        p = r.copy()
        rs = float(r @ r)
        for _ in range(cap):
            if np.abs(r).max() <= 1e-8:
                break
            ap = laplacian_apply(p)
            alpha = rs / float(p @ ap)
            x += alpha * p
            r -= alpha * ap
            rs_new = float(r @ r)
            p = r + (rs_new / rs) * p
            rs = rs_new
        residual = float(np.abs(rhs - laplacian_apply(x)).max())
        if residual > 1e-6:
            raise BlendConvergenceError(residual, cap)
        out[ys, xs, ch] = x

    # only solved pixels were written, so everything outside the region
    # carries target values untouched (already in [0, 1], clamp is a no-op)
    return Image(out)
