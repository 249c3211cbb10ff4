"""Moving a synthesized expression onto a reconstructed identity mesh.

The expression is carried as the template-relative displacement of the
synthetic face and added vertexwise to the target, optionally scaled to
dial the intensity up or down.
"""

from __future__ import annotations

from .mesh import DeformationField, Mesh, apply, diff

MAX_INTENSITY = 1.5


def compute_delta(synthetic: Mesh, template: Mesh) -> DeformationField:
    """Displacement separating the expressive synthetic face from the
    neutral template."""
    return diff(synthetic, template)


def transfer(reconstructed: Mesh, delta: DeformationField, intensity: float = 1.0) -> Mesh:
    """Impose `delta` on the reconstructed mesh.

    intensity scales the displacement linearly (0 leaves the identity
    untouched, 1 applies the full expression).
    """
    if not (0.0 <= intensity <= MAX_INTENSITY):
        raise ValueError(f"intensity {intensity} outside [0, {MAX_INTENSITY}]")
    if intensity == 1.0:
        return apply(reconstructed, delta)
    return apply(reconstructed, delta.scaled(intensity))
