import numpy as np
import pytest

from affectsynth.mesh import DeformationField, apply
from affectsynth.transfer import compute_delta, transfer

from conftest import random_mesh


def test_delta_of_template_is_zero(rng):
    template = random_mesh(rng, n=12)
    assert np.all(compute_delta(template, template).displacements == 0.0)


def test_delta_recovers_applied_field(rng):
    template = random_mesh(rng, n=12)
    fld = DeformationField(rng.normal(size=36))
    synthetic = apply(template, fld)
    delta = compute_delta(synthetic, template)
    assert np.abs(delta.displacements - fld.displacements).max() <= 1e-15


def test_delta_subtraction_oracle(rng):
    a = random_mesh(rng, n=9)
    b = a.with_vertices(rng.normal(size=(9, 3)))
    assert np.array_equal(
        compute_delta(a, b).displacements, (a.vertices - b.vertices).ravel()
    )


def test_zero_delta_keeps_identity(rng):
    recon = random_mesh(rng, n=10)
    out = transfer(recon, DeformationField(np.zeros(30)))
    assert np.array_equal(out.vertices, recon.vertices)


def test_involution(rng):
    recon = random_mesh(rng, n=10)
    delta = DeformationField(rng.normal(size=30))
    neg = DeformationField(-delta.displacements)
    back = transfer(transfer(recon, delta), neg)
    assert np.abs(back.vertices - recon.vertices).max() <= 1e-12


def test_composite_elementwise_oracle(rng):
    template = random_mesh(rng, n=8)
    synthetic = template.with_vertices(rng.normal(size=(8, 3)))
    recon = template.with_vertices(rng.normal(size=(8, 3)))
    out = transfer(recon, compute_delta(synthetic, template))
    expected = recon.vertices + (synthetic.vertices - template.vertices)
    assert np.abs(out.vertices - expected).max() <= 1e-15


def test_intensity_scales_linearly(rng):
    recon = random_mesh(rng, n=8)
    delta = DeformationField(rng.normal(size=24))
    for alpha in (0.0, 0.25, 0.5, 1.0, 1.5):
        out = transfer(recon, delta, intensity=alpha)
        expected = recon.vertices + alpha * delta.per_vertex()
        assert np.abs(out.vertices - expected).max() <= 1e-15


def test_intensity_range_enforced(rng):
    recon = random_mesh(rng, n=8)
    delta = DeformationField(np.zeros(24))
    with pytest.raises(ValueError):
        transfer(recon, delta, intensity=-0.1)
    with pytest.raises(ValueError):
        transfer(recon, delta, intensity=1.6)
