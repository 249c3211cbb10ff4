import numpy as np
import pytest

from affectsynth.blendshape import (
    UNIT_MAX_ABS,
    UNIT_MAX_NONNEG,
    DeformationMatrix,
    SolverConfig,
    SplocsModel,
    build_difference_matrix,
    fit_splocs,
    mean_shape,
    project,
    project_matrix,
    synthesize,
)
from affectsynth.mesh import DeformationField, TopologyMismatchError, apply
from affectsynth.modelio import load_splocs_model, save_splocs_model
from affectsynth.synthetic import make_template, plant_components

from conftest import random_mesh


def vertex_support(column):
    per_vertex = np.abs(column.reshape(-1, 3)).max(axis=1)
    return set(np.flatnonzero(per_vertex > 1e-9))


def greedy_jaccard(true_cols, est_cols):
    """Best-match support overlaps between planted and recovered components."""
    est_supports = [vertex_support(est_cols[:, j]) for j in range(est_cols.shape[1])]
    used = set()
    scores = []
    for j in range(true_cols.shape[1]):
        ts = vertex_support(true_cols[:, j])
        best_i, best = None, -1.0
        for i, es in enumerate(est_supports):
            if i in used:
                continue
            score = len(ts & es) / len(ts | es)
            if score > best:
                best_i, best = i, score
        used.add(best_i)
        scores.append(best)
    return scores


class TestDifferenceMatrix:
    def test_frames_equal_neutrals_zero(self, rng):
        base = random_mesh(rng, n=10)
        frames = [base.with_vertices(rng.normal(size=(10, 3))) for _ in range(4)]
        D = build_difference_matrix(frames, frames)
        assert np.all(D.D == 0.0)

    def test_single_pair(self, rng):
        base = random_mesh(rng, n=8)
        frame = base.with_vertices(base.vertices + rng.normal(size=(8, 3)))
        D = build_difference_matrix([frame], [base])
        assert D.D.shape == (24, 1)
        assert np.array_equal(D.D[:, 0], (frame.vertices - base.vertices).ravel())

    def test_columnwise_oracle(self, rng):
        base = random_mesh(rng, n=6)
        frames = [base.with_vertices(rng.normal(size=(6, 3))) for _ in range(5)]
        neutrals = [base.with_vertices(rng.normal(size=(6, 3))) for _ in range(5)]
        D = build_difference_matrix(frames, neutrals)
        for i in range(5):
            expected = (frames[i].vertices - neutrals[i].vertices).ravel()
            assert np.array_equal(D.D[:, i], expected)

    def test_topology_mismatch(self, rng):
        a = random_mesh(rng, n=6)
        b = random_mesh(rng, n=7)
        with pytest.raises(TopologyMismatchError):
            build_difference_matrix([a], [b])

    def test_empty_input(self):
        with pytest.raises(ValueError):
            build_difference_matrix([], [])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            DeformationMatrix(np.array([[np.nan]] * 3))


@pytest.fixture(scope="module")
def template():
    return make_template(8)  # n = 64


def unconstrained_cfg(h, **kw):
    base = dict(
        h=h,
        sparsity_weight=0.0,
        local_support_radius=np.inf,
        support_cap=1.0,
        max_outer_iters=1000,
        tol=1e-14,
    )
    base.update(kw)
    return SolverConfig(**base)


class TestFit:
    def test_rank_one_exact(self, template, rng):
        n = template.n
        b = np.zeros(3 * n)
        b[: 3 * 12] = rng.normal(size=36)
        scales = rng.uniform(0.5, 2.0, size=9)
        D = DeformationMatrix(np.outer(b, scales))
        model = fit_splocs(D, template, unconstrained_cfg(1))
        rel = np.linalg.norm(D.D - model.B @ model.C) / np.linalg.norm(D.D)
        assert rel <= 1e-6

    def test_zero_matrix(self, template):
        D = DeformationMatrix(np.zeros((3 * template.n, 5)))
        model = fit_splocs(D, template, unconstrained_cfg(2))
        assert np.all(model.C == 0.0)
        assert model.objective_history[-1] == 0.0
        model.check_constraints()

    def test_planted_disjoint_supports(self, rng):
        template = make_template(14)
        rng_local = np.random.default_rng(7)
        true_B = plant_components(template, 4, 0.2, rng_local)
        true_C = rng_local.uniform(-2, 2, size=(4, 40))
        D = DeformationMatrix(true_B @ true_C)
        cfg = SolverConfig(
            h=4,
            sparsity_weight=0.0,
            local_support_radius=0.25,
            support_cap=0.4,
            max_outer_iters=300,
            tol=1e-12,
        )
        model = fit_splocs(D, template, cfg)
        scores = greedy_jaccard(true_B, model.B)
        assert all(s >= 0.8 for s in scores), scores

    def test_objective_monotone_and_constraints_each_iteration(self, template, rng):
        D = DeformationMatrix(rng.normal(size=(3 * template.n, 20)))
        seen = []

        def check(B, C, obj):
            seen.append(obj)
            probe = SplocsModel(
                B=B, C=C, template=template, constraint_mode=UNIT_MAX_ABS, support_cap=0.3
            )
            probe.check_constraints()

        cfg = SolverConfig(
            h=3,
            sparsity_weight=0.5,
            local_support_radius=0.4,
            support_cap=0.3,
            max_outer_iters=50,
            tol=1e-10,
        )
        fit_splocs(D, template, cfg, on_iteration=check)
        assert len(seen) >= 2
        assert all(b <= a + 1e-9 for a, b in zip(seen, seen[1:]))

    def test_nonneg_mode_constraints(self, template, rng):
        D = DeformationMatrix(rng.normal(size=(3 * template.n, 12)))
        cfg = SolverConfig(
            h=3,
            sparsity_weight=0.1,
            local_support_radius=0.5,
            constraint_mode=UNIT_MAX_NONNEG,
            max_outer_iters=40,
            tol=1e-9,
        )
        model = fit_splocs(D, template, cfg)
        assert model.B.min() >= 0.0
        for k in range(model.h):
            assert model.B[:, k].max() == pytest.approx(1.0, abs=1e-9)

    def test_svd_cross_check_full_h(self, template, rng):
        # with no sparsity and full h the fit must reach the best rank-h error
        D = DeformationMatrix(rng.normal(size=(3 * template.n, 6)))
        h = min(3 * template.n, 6)
        model = fit_splocs(D, template, unconstrained_cfg(h, max_outer_iters=2000))
        err = np.linalg.norm(D.D - model.B @ model.C)
        sv = np.linalg.svd(D.D, compute_uv=False)
        svd_err = float(np.sqrt(np.sum(sv[h:] ** 2)))
        assert err <= max(svd_err * (1 + 1e-4), 1e-8)

    def test_determinism_bitwise(self, template, rng):
        D = DeformationMatrix(rng.normal(size=(3 * template.n, 15)))
        cfg = SolverConfig(
            h=4, sparsity_weight=0.2, local_support_radius=0.3, max_outer_iters=30,
            tol=1e-9, rng_seed=42,
        )
        m1 = fit_splocs(D, template, cfg)
        m2 = fit_splocs(D, template, cfg)
        assert np.array_equal(m1.B, m2.B)
        assert np.array_equal(m1.C, m2.C)

    def test_warns_when_h_exceeds_samples(self, template):
        D = DeformationMatrix(np.ones((3 * template.n, 2)))
        with pytest.warns(UserWarning, match="rank deficient"):
            fit_splocs(D, template, unconstrained_cfg(3, max_outer_iters=5))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(h=0)
        with pytest.raises(ValueError):
            SolverConfig(h=1, sparsity_weight=-1.0)
        with pytest.raises(ValueError):
            SolverConfig(h=1, constraint_mode="bogus")
        with pytest.raises(ValueError):
            SolverConfig(h=1, support_cap=0.0)

    def test_sparsity_zeroes_weak_components(self, template, rng):
        # strong sparsity wipes out weights entirely on small data
        D = DeformationMatrix(0.01 * rng.normal(size=(3 * template.n, 8)))
        cfg = SolverConfig(
            h=2,
            sparsity_weight=1e3,
            local_support_radius=0.5,
            max_outer_iters=30,
            tol=1e-9,
        )
        model = fit_splocs(D, template, cfg)
        assert np.linalg.norm(model.C) <= 1e-6


class TestSynthesizeProject:
    @pytest.fixture()
    def model(self, template, rng):
        D = DeformationMatrix(rng.normal(size=(3 * template.n, 10)))
        return fit_splocs(D, template, unconstrained_cfg(3, max_outer_iters=50))

    def test_zero_weights(self, model):
        fld = synthesize(model, np.zeros(model.h))
        assert np.all(fld.displacements == 0.0)

    def test_weights_from_sample_column(self, model, template, rng):
        j = 2
        fld = synthesize(model, model.C[:, j])
        assert np.array_equal(fld.displacements, model.B @ model.C[:, j])

    def test_matvec_oracle(self, model, rng):
        w = rng.normal(size=model.h)
        fld = synthesize(model, w)
        expected = np.array(
            [sum(model.B[r, k] * w[k] for k in range(model.h)) for r in range(model.B.shape[0])]
        )
        assert np.abs(fld.displacements - expected).max() <= 1e-12

    def test_length_mismatch(self, model):
        with pytest.raises(ValueError):
            synthesize(model, np.zeros(model.h + 1))

    def test_project_recovers_exact_weights(self, model, rng):
        w = rng.normal(size=model.h)
        fld = synthesize(model, w)
        back = project(model, fld)
        assert np.abs(back - w).max() <= 1e-6

    def test_project_zero_field(self, model):
        w = project(model, DeformationField(np.zeros(model.B.shape[0])))
        assert np.abs(w).max() <= 1e-12

    def test_residual_orthogonal_to_span(self, model, rng):
        fld = DeformationField(rng.normal(size=model.B.shape[0]))
        w = project(model, fld)
        residual = fld.displacements - model.B @ w
        assert np.abs(model.B.T @ residual).max() <= 1e-6

    def test_project_then_synthesize_is_orthogonal_projection(self, model, rng):
        fld = DeformationField(rng.normal(size=model.B.shape[0]))
        recon = synthesize(model, project(model, fld))
        residual = fld.displacements - recon.displacements
        for k in range(model.h):
            assert abs(model.B[:, k] @ residual) <= 1e-6

    def test_project_matrix_matches_project(self, model, rng):
        D = DeformationMatrix(rng.normal(size=(model.B.shape[0], 7)))
        W = project_matrix(model, D)
        for i in range(7):
            assert np.allclose(W[i], project(model, DeformationField(D.D[:, i])), atol=1e-12)


class TestMeanShape:
    def test_single_field(self, template, rng):
        fld = DeformationField(rng.normal(size=3 * template.n))
        out = mean_shape([fld], template)
        assert np.array_equal(out.vertices, apply(template, fld).vertices)

    def test_cancellation(self, template, rng):
        fld = DeformationField(rng.normal(size=3 * template.n))
        neg = DeformationField(-fld.displacements)
        out = mean_shape([fld, neg], template)
        assert np.abs(out.vertices - template.vertices).max() <= 1e-15

    def test_mean_oracle(self, template, rng):
        fields = [DeformationField(rng.normal(size=3 * template.n)) for _ in range(5)]
        out = mean_shape(fields, template)
        expected = template.vertices + np.mean(
            [f.per_vertex() for f in fields], axis=0
        )
        assert np.abs(out.vertices - expected).max() <= 1e-15

    def test_empty_list(self, template):
        with pytest.raises(ValueError):
            mean_shape([], template)


class TestPersistence:
    def test_roundtrip(self, template, rng, tmp_path):
        D = DeformationMatrix(rng.normal(size=(3 * template.n, 8)))
        model = fit_splocs(D, template, unconstrained_cfg(2, max_outer_iters=20))
        path = tmp_path / "model.npz"
        save_splocs_model(model, path)
        back = load_splocs_model(path)
        assert np.array_equal(back.B, model.B)
        assert np.array_equal(back.C, model.C)
        assert back.constraint_mode == model.constraint_mode
        assert np.array_equal(back.template.vertices, model.template.vertices)

    def test_kind_guard(self, template, rng, tmp_path):
        from affectsynth.modelio import ModelFormatError, load_morphable_model

        D = DeformationMatrix(rng.normal(size=(3 * template.n, 4)))
        model = fit_splocs(D, template, unconstrained_cfg(1, max_outer_iters=10))
        path = tmp_path / "model.npz"
        save_splocs_model(model, path)
        with pytest.raises(ModelFormatError, match="kind"):
            load_morphable_model(path)
