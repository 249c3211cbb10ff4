import numpy as np
import pytest

from affectsynth.analysis import (
    PairedData,
    SplitConfig,
    cca_fit,
    cca_transform,
    median_heuristic_gamma,
    rbf_kernel,
    run_correlation_experiment,
    subject_split,
    svr_fit,
    svr_predict,
)
from affectsynth.blendshape import SolverConfig, build_difference_matrix
from affectsynth.synthetic import GalleryPlan, generate_gallery


def paired(X, Y, n=None):
    n = n if n is not None else len(X)
    return PairedData(X=X, Y=Y, subject_ids=tuple(f"s{i}" for i in range(n)))


class TestCca:
    def test_exact_linear_relation(self, rng):
        X = rng.normal(size=(300, 2))
        M = np.array([[1.3, -0.4], [0.7, 2.1]])
        Y = X @ M
        model = cca_fit(paired(X, Y), k=2)
        assert np.all(model.correlations >= 1.0 - 1e-6)

    def test_independent_views_near_zero(self):
        r = np.random.default_rng(99)
        X = r.normal(size=(2000, 4))
        Y = r.normal(size=(2000, 2))
        model = cca_fit(paired(X, Y), k=2)
        assert np.all(model.correlations <= 0.15)

    def test_correlations_sorted_and_bounded(self, rng):
        X = rng.normal(size=(120, 5))
        Y = 0.4 * X[:, :2] + rng.normal(size=(120, 2))
        model = cca_fit(paired(X, Y), k=2)
        assert model.correlations[0] >= model.correlations[1]
        assert np.all((model.correlations >= 0.0) & (model.correlations <= 1.0))

    def test_duplicated_rows_leave_loadings_stable(self, rng):
        X = rng.normal(size=(80, 3))
        Y = X[:, :2] + 0.1 * rng.normal(size=(80, 2))
        m1 = cca_fit(paired(X, Y), k=2)
        X2 = np.vstack([X, X])
        Y2 = np.vstack([Y, Y])
        m2 = cca_fit(paired(X2, Y2, n=160), k=2)
        for col in range(2):
            a = m1.loadings_x[:, col]
            b = m2.loadings_x[:, col]
            sign = np.sign(a @ b)
            assert np.abs(a - sign * b).max() <= 1e-6

    def test_transform_of_mean_is_zero(self, rng):
        X = rng.normal(size=(50, 3))
        Y = rng.normal(size=(50, 2))
        model = cca_fit(paired(X, Y), k=2)
        out = cca_transform(model, X.mean(axis=0, keepdims=True))
        assert np.abs(out).max() <= 1e-12

    def test_transform_matrix_product_oracle(self, rng):
        X = rng.normal(size=(60, 4))
        Y = rng.normal(size=(60, 2))
        model = cca_fit(paired(X, Y), k=2)
        probe = rng.normal(size=(7, 4))
        out = cca_transform(model, probe)
        expected = (probe - model.mean_x) @ model.loadings_x
        assert np.abs(out - expected).max() <= 1e-12

    def test_transform_keeps_rank(self, rng):
        X = rng.normal(size=(100, 2))
        Y = X @ np.array([[0.5, 1.0], [-1.0, 0.3]]) + 0.01 * rng.normal(size=(100, 2))
        model = cca_fit(paired(X, Y), k=2)
        z = cca_transform(model, X)
        assert np.linalg.matrix_rank(z) == 2

    def test_correlations_invariant_under_affine_view_transform(self, rng):
        X = rng.normal(size=(400, 3))
        Y = X[:, :2] + 0.3 * rng.normal(size=(400, 2))
        base = cca_fit(paired(X, Y), k=2).correlations
        A = np.array([[1.4, 0.2, 0.0], [-0.3, 0.9, 0.1], [0.0, 0.5, 1.1]])
        shifted = cca_fit(paired(X @ A + 0.7, Y), k=2).correlations
        assert np.abs(base - shifted).max() <= 1e-4

    def test_dimension_checks(self, rng):
        X = rng.normal(size=(30, 3))
        Y = rng.normal(size=(30, 2))
        with pytest.raises(ValueError, match="k="):
            cca_fit(paired(X, Y), k=3)
        model = cca_fit(paired(X, Y), k=2)
        with pytest.raises(ValueError):
            cca_transform(model, rng.normal(size=(5, 4)))


class TestSvr:
    def test_constant_target(self, rng):
        X = rng.normal(size=(40, 3))
        model = svr_fit(X, np.full(40, 1.7))
        pred = svr_predict(model, X)
        assert len(model.dual_coeffs) == 0
        assert np.abs(pred - 1.7).max() <= model.epsilon + 1e-12

    def test_smooth_function_holdout(self):
        r = np.random.default_rng(5)
        x = np.linspace(-2, 2, 160).reshape(-1, 1)
        y = np.sin(1.5 * x).ravel()
        train = np.ones(160, dtype=bool)
        train[::5] = False
        model = svr_fit(x[train], y[train], C=10.0, epsilon=0.01)
        pred = svr_predict(model, x[~train])
        assert np.mean((pred - y[~train]) ** 2) <= 1e-2

    def test_epsilon_wider_than_range(self, rng):
        X = rng.normal(size=(30, 2))
        y = rng.uniform(-1, 1, size=30)
        model = svr_fit(X, y, epsilon=5.0)
        assert len(model.dual_coeffs) == 0

    def test_duals_within_box(self, rng):
        X = rng.normal(size=(50, 2))
        y = X[:, 0] + 0.3 * rng.normal(size=50)
        model = svr_fit(X, y, C=0.7, epsilon=0.05)
        assert np.abs(model.dual_coeffs).max() <= 0.7 + 1e-12

    def test_kkt_satisfied_at_solution(self, rng):
        X = rng.normal(size=(60, 2))
        y = np.tanh(X[:, 0]) - 0.5 * X[:, 1]
        model = svr_fit(X, y, C=2.0, epsilon=0.02, kkt_tol=1e-3)
        # residual check against the epsilon tube conditions
        pred = svr_predict(model, X)
        resid = y - pred
        tol = 1e-3 + 1e-9
        full = np.zeros(len(X))
        sv_map = {tuple(v): c for v, c in zip(model.support_vectors, model.dual_coeffs)}
        for i, row in enumerate(X):
            full[i] = sv_map.get(tuple(row), 0.0)
        for i in range(len(X)):
            b = full[i]
            if abs(b) <= 1e-12:
                assert abs(resid[i]) <= model.epsilon + tol
            elif b >= model.C - 1e-9:
                assert resid[i] >= model.epsilon - tol
            elif b <= -model.C + 1e-9:
                assert resid[i] <= -model.epsilon + tol
            elif b > 0:
                assert abs(resid[i] - model.epsilon) <= tol
            else:
                assert abs(resid[i] + model.epsilon) <= tol

    def test_determinism(self, rng):
        X = rng.normal(size=(45, 2))
        y = X[:, 0] ** 2 + rng.normal(size=45) * 0.1
        m1 = svr_fit(X, y, C=1.0)
        m2 = svr_fit(X, y, C=1.0)
        assert np.array_equal(m1.dual_coeffs, m2.dual_coeffs)
        assert m1.bias == m2.bias

    def test_prediction_invariant_to_support_vector_order(self, rng):
        from affectsynth.analysis import SvrModel

        X = rng.normal(size=(40, 2))
        y = np.sin(X[:, 0])
        model = svr_fit(X, y, C=5.0, epsilon=0.01)
        assert len(model.dual_coeffs) > 1
        perm = rng.permutation(len(model.dual_coeffs))
        shuffled = SvrModel(
            support_vectors=model.support_vectors[perm],
            dual_coeffs=model.dual_coeffs[perm],
            bias=model.bias,
            gamma=model.gamma,
            epsilon=model.epsilon,
            C=model.C,
        )
        probe = rng.normal(size=(15, 2))
        assert np.allclose(
            svr_predict(model, probe), svr_predict(shuffled, probe), atol=1e-12
        )

    def test_gamma_median_heuristic(self, rng):
        X = rng.normal(size=(30, 3))
        gamma = median_heuristic_gamma(X)
        sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
        med = np.median(np.sqrt(sq[np.triu_indices(30, k=1)]))
        assert gamma == pytest.approx(1.0 / (2.0 * med**2), rel=1e-9)

    def test_kernel_definition(self, rng):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(5, 3))
        K = rbf_kernel(a, b, gamma=0.3)
        for i in range(4):
            for j in range(5):
                expected = np.exp(-0.3 * np.sum((a[i] - b[j]) ** 2))
                assert K[i, j] == pytest.approx(expected, rel=1e-12)

    def test_validation(self, rng):
        X = rng.normal(size=(10, 2))
        y = rng.normal(size=10)
        with pytest.raises(ValueError):
            svr_fit(X, y, C=-1.0)
        with pytest.raises(ValueError):
            svr_fit(X, y, epsilon=-0.1)
        with pytest.raises(ValueError):
            svr_fit(X, y[:5])


class TestSubjectSplit:
    def test_disjoint(self):
        ids = [f"s{i % 7}" for i in range(70)]
        train, test = subject_split(ids, SplitConfig(test_fraction=0.3, seed=1))
        assert not np.any(train & test)
        assert np.all(train | test)
        train_subjects = {ids[i] for i in np.flatnonzero(train)}
        test_subjects = {ids[i] for i in np.flatnonzero(test)}
        assert not (train_subjects & test_subjects)

    def test_single_subject_refused(self):
        with pytest.raises(ValueError, match="at least 2"):
            subject_split(["only"] * 10, SplitConfig())

    def test_deterministic(self):
        ids = [f"s{i % 9}" for i in range(45)]
        a = subject_split(ids, SplitConfig(seed=3))
        b = subject_split(ids, SplitConfig(seed=3))
        assert np.array_equal(a[0], b[0])


@pytest.fixture(scope="module")
def small_gallery():
    plan = GalleryPlan(
        subjects=10,
        sequences_per_subject=1,
        frames_per_sequence=20,
        grid_side=10,
        components=3,
        support_radius=0.16,
        va_noise=0.0,
        seed=21,
    )
    g = generate_gallery(plan)
    ids = [a.frame_id for a in g.annotations]
    frames = [g.frames[f] for f in ids]
    neutrals = [g.frames[g.annotations[f].neutral_frame_id] for f in ids]
    D = build_difference_matrix(frames, neutrals)
    labels = np.array([[a.valence, a.arousal] for a in g.annotations])
    subjects = [g.subject_of[f] for f in ids]
    return g, D, labels, subjects


class TestExperiment:
    def test_planted_linear_structure_recovered(self, small_gallery):
        g, D, labels, subjects = small_gallery
        solver = SolverConfig(
            h=3, local_support_radius=0.2, max_outer_iters=150, tol=1e-10
        )
        rows = run_correlation_experiment(
            D, g.template, labels, subjects, [3], solver, SplitConfig(seed=0)
        )
        assert rows[0].ccc_valence >= 0.95
        assert rows[0].ccc_arousal >= 0.95

    def test_label_permutation_destroys_concordance(self, small_gallery):
        g, D, labels, subjects = small_gallery
        solver = SolverConfig(
            h=3, local_support_radius=0.2, max_outer_iters=150, tol=1e-10
        )
        perm = np.random.default_rng(4).permutation(len(labels))
        rows = run_correlation_experiment(
            D, g.template, labels[perm], subjects, [3], solver, SplitConfig(seed=0)
        )
        assert abs(rows[0].ccc_valence) <= 0.1
        assert abs(rows[0].ccc_arousal) <= 0.1

    def test_label_shape_validation(self, small_gallery):
        g, D, labels, subjects = small_gallery
        solver = SolverConfig(h=2, local_support_radius=0.2)
        with pytest.raises(ValueError):
            run_correlation_experiment(
                D, g.template, labels[:, :1], subjects, [2], solver
            )
