"""Shared-information analysis between deformation weights and affect labels.

Implements the correlation study: project gallery deformations onto a
fitted component basis, reduce to two canonical variates against the
(valence, arousal) labels, regress each label with an RBF-kernel support
vector machine, and score the held-out predictions with concordance and
mean squared error. The train/test split is subject-disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .blendshape import DeformationMatrix, SolverConfig, fit_splocs, project_matrix
from .mesh import Mesh


class RankDeficientError(ValueError):
    """View covariance not invertible even after the ridge."""


class SvrConvergenceError(RuntimeError):
    """SMO loop hit its iteration cap before meeting the KKT tolerance."""

    def __init__(self, violation: float, iterations: int):
        self.violation = violation
        super().__init__(
            f"SVR did not converge in {iterations} iterations "
            f"(max KKT violation {violation:.3e})"
        )


@dataclass(frozen=True)
class PairedData:
    """Per-frame feature rows X paired with (valence, arousal) rows Y."""

    X: np.ndarray  # (N, dX)
    Y: np.ndarray  # (N, 2)
    subject_ids: tuple[str, ...]

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.Y, dtype=np.float64))
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("X and Y must be 2-D")
        if x.shape[0] != y.shape[0] or x.shape[0] != len(self.subject_ids):
            raise ValueError("row counts of X, Y and subject_ids must match")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("data must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "Y", y)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))


# ---------------------------------------------------------------------------
# Canonical correlation analysis (whitening + SVD of the cross-covariance)

CCA_RIDGE = 1e-6


@dataclass(frozen=True)
class CcaModel:
    loadings_x: np.ndarray  # (dX, k)
    loadings_y: np.ndarray  # (dY, k)
    correlations: np.ndarray  # (k,) descending, in [0, 1]
    mean_x: np.ndarray
    mean_y: np.ndarray


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        raise RankDeficientError("covariance not positive definite after ridge")
    return vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T


def cca_fit(data: PairedData, k: int) -> CcaModel:
    """Loadings maximizing successive correlations between the two views.

    Each view is whitened with a ridge of 1e-6 on its covariance; the
    canonical directions come out of the SVD of the whitened
    cross-covariance.
    """
    x, y = data.X, data.Y
    n, dx = x.shape
    dy = y.shape[1]
    if k > min(dx, dy):
        raise ValueError(f"k={k} exceeds min view dimension {min(dx, dy)}")
    if n <= max(dx, dy):
        raise ValueError(f"need more than {max(dx, dy)} samples, got {n}")
    mean_x = x.mean(axis=0)
    mean_y = y.mean(axis=0)
    xc = x - mean_x
    yc = y - mean_y
    cxx = xc.T @ xc / n + CCA_RIDGE * np.eye(dx)
    cyy = yc.T @ yc / n + CCA_RIDGE * np.eye(dy)
    cxy = xc.T @ yc / n
    isx = _inv_sqrt(cxx)
    isy = _inv_sqrt(cyy)
    u, s, vt = np.linalg.svd(isx @ cxy @ isy, full_matrices=False)
    return CcaModel(
        loadings_x=isx @ u[:, :k],
        loadings_y=isy @ vt[:k].T,
        correlations=np.clip(s[:k], 0.0, 1.0),
        mean_x=mean_x,
        mean_y=mean_y,
    )


def cca_transform(model: CcaModel, x: np.ndarray) -> np.ndarray:
    """Centered rows of x projected onto the canonical directions."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.loadings_x.shape[0]:
        raise ValueError(
            f"expected {model.loadings_x.shape[0]} columns, got {x.shape}"
        )
    return (x - model.mean_x) @ model.loadings_x


# ---------------------------------------------------------------------------
# Epsilon-insensitive support vector regression, RBF kernel, solved in the
# dual by pairwise coordinate ascent over beta = alpha - alpha*.


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray  # (s, d)
    dual_coeffs: np.ndarray  # (s,) in [-C, C]
    bias: float
    gamma: float
    epsilon: float
    C: float


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def median_heuristic_gamma(x: np.ndarray) -> float:
    """1 / (2 * median^2) of the pairwise training distances."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(x * x, axis=1)[None, :]
        - 2.0 * (x @ x.T)
    )
    upper = sq[np.triu_indices(len(x), k=1)]
    med = float(np.sqrt(np.maximum(np.median(upper), 0.0))) if upper.size else 0.0
    if med <= 0.0:
        return 1.0
    return 1.0 / (2.0 * med * med)


def _dual_bands(beta: np.ndarray, C: float):
    """Classify duals into at-upper / interior+ / zero / interior- / at-lower."""
    tol = 1e-12 * max(C, 1.0)
    at_up = beta >= C - tol
    at_lo = beta <= -C + tol
    pos = (beta > tol) & ~at_up
    neg = (beta < -tol) & ~at_lo
    zero = ~(at_up | at_lo | pos | neg)
    return at_up, pos, zero, neg, at_lo


def _compute_bias(beta: np.ndarray, f_gap: np.ndarray, epsilon: float, C: float) -> float:
    """Midpoint of the bias interval the KKT conditions allow;
    f_gap = y - K beta."""
    at_up, pos, zero, neg, at_lo = _dual_bands(beta, C)
    lo_parts = [f_gap[pos] - epsilon, f_gap[neg] + epsilon,
                f_gap[at_lo] + epsilon, f_gap[zero] - epsilon]
    hi_parts = [f_gap[pos] - epsilon, f_gap[neg] + epsilon,
                f_gap[at_up] - epsilon, f_gap[zero] + epsilon]
    lo_all = np.concatenate(lo_parts)
    hi_all = np.concatenate(hi_parts)
    lo = float(lo_all.max()) if lo_all.size else -np.inf
    hi = float(hi_all.min()) if hi_all.size else np.inf
    if not np.isfinite(lo) and not np.isfinite(hi):
        return 0.0
    if not np.isfinite(lo):
        return hi
    if not np.isfinite(hi):
        return lo
    return 0.5 * (lo + hi)


def _kkt_violations(
    beta: np.ndarray, f_gap: np.ndarray, bias: float, epsilon: float, C: float
) -> np.ndarray:
    at_up, pos, zero, neg, at_lo = _dual_bands(beta, C)
    r = f_gap - bias
    v = np.zeros_like(beta)
    v[at_up] = np.maximum(0.0, epsilon - r[at_up])
    v[pos] = np.abs(r[pos] - epsilon)
    v[zero] = np.maximum(0.0, np.abs(r[zero]) - epsilon)
    v[neg] = np.abs(r[neg] + epsilon)
    v[at_lo] = np.maximum(0.0, r[at_lo] + epsilon)
    return v


def svr_fit(
    X: np.ndarray,
    y: np.ndarray,
    gamma: float | None = None,
    C: float = 1.0,
    epsilon: float = 0.01,
    kkt_tol: float = 1e-3,
    max_iter: int | None = None,
) -> SvrModel:
    """Dual SMO-style solve of epsilon-insensitive regression.

    Working pairs are picked greedily (largest KKT violation against the
    largest residual gap, index order breaking ties), which makes the
    optimization deterministic for identical inputs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(X)
    if len(y) != n:
        raise ValueError("X and y row counts differ")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("training data must be finite")
    if C <= 0 or epsilon < 0:
        raise ValueError("require C > 0 and epsilon >= 0")
    if gamma is None:
        gamma = median_heuristic_gamma(X)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if max_iter is None:
        max_iter = max(200 * n, 10_000)

    K = rbf_kernel(X, X, gamma)
    beta = np.zeros(n)
    g = np.zeros(n)  # K @ beta
    f_gap = y - g

    for _ in range(max_iter):
        bias = _compute_bias(beta, f_gap, epsilon, C)
        viol = _kkt_violations(beta, f_gap, bias, epsilon, C)
        worst = float(viol.max()) if n else 0.0
        if worst <= kkt_tol:
            break
        i = int(np.argmax(viol))
        order = np.argsort(-np.abs(f_gap - f_gap[i]), kind="stable")
        stepped = False
        for j in order:
            j = int(j)
            if j == i:
                continue
            if _pair_step(i, j, beta, g, f_gap, y, K, epsilon, C):
                stepped = True
                break
        if not stepped:
            # the worst violator cannot move against any partner
            break
    else:
        bias = _compute_bias(beta, f_gap, epsilon, C)
        viol = _kkt_violations(beta, f_gap, bias, epsilon, C)
        raise SvrConvergenceError(float(viol.max()), max_iter)

    bias = _compute_bias(beta, f_gap, epsilon, C)
    viol = _kkt_violations(beta, f_gap, bias, epsilon, C)
    if n and float(viol.max()) > kkt_tol:
        raise SvrConvergenceError(float(viol.max()), max_iter)

    keep = np.abs(beta) > 1e-12 * C
    return SvrModel(
        support_vectors=X[keep].copy(),
        dual_coeffs=beta[keep].copy(),
        bias=bias,
        gamma=gamma,
        epsilon=epsilon,
        C=C,
    )


def _pair_step(i, j, beta, g, f_gap, y, K, epsilon, C) -> bool:
    """Jointly optimize (beta_i, beta_j) with their sum held fixed.

    The restricted objective is a concave quadratic in the transfer t with
    kinks where either coefficient crosses zero; all stationary points,
    kinks, and box corners are evaluated exactly and the best kept."""
    t_lo = max(-C - beta[i], beta[j] - C)
    t_hi = min(C - beta[i], beta[j] + C)
    if t_hi <= t_lo + 1e-15:
        return False
    eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
    delta = f_gap[i] - f_gap[j]  # (y_i - g_i) - (y_j - g_j)

    candidates = [t_lo, t_hi]
    for kink in (-beta[i], beta[j]):
        if t_lo < kink < t_hi:
            candidates.append(kink)
    if eta > 1e-300:
        for si in (-1.0, 1.0):
            for sj in (-1.0, 1.0):
                t = (delta - epsilon * (si - sj)) / eta
                if t_lo <= t <= t_hi:
                    candidates.append(t)

    def gain(t: float) -> float:
        return (
            t * delta
            - 0.5 * eta * t * t
            - epsilon * (abs(beta[i] + t) - abs(beta[i]))
            - epsilon * (abs(beta[j] - t) - abs(beta[j]))
        )

    best_t = 0.0
    best_gain = 0.0
    for t in candidates:
        value = gain(float(t))
        if value > best_gain + 1e-15:
            best_t, best_gain = float(t), value
    if best_gain <= 1e-14:
        return False
    beta[i] = min(max(beta[i] + best_t, -C), C)
    beta[j] = min(max(beta[j] - best_t, -C), C)
    change = best_t * (K[:, i] - K[:, j])
    g += change
    f_gap -= change
    return True


def svr_predict(model: SvrModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(model.dual_coeffs) == 0:
        return np.full(len(X), model.bias)
    k = rbf_kernel(X, model.support_vectors, model.gamma)
    return k @ model.dual_coeffs + model.bias


# ---------------------------------------------------------------------------
# Experiment protocol


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class ExperimentRow:
    components: int
    ccc_valence: float
    ccc_arousal: float
    mse_valence: float
    mse_arousal: float


def subject_split(subject_ids, cfg: SplitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Subject-disjoint boolean train/test masks over the frames."""
    subjects = sorted(set(subject_ids))
    if len(subjects) < 2:
        raise ValueError("subject-disjoint split needs at least 2 subjects")
    rng = np.random.default_rng(cfg.seed)
    shuffled = list(subjects)
    rng.shuffle(shuffled)
    n_test = max(1, round(cfg.test_fraction * len(subjects)))
    if n_test >= len(subjects):
        n_test = len(subjects) - 1
    test_subjects = set(shuffled[:n_test])
    ids = np.asarray(list(subject_ids))
    test_mask = np.isin(ids, sorted(test_subjects))
    return ~test_mask, test_mask


def run_correlation_experiment(
    D: DeformationMatrix,
    template: Mesh,
    labels: np.ndarray,
    subject_ids,
    component_counts: list[int],
    solver: SolverConfig,
    split: SplitConfig | None = None,
    svr_C: float = 1.0,
    svr_epsilon: float = 0.01,
) -> list[ExperimentRow]:
    """Concordance/MSE of held-out affect predictions per component count.

    For each entry of component_counts: fit the sparse components on the
    training frames only, project every frame onto them, reduce to two
    canonical dimensions (fit on train), regress valence and arousal with
    one RBF SVR each, and score the test frames.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[1] != 2:
        raise ValueError("labels must be (N, 2) valence/arousal rows")
    if labels.shape[0] != D.m:
        raise ValueError("label count does not match sample count")
    split = split or SplitConfig()
    train_mask, test_mask = subject_split(subject_ids, split)

    rows = []
    for h in component_counts:
        cfg = replace(solver, h=h)
        d_train = DeformationMatrix(D.D[:, train_mask])
        model = fit_splocs(d_train, template, cfg)
        weights = project_matrix(model, D)
        data = PairedData(
            X=weights[train_mask],
            Y=labels[train_mask],
            subject_ids=tuple(np.asarray(list(subject_ids))[train_mask]),
        )
        cca = cca_fit(data, k=2)
        z_train = cca_transform(cca, weights[train_mask])
        z_test = cca_transform(cca, weights[test_mask])
        preds = {}
        for col, name in ((0, "valence"), (1, "arousal")):
            svr = svr_fit(
                z_train, labels[train_mask, col], C=svr_C, epsilon=svr_epsilon
            )
            preds[name] = svr_predict(svr, z_test)
        truth_v = labels[test_mask, 0]
        truth_a = labels[test_mask, 1]
        rows.append(
            ExperimentRow(
                components=h,
                ccc_valence=metrics.ccc(truth_v, preds["valence"]),
                ccc_arousal=metrics.ccc(truth_a, preds["arousal"]),
                mse_valence=metrics.mse(truth_v, preds["valence"]),
                mse_arousal=metrics.mse(truth_a, preds["arousal"]),
            )
        )
    return rows
