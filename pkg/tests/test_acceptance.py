"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import dataclasses
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from affectsynth.analysis import SplitConfig, run_correlation_experiment
from affectsynth.blendshape import (
    DeformationMatrix,
    SolverConfig,
    SplocsModel,
    UNIT_MAX_ABS,
    build_difference_matrix,
    fit_splocs,
)
from affectsynth.config import AppConfig
from affectsynth.gallery import GalleryManifest, build_gallery
from affectsynth.images import Image, Mask, load_png, png_bytes
from affectsynth.mesh import Mesh
from affectsynth.metrics import ccc, mse, pearson
from affectsynth.morphable import FitConfig, fit_3dmm, fit_shape, estimate_camera
from affectsynth.pipeline import SynthRequest, augment_dataset, load_dataset, pick_cells, process_image
from affectsynth.render import poisson_blend
from affectsynth.synthetic import (
    GalleryPlan,
    generate_gallery,
    make_identity_model,
    make_image_fixture,
    plant_components,
    write_gallery,
    write_image_fixture,
)
from affectsynth.vagrid import cell_of
from affectsynth.modelio import save_morphable_model


@contextmanager
def criterion(number, title):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number}: FAIL - {title}")
        raise
    print(f"ACCEPTANCE {number}: PASS - {title}")


def rect_dome_template(rows, cols):
    """Dome template over a rows x cols grid (n = rows * cols)."""
    ys = np.linspace(0.0, 1.0, rows)
    xs = np.linspace(0.0, 1.0, cols)
    xx, yy = np.meshgrid(xs, ys)
    zz = 0.35 * np.exp(-(((xx - 0.5) ** 2 + (yy - 0.5) ** 2) / 0.18))
    vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            faces.append((a, a + 1, a + cols + 1))
            faces.append((a, a + cols + 1, a + cols))
    return Mesh(vertices, np.array(faces, dtype=np.int64))


def test_criterion_1_sparse_solver_on_planted_gallery():
    with criterion(1, "sparse component solver on planted disjoint components"):
        template = rect_dome_template(25, 20)  # n = 500
        assert template.n == 500
        rng = np.random.default_rng(17)
        true_B = plant_components(template, 5, 0.12, rng)
        true_C = rng.uniform(-1.5, 1.5, size=(5, 300))
        D = DeformationMatrix(true_B @ true_C)

        cfg = SolverConfig(
            h=5,
            sparsity_weight=0.0,
            local_support_radius=0.15,
            support_cap=0.3,
            max_outer_iters=300,
            tol=1e-12,
            rng_seed=0,
        )
        history = []

        def check_iteration(B, C, obj):
            history.append(obj)
            SplocsModel(
                B=B, C=C, template=template,
                constraint_mode=UNIT_MAX_ABS, support_cap=cfg.support_cap,
            ).check_constraints()

        start = time.perf_counter()
        model = fit_splocs(D, template, cfg, on_iteration=check_iteration)
        elapsed = time.perf_counter() - start

        rel_err = np.linalg.norm(D.D - model.B @ model.C) / np.linalg.norm(D.D)
        assert rel_err <= 1e-3, f"relative reconstruction error {rel_err:.2e}"
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:])), "objective rose"
        assert elapsed <= 60.0, f"runtime {elapsed:.1f}s exceeds 60s"


def test_criterion_2_svd_cross_check():
    with criterion(2, "reconstruction error matches truncated SVD (sparsity 0)"):
        template = rect_dome_template(10, 10)
        rng = np.random.default_rng(23)
        D = DeformationMatrix(
            rng.normal(size=(3 * template.n, 8)) @ rng.normal(size=(8, 60))
        )
        singular = np.linalg.svd(D.D, compute_uv=False)
        for h in (1, 2, 5):
            cfg = SolverConfig(
                h=h,
                sparsity_weight=0.0,
                local_support_radius=np.inf,
                support_cap=1.0,
                max_outer_iters=3000,
                tol=1e-15,
            )
            model = fit_splocs(D, template, cfg)
            err = float(np.linalg.norm(D.D - model.B @ model.C))
            svd_err = float(np.sqrt(np.sum(singular[h:] ** 2)))
            assert abs(err - svd_err) <= 1e-4 * svd_err, (
                f"h={h}: {err:.8f} vs SVD {svd_err:.8f}"
            )


def test_criterion_3_correlation_protocol_analog():
    with criterion(3, "correlation protocol: planted CCC >= 0.9, permuted <= 0.1"):
        start = time.perf_counter()
        plan = GalleryPlan(
            subjects=20,
            sequences_per_subject=1,
            frames_per_sequence=30,
            grid_side=12,
            components=5,
            support_radius=0.12,
            va_noise=0.05,
            seed=3,
        )
        gallery = generate_gallery(plan)
        ids = [a.frame_id for a in gallery.annotations]
        frames = [gallery.frames[f] for f in ids]
        neutrals = [gallery.frames[gallery.annotations[f].neutral_frame_id] for f in ids]
        D = build_difference_matrix(frames, neutrals)
        labels = np.array([[a.valence, a.arousal] for a in gallery.annotations])
        subjects = [gallery.subject_of[f] for f in ids]
        solver = SolverConfig(
            h=5, local_support_radius=0.15, max_outer_iters=200, tol=1e-10
        )
        rows = run_correlation_experiment(
            D, gallery.template, labels, subjects, [5], solver, SplitConfig(seed=0)
        )
        assert rows[0].ccc_valence >= 0.9, f"CCC valence {rows[0].ccc_valence:.3f}"
        assert rows[0].ccc_arousal >= 0.9, f"CCC arousal {rows[0].ccc_arousal:.3f}"

        perm = np.random.default_rng(11).permutation(len(labels))
        null_rows = run_correlation_experiment(
            D, gallery.template, labels[perm], subjects, [5], solver, SplitConfig(seed=0)
        )
        assert abs(null_rows[0].ccc_valence) <= 0.1
        assert abs(null_rows[0].ccc_arousal) <= 0.1
        elapsed = time.perf_counter() - start
        assert elapsed <= 300.0, f"runtime {elapsed:.0f}s exceeds 5 min"


def test_criterion_4_metric_exactness():
    with criterion(4, "metric formulas exact against independent oracles"):
        rng = np.random.default_rng(41)

        def oracle_stats(x, y):
            n = len(x)
            mx = sum(x) / n
            my = sum(y) / n
            vx = sum((v - mx) ** 2 for v in x) / n
            vy = sum((v - my) ** 2 for v in y) / n
            cov = sum((xi - mx) * (yi - my) for xi, yi in zip(x, y)) / n
            return mx, my, vx, vy, cov

        for _ in range(1000):
            n = int(rng.integers(2, 40))
            x = rng.normal(scale=rng.uniform(0.5, 3.0), size=n)
            y = rng.normal(scale=rng.uniform(0.5, 3.0), size=n)
            mx, my, vx, vy, cov = oracle_stats(list(x), list(y))
            expected_ccc = 2 * cov / (vx + vy + (mx - my) ** 2)
            assert abs(ccc(x, y) - expected_ccc) <= 1e-12
            expected_mse = sum((a - b) ** 2 for a, b in zip(x, y)) / n
            assert abs(mse(x, y) - expected_mse) <= 1e-12
            if vx > 0 and vy > 0:
                expected_p = cov / (vx**0.5 * vy**0.5)
                assert abs(pearson(x, y) - expected_p) <= 1e-12
                assert abs(ccc(x, y)) <= abs(pearson(x, y)) + 1e-12
        x = rng.normal(size=100)
        assert ccc(x, x) == pytest.approx(1.0, abs=1e-12)
        assert ccc([1.0, 2.0, 3.0, 4.0], [1.5, 2.5, 3.5, 4.5]) == pytest.approx(
            10.0 / 11.0, abs=1e-15
        )


def test_criterion_5_poisson_blend_against_dense_solver():
    with criterion(5, "Poisson blend matches dense direct solve on <=32x32 fixtures"):
        rng = np.random.default_rng(53)

        def dense_oracle(source, target, inside):
            ys, xs = np.nonzero(inside)
            index = -np.ones(inside.shape, dtype=int)
            index[ys, xs] = np.arange(len(ys))
            out = target.data.copy()
            for ch in range(3):
                s = source.data[:, :, ch]
                t = target.data[:, :, ch]
                A = np.zeros((len(ys), len(ys)))
                b = np.zeros(len(ys))
                for k, (r, c) in enumerate(zip(ys, xs)):
                    A[k, k] = 4.0
                    b[k] = 4.0 * s[r, c]
                    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                        nr, nc = r + dr, c + dc
                        b[k] -= s[nr, nc]
                        if index[nr, nc] >= 0:
                            A[k, index[nr, nc]] = -1.0
                        else:
                            b[k] += t[nr, nc]
                out[ys, xs, ch] = np.linalg.solve(A, b)
            return np.clip(out, 0.0, 1.0)

        fixtures = []
        # random masks and images at several sizes up to 32x32
        for size, lo, hi in ((32, 6, 26), (24, 4, 19), (16, 3, 12), (9, 4, 5)):
            source = Image(rng.uniform(0, 1, size=(size, size, 3)))
            target = Image(rng.uniform(0, 1, size=(size, size, 3)))
            bitmap = np.zeros((size, size), dtype=bool)
            bitmap[lo:hi, lo:hi] = True
            fixtures.append((source, target, bitmap))
        # flat source (membrane interpolation), irregular mask
        flat = Image.blank(20, 20, (0.5, 0.5, 0.5))
        target = Image(rng.uniform(0, 1, size=(20, 20, 3)))
        bitmap = np.zeros((20, 20), dtype=bool)
        bitmap[4:16, 4:16] = True
        bitmap[8:11, 8:11] = False  # hole
        fixtures.append((flat, target, bitmap))

        for source, target, bitmap in fixtures:
            out = poisson_blend(source, target, Mask(bitmap))
            expected = dense_oracle(source, target, bitmap)
            assert np.abs(out.data - expected).max() <= 1e-6
            assert np.array_equal(out.data[~bitmap], target.data[~bitmap])

        img = Image(rng.uniform(0, 1, size=(28, 28, 3)))
        bitmap = np.zeros((28, 28), dtype=bool)
        bitmap[6:22, 5:23] = True
        same = poisson_blend(img, img, Mask(bitmap))
        assert np.abs(same.data - img.data).max() <= 1e-6


def test_criterion_6_fitting_recovers_ground_truth(template10, identity6):
    with criterion(6, "landmark fitting recovers pose and coefficients"):
        for seed in (2, 3, 4):
            fixture = make_image_fixture(identity6, size=96, seed=seed)
            recon = fit_3dmm(
                fixture.image,
                fixture.landmarks,
                identity6,
                FitConfig(regularization=1e-10, rounds=60),
            )
            assert recon.reprojection_rmse <= 0.5, f"RMSE {recon.reprojection_rmse:.3f}"
            err = np.abs(recon.coeffs - fixture.coeffs).max()
            assert err <= 1e-3, f"coefficient error {err:.2e}"

        fixture = make_image_fixture(identity6, size=96, seed=2)
        camera = estimate_camera(fixture.landmarks, identity6.instance(fixture.coeffs))
        lam = 1e-6
        previous = None
        while lam < 1e7:
            norm = float(
                np.linalg.norm(fit_shape(identity6, fixture.landmarks, camera, lam))
            )
            if previous is not None:
                assert norm <= previous + 1e-12, "coefficient norm grew with lambda"
            previous = norm
            lam *= 2.0


def test_criterion_7_grid_discretization_and_augmentation_labels(tmp_path):
    with criterion(7, "grid discretization oracle sweep and augmentation labels"):
        rng = np.random.default_rng(71)
        # 10,000-point sweep including all boundary values
        boundary = np.arange(-1.0, 1.0000001, 0.2)
        fill = 10_000 - 2 * len(boundary)
        sweep_v = np.concatenate([rng.uniform(-1, 1, size=fill), boundary, boundary])
        sweep_a = np.concatenate([rng.uniform(-1, 1, size=fill), boundary, boundary[::-1]])
        assert len(sweep_v) >= 10_000
        for v, a in zip(sweep_v, sweep_a):
            got = cell_of(float(v), float(a))
            col = min(int(math.floor((v + 1.0) / 0.2)), 9)
            row = min(int(math.floor((a + 1.0) / 0.2)), 9)
            assert (got.row, got.col) == (row, col), (v, a)

        # histogram conservation + augmentation labels on a small workspace
        plan = GalleryPlan(
            subjects=3, sequences_per_subject=1, frames_per_sequence=8,
            grid_side=10, components=3, support_radius=0.15, seed=5,
        )
        gallery = generate_gallery(plan)
        manifest_path = write_gallery(gallery, tmp_path)
        model = make_identity_model(gallery.template, modes=6, seed=0)
        save_morphable_model(model, tmp_path / "mm.npz")
        fixture = make_image_fixture(model, size=96, seed=1)
        image_path, landmarks_path = write_image_fixture(fixture, tmp_path / "demo")
        solver = SolverConfig(h=3, local_support_radius=0.2, max_outer_iters=60, tol=1e-9)
        cache = build_gallery(GalleryManifest.load(manifest_path), solver)
        assert int(cache.histogram.sum()) == len(gallery.annotations)

        dataset = tmp_path / "dataset.csv"
        dataset.write_text(
            "frame_id,subject_id,image,landmarks,valence,arousal\n"
            f"n0,subj0,{image_path},{landmarks_path},0.0,0.0\n"
        )
        cfg = dataclasses.replace(
            AppConfig(), solver=solver, fit=FitConfig(regularization=1e-9, rounds=40)
        )
        cells = pick_cells(cache, "all")
        labels_path = augment_dataset(
            load_dataset(dataset), cells, cache, model, cfg, tmp_path / "aug"
        )
        import csv

        with open(labels_path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(cells)
        for row in rows:
            from affectsynth.vagrid import CellIndex

            cell = CellIndex(int(row["cell_row"]), int(row["cell_col"]))
            median = cache.grid.median_va(cell)
            assert float(row["valence"]) == pytest.approx(median[0], abs=1e-6)
            assert float(row["arousal"]) == pytest.approx(median[1], abs=1e-6)
            in_cell = cell_of(float(row["valence"]), float(row["arousal"]))
            assert in_cell == cell


def test_criterion_8_end_to_end_identity_preservation(tmp_path):
    with criterion(8, "process-image at intensity 0 preserves the photo"):
        plan = GalleryPlan(
            subjects=3, sequences_per_subject=1, frames_per_sequence=8,
            grid_side=10, components=3, support_radius=0.15, seed=5,
        )
        gallery = generate_gallery(plan)
        manifest_path = write_gallery(gallery, tmp_path)
        model = make_identity_model(gallery.template, modes=6, seed=0)
        save_morphable_model(model, tmp_path / "mm.npz")
        fixture = make_image_fixture(model, size=96, seed=1)
        image_path, landmarks_path = write_image_fixture(fixture, tmp_path / "demo")
        solver = SolverConfig(h=3, local_support_radius=0.2, max_outer_iters=60, tol=1e-9)
        cache = build_gallery(GalleryManifest.load(manifest_path), solver)
        cfg = dataclasses.replace(
            AppConfig(), solver=solver, fit=FitConfig(regularization=1e-9, rounds=40)
        )
        request = SynthRequest(
            valence=0.2, arousal=0.2, intensity=0.0,
            image=image_path, landmarks=landmarks_path,
        )
        result = process_image(request, cache, model, cfg)
        original = load_png(image_path)
        deviation = np.abs(result.image.data - original.data)
        assert deviation.max() <= 2.0 / 255.0, f"max deviation {deviation.max() * 255:.2f}/255"

        # recompute the blend region from the same inputs: outside it the
        # output must match the photo bit for bit
        from affectsynth.mesh import load_landmarks
        from affectsynth.render import erode_mask, rasterize
        from affectsynth.transfer import compute_delta, transfer

        landmarks = load_landmarks(landmarks_path)
        recon = fit_3dmm(original, landmarks, model, cfg.fit)
        synthetic, _, _ = cache.synthesize_mesh(0.2, 0.2, 1.0)
        expressive = transfer(
            recon.mesh, compute_delta(synthetic, cache.template), 0.0
        )
        _, coverage = rasterize(
            expressive, recon.camera, recon.vertex_colors,
            original.width, original.height, background=original,
        )
        outside = ~erode_mask(coverage).bitmap
        assert np.array_equal(result.image.data[outside], original.data[outside])

        rerun = process_image(request, cache, model, cfg)
        assert png_bytes(rerun.image) == png_bytes(result.image)
