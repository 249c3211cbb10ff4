"""Command line entry points for the affect synthesis toolkit."""

from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, pipeline, report, synthetic
from .config import AppConfig, load_config, write_config
from .blendshape import build_difference_matrix
from .gallery import GalleryManifest, build_gallery, load_gallery
from .images import save_png
from .mesh import save_mesh
from .modelio import load_morphable_model, save_morphable_model

logger = logging.getLogger("affectsynth")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load_app_config(config_path: str | None, seed: int | None) -> AppConfig:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(
            cfg, solver=dataclasses.replace(cfg.solver, rng_seed=seed)
        )
    return cfg


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="TOML configuration file.",
)
seed_option = click.option(
    "--seed", type=int, default=None, help="Override the configured RNG seed."
)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    """Synthesize facial affect from a valence-arousal target."""
    _setup_logging(verbose)


@main.command("gen-gallery")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--seed", type=int, default=0)
@click.option("--subjects", type=int, default=10)
@click.option("--sequences", type=int, default=2)
@click.option("--frames", type=int, default=15, help="Frames per sequence (incl. neutral).")
@click.option("--grid-side", type=int, default=12, help="Template resolution per axis.")
@click.option("--components", type=int, default=5, help="Planted deformation components.")
@click.option("--radius", type=float, default=0.12, help="Planted component support radius.")
@click.option("--noise", type=float, default=0.0, help="Label noise sigma.")
@click.option("--with-demo", is_flag=True, help="Also emit a demo photo + landmarks + identity model.")
def cmd_gen_gallery(out, seed, subjects, sequences, frames, grid_side, components,
                    radius, noise, with_demo):
    """Generate a deterministic synthetic gallery with known structure."""
    plan = synthetic.GalleryPlan(
        subjects=subjects,
        sequences_per_subject=sequences,
        frames_per_sequence=frames,
        grid_side=grid_side,
        components=components,
        support_radius=radius,
        va_noise=noise,
        seed=seed,
    )
    gallery = synthetic.generate_gallery(plan)
    out_dir = Path(out)
    manifest_path = synthetic.write_gallery(gallery, out_dir)

    solver_defaults = dataclasses.asdict(AppConfig().solver)
    solver_defaults.update(h=components, local_support_radius=radius, rng_seed=seed)
    from .blendshape import SolverConfig

    cfg = dataclasses.replace(AppConfig(), solver=SolverConfig(**solver_defaults))
    write_config(cfg, out_dir / "config.toml")

    if with_demo:
        model = synthetic.make_identity_model(gallery.template, modes=6, seed=seed)
        save_morphable_model(model, out_dir / "mm.npz")
        fixture = synthetic.make_image_fixture(model, seed=seed)
        synthetic.write_image_fixture(fixture, out_dir / "demo")
        manifest_path.write_text(
            manifest_path.read_text(encoding="utf-8") + 'morphable_model = "mm.npz"\n',
            encoding="utf-8",
        )
    click.echo(f"gallery written: {manifest_path} ({len(gallery.frames)} meshes)")


@main.command("build-gallery")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@seed_option
@click.option("--out", "report_dir", type=click.Path(file_okay=False), default=None,
              help="Where to write the occupancy report (defaults to the cache directory).")
def cmd_build_gallery(manifest, config_path, seed, report_dir):
    """Build per-cell means and component models for a gallery."""
    cfg = _load_app_config(config_path, seed)
    man = GalleryManifest.load(manifest)
    cache = build_gallery(man, cfg.solver)
    target = Path(report_dir) if report_dir else cache.root
    target.mkdir(parents=True, exist_ok=True)
    report.write_histogram_csv(cache.histogram, target / "grid_histogram.csv")
    report.plot_grid_histogram(cache.histogram, target / "grid_histogram.png")
    report.plot_mean_faces(cache, target / "mean_faces.png")
    click.echo(f"gallery built: {cache.root}")
    click.echo(f"populated cells: {len(cache.grid.nonempty_cells())}, "
               f"frames: {int(cache.histogram.sum())}")


@main.command("synthesize")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@seed_option
@click.option("--valence", type=float, required=True)
@click.option("--arousal", type=float, required=True)
@click.option("--intensity", type=float, default=1.0)
@click.option("--weights", default=None,
              help="Comma-separated component weights; bypasses the cell mean.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output OBJ path.")
def cmd_synthesize(manifest, config_path, seed, valence, arousal, intensity, weights, out):
    """Synthesize an expressive mesh for a target valence-arousal pair."""
    cfg = _load_app_config(config_path, seed)
    man = GalleryManifest.load(manifest)
    cache = build_gallery(man, cfg.solver)
    w = np.array([float(tok) for tok in weights.split(",")]) if weights else None
    mesh, cell, median = cache.synthesize_mesh(valence, arousal, intensity, weights=w)
    save_mesh(mesh, out)
    click.echo(
        f"mesh written: {out} (cell r{cell.row}c{cell.col}, "
        f"median V-A {median[0]:+.3f}/{median[1]:+.3f})"
    )


@main.command("process-image")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@seed_option
@click.option("--image", "image_path", required=True, type=click.Path(dir_okay=False))
@click.option("--landmarks", "landmarks_path", required=True, type=click.Path(dir_okay=False))
@click.option("--valence", type=float, required=True)
@click.option("--arousal", type=float, required=True)
@click.option("--intensity", type=float, default=1.0)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output PNG path.")
def cmd_process_image(manifest, config_path, seed, image_path, landmarks_path,
                      valence, arousal, intensity, out):
    """Impose a synthesized expression on a photo."""
    cfg = _load_app_config(config_path, seed)
    man = GalleryManifest.load(manifest)
    if man.morphable_model is None:
        raise click.ClickException("manifest has no morphable_model entry")
    cache = build_gallery(man, cfg.solver)
    model = load_morphable_model(man.morphable_model)
    request = pipeline.SynthRequest(
        valence=valence,
        arousal=arousal,
        intensity=intensity,
        image=Path(image_path),
        landmarks=Path(landmarks_path),
    )
    result = pipeline.process_image(request, cache, model, cfg)
    save_png(result.image, out)
    click.echo(
        f"image written: {out} (cell r{result.cell.row}c{result.cell.col}, "
        f"fit rmse {result.reprojection_rmse:.3f} px)"
    )


@main.command("augment")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@seed_option
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False),
              help="CSV: frame_id,subject_id,image,landmarks,valence,arousal.")
@click.option("--allowlist", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional file of human-confirmed neutral frame ids, one per line.")
@click.option("--cells", default="all",
              help="'all', a count of the most populated cells, or 'r,c;r,c' indices.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_augment(manifest, config_path, seed, dataset, allowlist, cells, out):
    """Synthesize labeled images from a dataset's neutral frames."""
    cfg = _load_app_config(config_path, seed)
    man = GalleryManifest.load(manifest)
    if man.morphable_model is None:
        raise click.ClickException("manifest has no morphable_model entry")
    cache = build_gallery(man, cfg.solver)
    model = load_morphable_model(man.morphable_model)
    frames = pipeline.load_dataset(dataset)
    allow = None
    if allowlist is not None:
        allow = {
            line.strip()
            for line in Path(allowlist).read_text(encoding="utf-8").splitlines()
            if line.strip()
        }
    targets = pipeline.pick_cells(cache, cells)
    labels = pipeline.augment_dataset(frames, targets, cache, model, cfg, out, allow)
    click.echo(f"augmentation labels: {labels}")


@main.command("evaluate")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@seed_option
@click.option("--components", default="5",
              help="Comma-separated component counts, e.g. '84,150,200'.")
@click.option("--test-fraction", type=float, default=0.2)
@click.option("--split-seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Report directory (CSV, text table, figure).")
def cmd_evaluate(manifest, config_path, seed, components, test_fraction, split_seed, out):
    """Correlation study: CCC and MSE of held-out affect predictions."""
    cfg = _load_app_config(config_path, seed)
    man = GalleryManifest.load(manifest)
    gallery = load_gallery(man)
    annotations = gallery.annotations
    frame_ids = [a.frame_id for a in annotations]
    frames = [gallery.meshes[f] for f in frame_ids]
    neutrals = [gallery.meshes[annotations[f].neutral_frame_id] for f in frame_ids]
    D = build_difference_matrix(frames, neutrals)
    labels = np.array([[a.valence, a.arousal] for a in annotations])
    subjects = [gallery.subject_of[f] for f in frame_ids]
    counts = [int(tok) for tok in components.split(",")]
    rows = analysis.run_correlation_experiment(
        D,
        gallery.template,
        labels,
        subjects,
        counts,
        cfg.solver,
        analysis.SplitConfig(test_fraction=test_fraction, seed=split_seed),
    )
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_experiment_csv(rows, out_dir / "correlation.csv")
    table = report.format_experiment_table(rows)
    (out_dir / "correlation.txt").write_text(table + "\n", encoding="utf-8")
    report.plot_experiment(rows, out_dir / "correlation.png")
    click.echo(table)


@main.command("serve")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@config_option
@seed_option
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--image", "preload_image", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Preload a session photo.")
@click.option("--landmarks", "preload_landmarks", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Preload the session landmarks.")
def cmd_serve(manifest, config_path, seed, host, port, preload_image, preload_landmarks):
    """Serve the HTTP synthesis API."""
    import uvicorn

    from .service import create_app

    cfg = _load_app_config(config_path, seed)
    man = GalleryManifest.load(manifest)
    cache = build_gallery(man, cfg.solver)
    model = load_morphable_model(man.morphable_model) if man.morphable_model else None
    app = create_app(cache, model, cfg, preload_image, preload_landmarks)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
