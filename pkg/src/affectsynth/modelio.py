"""On-disk container for fitted models.

One uncompressed .npz archive per model. Common keys:

    format_version  int, currently 1 (mandatory)
    kind            "splocs" for component models, "mm" for identity models

splocs payload: B, C, constraint_mode, support_cap, objective_history,
template_vertices, template_faces.
mm payload: mean_vertices, faces, identity_basis, eigenvalues.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .blendshape import SplocsModel
from .mesh import Mesh
from .morphable import MorphableModel

FORMAT_VERSION = 1
KIND_SPLOCS = "splocs"
KIND_MM = "mm"


class ModelFormatError(ValueError):
    """File is not a model container of the expected kind/version."""


def _check_header(data, path: Path, kind: str) -> None:
    if "format_version" not in data or "kind" not in data:
        raise ModelFormatError(f"{path}: missing format_version/kind header")
    version = int(data["format_version"])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    found = str(data["kind"])
    if found != kind:
        raise ModelFormatError(f"{path}: expected kind {kind!r}, found {found!r}")


def save_splocs_model(model: SplocsModel, path: str | Path) -> None:
    np.savez(
        Path(path),
        format_version=FORMAT_VERSION,
        kind=KIND_SPLOCS,
        B=model.B,
        C=model.C,
        constraint_mode=model.constraint_mode,
        support_cap=model.support_cap,
        objective_history=model.objective_history,
        template_vertices=model.template.vertices,
        template_faces=model.template.faces,
    )


def load_splocs_model(path: str | Path) -> SplocsModel:
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        _check_header(data, path, KIND_SPLOCS)
        template = Mesh(data["template_vertices"], data["template_faces"])
        return SplocsModel(
            B=data["B"],
            C=data["C"],
            template=template,
            constraint_mode=str(data["constraint_mode"]),
            support_cap=float(data["support_cap"]),
            objective_history=data["objective_history"],
        )


def save_morphable_model(model: MorphableModel, path: str | Path) -> None:
    np.savez(
        Path(path),
        format_version=FORMAT_VERSION,
        kind=KIND_MM,
        mean_vertices=model.mean.vertices,
        faces=model.mean.faces,
        identity_basis=model.identity_basis,
        eigenvalues=model.eigenvalues,
    )


def load_morphable_model(path: str | Path) -> MorphableModel:
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        _check_header(data, path, KIND_MM)
        return MorphableModel(
            mean=Mesh(data["mean_vertices"], data["faces"]),
            identity_basis=data["identity_basis"],
            eigenvalues=data["eigenvalues"],
        )
