"""Facial affect synthesis in the valence-arousal space.

Pipeline: discretize annotated galleries over a 10x10 affect grid, fit
sparse localized blendshape components per cell, synthesize expressive
meshes for a target (valence, arousal) pair, carry the expression onto a
face reconstructed from a photo, and composite the render back into the
photo seamlessly. An evaluation stack (CCA, RBF-kernel SVR, concordance
metrics) quantifies how much affect information the components carry.
"""

from .analysis import (
    CcaModel,
    PairedData,
    SplitConfig,
    SvrModel,
    cca_fit,
    cca_transform,
    run_correlation_experiment,
    svr_fit,
    svr_predict,
)
from .blendshape import (
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
from .config import AppConfig, load_config
from .gallery import GalleryCache, GalleryManifest, build_gallery, load_gallery
from .images import Image, Mask, load_png, save_png
from .mesh import (
    DeformationField,
    LandmarkSet,
    Mesh,
    apply,
    diff,
    load_landmarks,
    load_mesh,
    save_landmarks,
    save_mesh,
)
from .metrics import ccc, mse, pearson
from .morphable import (
    Camera,
    FitConfig,
    MorphableModel,
    ReconstructedFace,
    estimate_camera,
    fit_3dmm,
    fit_shape,
    project_points,
    sample_texture,
)
from .pipeline import SynthRequest, process_image
from .render import erode_mask, poisson_blend, rasterize
from .transfer import compute_delta, transfer
from .vagrid import (
    Annotation,
    AnnotationSet,
    CellIndex,
    VaGrid,
    build_grid,
    cell_of,
    load_annotations,
)

__version__ = "0.1.0"
