"""Problem builders, synthetic data and accuracy metrics for image restoration and tensor completion."""

from .ctnn import (
    CTNNProblem,
    CTNNProblemSpec,
    build_ctnn_problem,
    ctnn_mu,
    make_ctnn_instance,
    rank_correction,
    synth_lowrank_tensor,
)
from .image import (
    ImageProblem,
    ImageProblemSpec,
    build_image_problem,
    make_deblur_instance,
    make_dense_instance,
    make_sparse_instance,
    phantom,
)
from .metrics import PSNR_MAX, Metrics, MissingReference, ferror, metrics, psnr, uerror

__all__ = [
    "CTNNProblem",
    "CTNNProblemSpec",
    "build_ctnn_problem",
    "ctnn_mu",
    "make_ctnn_instance",
    "rank_correction",
    "synth_lowrank_tensor",
    "ImageProblem",
    "ImageProblemSpec",
    "build_image_problem",
    "make_deblur_instance",
    "make_dense_instance",
    "make_sparse_instance",
    "phantom",
    "PSNR_MAX",
    "Metrics",
    "MissingReference",
    "ferror",
    "metrics",
    "psnr",
    "uerror",
]
