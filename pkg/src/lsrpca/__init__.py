"""Single-pass randomized PCA over row-sliced out-of-core matrices."""
from .errors import (
    ConfigError, CorruptSliceError, LsrpcaError, ParseError, PreconditionError,
    RankDeficientError, ShapeError, SliceNotFoundError, StorageError,
)
from .normalize import NormStats, apply_norm, fit_norm
from .qr import QrState, householder_qr, qr_init, qr_update
from .rpca import ProjectionModel, baseline_rpca, exact_pca, ls_rpca, project, rp_model
from .sketch import GaussianSketch, make_gaussian, rp_project
from .store import SliceStore, SliceWriter, partition

__version__ = "0.1.0"
