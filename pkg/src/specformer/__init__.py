"""Spectral graph Transformer built on numpy, with numba-accelerated kernels."""

from .analysis import CondensedAttention, condense_attention
from .autodiff import Tape, Var, backward, gradient_check
from .graph import (
    SparseGraph,
    grid_graph,
    load_node_dataset,
    make_filter,
    make_synthetic_task,
    normalized_laplacian,
)
from .linalg import EigenSystem, matmul, spectral_apply, symmetric_eig, truncate_spectrum
from .model import ModelConfig, Specformer, build_bases_and_convolve, eigenvalue_encoding
from .train import MetricsReport, TrainConfig, train_nodecls, train_synthetic

__version__ = "0.1.0"
