"""Multicoated supermasks and weight folding for GNNs on frozen random weights."""

from .compressor import PackedModel, memory_report, pack, sparse_inference, unpack
from .config import RunConfig
from .data import SyntheticSpec, generate_synthetic, load_dataset
from .graph import CsrMatrix, Graph, normalize_adjacency, spmm
from .models import Architecture, FoldSpec, ModelSpec, build_model, forward
from .supermask import SparsityPlan, ThresholdMode, bits_per_weight, multicoat_masks
from .trainer import TrainConfig, make_plan, train

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "CsrMatrix",
    "FoldSpec",
    "Graph",
    "ModelSpec",
    "PackedModel",
    "RunConfig",
    "SparsityPlan",
    "SyntheticSpec",
    "ThresholdMode",
    "TrainConfig",
    "bits_per_weight",
    "build_model",
    "forward",
    "generate_synthetic",
    "load_dataset",
    "make_plan",
    "memory_report",
    "multicoat_masks",
    "normalize_adjacency",
    "pack",
    "sparse_inference",
    "spmm",
    "train",
    "unpack",
]
