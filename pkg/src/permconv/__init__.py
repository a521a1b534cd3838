"""Mesh autoencoder built on learnable per-vertex neighbor soft-permutations.

The core layer gathers each vertex's padded one-ring into a fixed-width
block, recombines the neighbor slots with a trainable per-vertex matrix,
and applies filters shared across the mesh. Around it: quadric-decimation
sampling hierarchies, a small reverse-mode autodiff engine, training and
ablation drivers, and synthetic fixed-topology datasets.
"""
from .backend import COMPILED, IMPL
from .mesh import (MeshError, MeshTopology, NeighborTable, build_neighbor_table,
                   gather_neighbors, load_neighbor_table, permute_table_slots,
                   save_neighbor_table)
from .meshio import load_mesh, save_mesh
from .autodiff import (Parameter, Tensor, finite_difference_check,
                       load_parameters, save_parameters)
from .conv import SoftPermConv, identity_mixing
from .sampling import (SamplingOperator, apply_sampling, build_hierarchy,
                       build_sampling_operator, build_upsampler, load_sampling,
                       quadric_decimate, save_sampling)
from .model import (MeshAutoencoder, Normalizer, PCABaseline,
                    reconstruction_error)
from .train import (Adam, TrainConfig, TrainingDiverged, TrainingLog, evaluate,
                    save_checkpoint, train, validation_split)
from .synthetic import (Dataset, SyntheticSpec, generate_synthetic, grid,
                        icosphere, load_dataset)
from .experiment import (ConfigError, ExperimentConfig, build_model,
                         export_error_map, load_checkpoint_dir,
                         neighbor_size_sweep, run_experiment)

__version__ = "0.1.0"

__all__ = [
    "COMPILED", "IMPL", "MeshError", "MeshTopology", "NeighborTable",
    "build_neighbor_table", "gather_neighbors", "load_neighbor_table",
    "permute_table_slots", "save_neighbor_table", "load_mesh", "save_mesh",
    "Parameter", "Tensor", "finite_difference_check", "load_parameters",
    "save_parameters", "SoftPermConv", "identity_mixing", "SamplingOperator",
    "apply_sampling", "build_hierarchy", "build_sampling_operator",
    "build_upsampler", "load_sampling", "quadric_decimate", "save_sampling",
    "MeshAutoencoder", "Normalizer", "PCABaseline", "reconstruction_error",
    "Adam", "TrainConfig", "TrainingDiverged", "TrainingLog", "evaluate",
    "save_checkpoint", "train", "validation_split", "Dataset", "SyntheticSpec",
    "generate_synthetic", "grid", "icosphere", "load_dataset", "ConfigError",
    "ExperimentConfig", "build_model", "export_error_map", "load_checkpoint_dir",
    "neighbor_size_sweep", "run_experiment",
]
