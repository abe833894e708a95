"""Mesh variational auto-encoder with simplification-based pooling."""

from .mesh import Mesh, MeshError, build_adjacency, load_obj, save_obj
from .simplify import Hierarchy, build_hierarchy
from .vae import ArchSpec, MeshVAE, TrainConfig, build_model, count_parameters, train

__version__ = "0.1.0"

__all__ = [
    "Mesh", "MeshError", "build_adjacency", "load_obj", "save_obj",
    "Hierarchy", "build_hierarchy",
    "ArchSpec", "MeshVAE", "TrainConfig", "build_model", "count_parameters", "train",
]
