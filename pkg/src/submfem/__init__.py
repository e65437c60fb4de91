"""Subspace mixed finite elements for real-time heterogeneous elastodynamics."""

from .cubature import (CubatureScheme, kmeans_cubature,
                       recommend_cubature_count)
from .elastic import (EnergyModel, EnergyModelKind, polar_decompose,
                      psi_density, psi_grad, psi_hess, sbar)
from .frames import Frame, FrameFormatError, export_frames, load_frames
from .fullspace import FullSpaceModel, FullState, full_space_step
from .mesh import (DiscreteOperators, MaterialField, MeshError, TetMesh,
                   build_operators, lame_from_young_poisson, load_mesh,
                   mesh_from_arrays, save_mesh)
from .metrics import (MetricsRecord, angular_momentum, compute_frame_metrics,
                      full_space_gradient_norm, write_metrics_csv)
from .scene import (Scene, SceneConfig, SceneError, build_scene, run_scene,
                    save_scene_subspace)
from .solver import (ReducedModel, SimState, SolverConfig, SolverError,
                     simulation_step, subspace_fem_step)
from .subspace import (PositionBasis, SkinningSubspace,
                       build_skinning_subspace, identity_basis, lbs_basis,
                       load_subspace, save_subspace, skinning_eigenmodes,
                       weight_laplacian)

__version__ = "0.1.0"

__all__ = [
    "CubatureScheme", "DiscreteOperators", "EnergyModel", "EnergyModelKind",
    "Frame", "FrameFormatError", "FullSpaceModel", "FullState",
    "MaterialField", "MeshError", "MetricsRecord", "PositionBasis",
    "ReducedModel", "Scene", "SceneConfig", "SceneError", "SimState",
    "SkinningSubspace", "SolverConfig", "SolverError", "TetMesh",
    "angular_momentum", "build_operators", "build_scene",
    "build_skinning_subspace", "compute_frame_metrics", "export_frames",
    "full_space_gradient_norm", "full_space_step", "identity_basis",
    "kmeans_cubature", "lame_from_young_poisson", "lbs_basis", "load_frames",
    "load_mesh", "load_subspace", "mesh_from_arrays", "polar_decompose",
    "psi_density", "psi_grad", "psi_hess", "recommend_cubature_count",
    "run_scene", "save_mesh", "save_scene_subspace", "save_subspace", "sbar",
    "simulation_step", "skinning_eigenmodes", "subspace_fem_step",
    "weight_laplacian", "write_metrics_csv",
]
