"""Scene configuration (JSON), assembly, and headless simulation runs.

A scene file bundles geometry, per-region materials, pinning, subspace
parameters, solver settings, a timed external-force script, and named
vertex groups for metrics. See ``SceneConfig.from_dict`` for the schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .boxmesh import assign_regions_by_axis, box_mesh, vertices_in_box
from .cubature import (CubatureScheme, kmeans_cubature,
                       recommend_cubature_count)
from .elastic import EnergyModelKind
from .frames import Frame
from .fullspace import FullSpaceModel, full_space_step
from .mesh import (MaterialField, MeshError, TetMesh, build_operators,
                   load_mesh, unflatten_positions)
from .metrics import MetricsRecord, compute_frame_metrics
from .solver import (ReducedModel, SolverConfig, SolverError,
                     simulation_step, subspace_fem_step)
from .subspace import (SkinningSubspace, build_skinning_subspace,
                       load_subspace, save_subspace)

SOLVER_NAMES = ("mfem", "fem", "full")

_MODEL_NAMES = {"arap": EnergyModelKind.ARAP,
                "fcr": EnergyModelKind.FCR,
                "snh": EnergyModelKind.SNH}


class SceneError(ValueError):
    """Raised on invalid or inconsistent scene configuration."""


@dataclass(frozen=True)
class PullForce:
    """Timed constant force on a vertex set (per-vertex, Newtons)."""

    vertices: NDArray[np.int64] | None   # explicit list, or None for a box
    box: tuple[NDArray[np.float64], NDArray[np.float64]] | None
    direction: NDArray[np.float64]       # unit vector
    magnitude: float
    start: float
    stop: float

    def active(self, t: float) -> bool:
        return self.start <= t < self.stop


@dataclass(frozen=True)
class SceneConfig:
    mesh_spec: dict
    materials: dict[int, tuple[float, float, float]]  # region -> (E, nu, rho)
    pinned_spec: dict | None
    modes: int
    cubature: int | None                 # None -> 20 per mode
    seed: int
    solver: SolverConfig
    pulls: tuple[PullForce, ...]
    groups: dict[str, tuple[NDArray[np.float64], NDArray[np.float64]]]
    subspace_artifact: str | None
    output: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "SceneConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SceneError(f"cannot read scene file {path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "SceneConfig":
        """Parse and validate a scene dictionary.

        Schema (defaults in parentheses)::

            mesh:      {"path": file}  or
                       {"box": {"size", "divisions", "origin" ([0,0,0]),
                                "region_axis", "region_split" (optional)}}
            materials: {region_id: {"youngs", "poisson" (0.3),
                                    "density" (1000)}}
            pinned:    {"vertices": [...]} or {"box": {"min", "max"}}  (none)
            subspace:  {"modes", "cubature" (20*modes), "seed" (0),
                        "artifact" (optional .npz path)}
            solver:    {"dt" (1/60), "iterations" (10), "tol" (1e-6),
                        "model" ("fcr"), "gamma" (0), "quad_refactor" (false),
                        "gravity" ([0,-9.8,0])}
            forces:    {"pulls": [{"vertices" or "box", "direction",
                                   "magnitude", "start" (0), "stop" (inf)}]}
            groups:    {name: {"min", "max"}}
            output:    {"frames", "metrics"}  (optional paths)
        """
        if not isinstance(data, dict):
            raise SceneError("scene must be a JSON object")
        base_dir = Path(base_dir)
        try:
            mesh_spec = dict(data["mesh"])
            if "path" in mesh_spec:
                mesh_spec["path"] = str(base_dir / mesh_spec["path"])
            elif "box" not in mesh_spec:
                raise SceneError("mesh must specify 'path' or 'box'")

            materials = {}
            for key, mat in dict(data["materials"]).items():
                materials[int(key)] = (float(mat["youngs"]),
                                       float(mat.get("poisson", 0.3)),
                                       float(mat.get("density", 1000.0)))
            if not materials:
                raise SceneError("at least one material region required")

            sub = dict(data.get("subspace", {}))
            modes = int(sub.get("modes", 10))
            if modes < 1:
                raise SceneError("subspace mode count must be >= 1")
            cubature = sub.get("cubature")
            cubature = None if cubature is None else int(cubature)
            seed = int(sub.get("seed", 0))
            artifact = sub.get("artifact")
            artifact = None if artifact is None else str(base_dir / artifact)

            solver = _parse_solver(dict(data.get("solver", {})))

            pulls = tuple(_parse_pull(p)
                          for p in data.get("forces", {}).get("pulls", []))

            groups = {}
            for name, box in dict(data.get("groups", {})).items():
                groups[str(name)] = (np.asarray(box["min"], dtype=np.float64),
                                     np.asarray(box["max"], dtype=np.float64))

            pinned_spec = data.get("pinned")
            output = {k: str(v) for k, v in dict(data.get("output", {})).items()}
        except SceneError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"invalid scene configuration: {exc}") from exc
        return cls(mesh_spec, materials, pinned_spec, modes, cubature, seed,
                   solver, pulls, groups, artifact, output)


def _parse_solver(spec: dict) -> SolverConfig:
    model_name = str(spec.get("model", "fcr")).lower()
    if model_name not in _MODEL_NAMES:
        raise SceneError(f"unknown energy model {model_name!r}")
    try:
        return SolverConfig(
            dt=float(spec.get("dt", 1.0 / 60.0)),
            max_iterations=int(spec.get("iterations", 10)),
            tol_du=float(spec.get("tol", 1e-6)),
            gravity=np.asarray(spec.get("gravity", [0.0, -9.8, 0.0]),
                               dtype=np.float64),
            gamma=float(spec.get("gamma", 0.0)),
            quad_refactor=bool(spec.get("quad_refactor", False)),
            model=_MODEL_NAMES[model_name])
    except ValueError as exc:
        raise SceneError(f"invalid solver settings: {exc}") from exc


def _parse_pull(spec: dict) -> PullForce:
    direction = np.asarray(spec["direction"], dtype=np.float64)
    norm = np.linalg.norm(direction)
    if not np.isfinite(norm) or norm == 0.0:
        raise SceneError("pull direction must be a nonzero vector")
    vertices = box = None
    if "vertices" in spec:
        vertices = np.asarray(spec["vertices"], dtype=np.int64)
    elif "box" in spec:
        box = (np.asarray(spec["box"]["min"], dtype=np.float64),
               np.asarray(spec["box"]["max"], dtype=np.float64))
    else:
        raise SceneError("pull needs a 'vertices' list or a 'box' selector")
    return PullForce(vertices, box, direction / norm,
                     float(spec["magnitude"]), float(spec.get("start", 0.0)),
                     float(spec.get("stop", np.inf)))


class Scene:
    """A fully assembled scene: mesh, operators, subspace, cubature."""

    def __init__(self, config: SceneConfig, mesh: TetMesh,
                 materials: MaterialField, subspace: SkinningSubspace,
                 scheme: CubatureScheme):
        self.config = config
        self.mesh = mesh
        self.materials = materials
        self.ops = build_operators(mesh, materials)
        self.subspace = subspace
        self.scheme = scheme
        self._pull_vertices = [self._resolve_pull(p) for p in config.pulls]

    # -- assembly --------------------------------------------------------

    def _resolve_pull(self, pull: PullForce) -> NDArray[np.int64]:
        if pull.vertices is not None:
            if pull.vertices.size and (pull.vertices.min() < 0 or
                                       pull.vertices.max() >= self.mesh.num_vertices):
                raise SceneError("pull references a vertex out of range")
            return pull.vertices
        return vertices_in_box(self.mesh, *pull.box)

    def reduced_model(self, solver_config: SolverConfig | None = None) -> ReducedModel:
        return ReducedModel(self.mesh, self.materials, self.ops,
                            self.subspace.basis, self.scheme,
                            solver_config or self.config.solver)

    def full_model(self, solver_config: SolverConfig | None = None) -> FullSpaceModel:
        return FullSpaceModel(self.mesh, self.materials, self.ops,
                              solver_config or self.config.solver)

    def group_indices(self, name: str) -> NDArray[np.int64]:
        lo, hi = self.config.groups[name]
        return vertices_in_box(self.mesh, lo, hi)

    # -- forces and frames -----------------------------------------------

    def nodal_pull_force(self, t: float) -> NDArray[np.float64] | None:
        """Dimension-blocked 3|V| force vector from the script, or None."""
        total = None
        nv = self.mesh.num_vertices
        for pull, verts in zip(self.config.pulls, self._pull_vertices):
            if not pull.active(t) or verts.size == 0:
                continue
            if total is None:
                total = np.zeros(3 * nv)
            for d in range(3):
                total[verts + d * nv] += pull.magnitude * pull.direction[d]
        return total

    def reduced_pull_force(self, t: float) -> NDArray[np.float64] | None:
        nodal = self.nodal_pull_force(t)
        if nodal is None:
            return None
        return self.subspace.basis.project_nodal(nodal)

    def positions_from_frame(self, frame: Frame) -> NDArray[np.float64]:
        """Deformed |V| x 3 positions from a reduced or full-space frame."""
        basis = self.subspace.basis
        if frame.u.shape[0] == basis.r:
            return basis.positions(frame.u)
        if frame.u.shape[0] == 3 * self.mesh.num_vertices:
            return self.mesh.rest_positions + unflatten_positions(frame.u)
        raise SceneError(f"frame length {frame.u.shape[0]} matches neither "
                         f"the subspace ({basis.r}) nor the mesh "
                         f"({3 * self.mesh.num_vertices})")


def build_mesh(config: SceneConfig) -> TetMesh:
    spec = config.mesh_spec
    if "path" in spec:
        mesh = load_mesh(spec["path"])
    else:
        box = spec["box"]
        try:
            mesh = box_mesh(size=box.get("size", (1.0, 1.0, 1.0)),
                            divisions=box.get("divisions", (4, 2, 2)),
                            origin=box.get("origin", (0.0, 0.0, 0.0)))
        except (TypeError, ValueError, MeshError) as exc:
            raise SceneError(f"invalid box mesh spec: {exc}") from exc
        if "region_axis" in box:
            mesh = assign_regions_by_axis(mesh, int(box["region_axis"]),
                                          float(box["region_split"]))
    pinned = config.pinned_spec
    if pinned is not None:
        if "vertices" in pinned:
            idx = np.asarray(pinned["vertices"], dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= mesh.num_vertices):
                raise SceneError("pinned vertex index out of range")
        elif "box" in pinned:
            idx = vertices_in_box(mesh, pinned["box"]["min"],
                                  pinned["box"]["max"])
        else:
            raise SceneError("pinned needs a 'vertices' list or a 'box'")
        mesh = mesh.with_pinned(idx)
    return mesh


def build_materials(config: SceneConfig, mesh: TetMesh) -> MaterialField:
    present = np.unique(mesh.regions)
    missing = [int(r) for r in present if int(r) not in config.materials]
    if missing:
        raise SceneError(f"mesh regions without a material entry: {missing}")
    youngs = np.empty(mesh.num_tets)
    poisson = np.empty(mesh.num_tets)
    density = np.empty(mesh.num_tets)
    for region, (e, nu, rho) in config.materials.items():
        sel = mesh.regions == region
        youngs[sel], poisson[sel], density[sel] = e, nu, rho
    try:
        return MaterialField.from_young_poisson(youngs, poisson, density)
    except ValueError as exc:
        raise SceneError(f"invalid material parameters: {exc}") from exc


def build_scene(config: SceneConfig, use_artifact: bool = True) -> Scene:
    """Assemble a scene, reusing the subspace artifact when present."""
    mesh = build_mesh(config)
    materials = build_materials(config, mesh)
    ops = build_operators(mesh, materials)

    subspace = scheme = None
    artifact = config.subspace_artifact
    if use_artifact and artifact and Path(artifact).exists():
        subspace, scheme, _ = load_subspace(artifact)
        if (subspace.W.shape[0] != mesh.num_vertices
                or subspace.m != config.modes):
            raise SceneError("subspace artifact does not match the scene")
    if subspace is None:
        if config.modes > mesh.free_vertices.size:
            raise SceneError(f"mode count {config.modes} exceeds free "
                             f"vertex count {mesh.free_vertices.size}")
        subspace = build_skinning_subspace(mesh, materials, ops, config.modes)
    if scheme is None:
        num_cub = config.cubature
        if num_cub is None:
            num_cub = recommend_cubature_count(config.modes, mesh.num_tets)
        if not 1 <= num_cub <= mesh.num_tets:
            raise SceneError(f"cubature count {num_cub} out of range "
                             f"1..{mesh.num_tets}")
        scheme = kmeans_cubature(subspace.W, subspace.eigenvalues, mesh, ops,
                                 num_cub, config.seed)
    return Scene(config, mesh, materials, subspace, scheme)


def save_scene_subspace(scene: Scene, path: str | Path | None = None) -> Path:
    path = Path(path or scene.config.subspace_artifact or "subspace.npz")
    save_subspace(path, scene.subspace, scene.scheme, scene.config.seed)
    return path


def run_scene(scene: Scene, solver: str = "mfem", steps: int = 0,
              gradient_norms: bool = False):
    """Run ``steps`` steps headless; returns (frames, MetricsRecord).

    Solver divergence truncates the run and is reported on the record's
    ``error`` field instead of raising.
    """
    if solver not in SOLVER_NAMES:
        raise SceneError(f"unknown solver {solver!r}")
    cfg = scene.config.solver
    record = MetricsRecord(dt=cfg.dt)
    frames: list[Frame] = []

    if solver == "full":
        model = scene.full_model()
        state = model.rest_state()
        rest_x = state.x.copy()
    else:
        model = scene.reduced_model()
        state = model.rest_state()
        step_fn = simulation_step if solver == "mfem" else subspace_fem_step

    for _ in range(steps):
        extra = (scene.nodal_pull_force(state.time) if solver == "full"
                 else scene.reduced_pull_force(state.time))
        try:
            if solver == "full":
                state, diag = full_space_step(model, state, extra)
                u = state.x - rest_x
                record.newton_decrements.append([d[0] for d in diag])
                record.constraint_inf.append([d[1] for d in diag])
                record.alphas.append([d[2] for d in diag])
                record.iterations.append(len(diag))
            else:
                state, diag = step_fn(model, state, extra)
                u = state.u.copy()
                record.record_step(diag)
        except SolverError as exc:
            record.error = str(exc)
            break
        frames.append(Frame(state.step_index, state.time, u))

    compute_frame_metrics(scene, frames, record,
                          gradient_norms=gradient_norms)
    return frames, record
