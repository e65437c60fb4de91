"""Tetrahedral mesh representation, file I/O, and constant discrete operators.

Conventions used throughout the package:

- Nodal coordinate vectors ``x`` have length ``3|V|`` and are ordered by
  dimension block: all x-coordinates, then all y, then all z (Fortran
  flattening of the ``|V| x 3`` position array).
- Per-element deformation gradients are packed column-major into 9-vectors:
  ``(F11, F21, F31, F12, F22, F32, F13, F23, F33)``, stacked per tet into a
  ``9|T|`` vector.
- Local 12-vectors over one tet's vertices follow the same dimension-block
  order: ``(x of 4 verts, y of 4 verts, z of 4 verts)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray


class MeshError(ValueError):
    """Raised on malformed mesh files or invalid mesh data."""


# Local vertex-coordinate differencing for linear tets: rows are the four
# shape-function gradients in barycentric form, before the Dm^-1 map.
_DPHI = np.array([[-1.0, -1.0, -1.0],
                  [1.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0]])

# Faces of a positively oriented tet, outward normals.
_TET_FACES = ((0, 2, 1), (0, 1, 3), (1, 2, 3), (2, 0, 3))


@dataclass(frozen=True)
class TetMesh:
    """Rest geometry and connectivity of a tetrahedral mesh.

    Attributes:
        rest_positions: ``|V| x 3`` vertex coordinates in meters.
        tets: ``|T| x 4`` vertex indices, positively oriented.
        regions: ``|T|`` material region ids (0 when the file carries none).
        surface_faces: boundary triangles (faces incident to exactly one tet).
        pinned_vertices: sorted array of constrained vertex indices.
    """

    rest_positions: NDArray[np.float64]
    tets: NDArray[np.int64]
    regions: NDArray[np.int64]
    surface_faces: NDArray[np.int64]
    pinned_vertices: NDArray[np.int64] = field(
        default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def num_vertices(self) -> int:
        return self.rest_positions.shape[0]

    @property
    def num_tets(self) -> int:
        return self.tets.shape[0]

    @property
    def bbox_diagonal(self) -> float:
        extent = self.rest_positions.max(axis=0) - self.rest_positions.min(axis=0)
        return float(np.linalg.norm(extent))

    def with_pinned(self, pinned: NDArray[np.int64] | list[int]) -> "TetMesh":
        pinned = np.unique(np.asarray(pinned, dtype=np.int64))
        if pinned.size and (pinned.min() < 0 or pinned.max() >= self.num_vertices):
            raise MeshError("pinned vertex index out of range")
        return TetMesh(self.rest_positions, self.tets, self.regions,
                       self.surface_faces, pinned)

    @property
    def free_vertices(self) -> NDArray[np.int64]:
        mask = np.ones(self.num_vertices, dtype=bool)
        mask[self.pinned_vertices] = False
        return np.flatnonzero(mask).astype(np.int64)


@dataclass(frozen=True)
class MaterialField:
    """Per-tet material parameters with derived Lame coefficients."""

    youngs: NDArray[np.float64]
    poissons: NDArray[np.float64]
    density: NDArray[np.float64]
    lame_mu: NDArray[np.float64]
    lame_lambda: NDArray[np.float64]

    @classmethod
    def from_young_poisson(cls, youngs, poissons, density) -> "MaterialField":
        youngs = np.atleast_1d(np.asarray(youngs, dtype=np.float64))
        poissons = np.atleast_1d(np.asarray(poissons, dtype=np.float64))
        density = np.atleast_1d(np.asarray(density, dtype=np.float64))
        if np.any(youngs <= 0):
            raise ValueError("Young's modulus must be positive")
        if np.any(density <= 0):
            raise ValueError("density must be positive")
        mu, lam = lame_from_young_poisson(youngs, poissons)
        return cls(youngs, poissons, density, mu, lam)

    @classmethod
    def uniform(cls, num_tets: int, youngs: float, poissons: float,
                density: float) -> "MaterialField":
        ones = np.ones(num_tets)
        return cls.from_young_poisson(youngs * ones, poissons * ones,
                                      density * ones)


def lame_from_young_poisson(youngs, poissons):
    """Convert Young's modulus / Poisson ratio to Lame (mu, lambda)."""
    youngs = np.asarray(youngs, dtype=np.float64)
    poissons = np.asarray(poissons, dtype=np.float64)
    if np.any(poissons < 0) or np.any(poissons >= 0.5):
        raise ValueError("incompressible limit unsupported (requires 0 <= nu < 0.5)")
    if np.any(youngs <= 0):
        raise ValueError("Young's modulus must be positive")
    mu = youngs / (2.0 * (1.0 + poissons))
    lam = youngs * poissons / ((1.0 + poissons) * (1.0 - 2.0 * poissons))
    return mu, lam


@dataclass(frozen=True)
class DiscreteOperators:
    """Constant discrete operators assembled once per (mesh, materials) pair.

    Attributes:
        J: sparse ``9|T| x 3|V|`` map from nodal coordinates to stacked
            per-tet deformation gradients (column-major packing).
        volumes: ``|T|`` rest volumes in m^3.
        masses: ``|T|`` tet masses in kg.
        M_w: ``|V| x |V|`` diagonal scalar lumped mass matrix.
        M: ``3|V| x 3|V|`` diagonal lumped mass matrix (I3 kron M_w).
        grad_phi: ``|T| x 4 x 3`` linear shape-function gradients.
    """

    J: sp.csr_matrix
    volumes: NDArray[np.float64]
    masses: NDArray[np.float64]
    M_w: sp.csr_matrix
    M: sp.csr_matrix
    grad_phi: NDArray[np.float64]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


def tet_volumes(positions: NDArray[np.float64],
                tets: NDArray[np.int64]) -> NDArray[np.float64]:
    """Signed volumes of each tet."""
    p = positions
    d1 = p[tets[:, 1]] - p[tets[:, 0]]
    d2 = p[tets[:, 2]] - p[tets[:, 0]]
    d3 = p[tets[:, 3]] - p[tets[:, 0]]
    return np.einsum("ij,ij->i", np.cross(d1, d2), d3) / 6.0


def extract_surface_faces(tets: NDArray[np.int64]) -> NDArray[np.int64]:
    """Boundary triangles: faces incident to exactly one tet."""
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                   return_counts=True)
    boundary = counts[inverse] == 1
    return faces[boundary].astype(np.int64)


def _validate_and_orient(vertices: NDArray[np.float64],
                         tets: NDArray[np.int64]) -> NDArray[np.int64]:
    nv = vertices.shape[0]
    if tets.size and (tets.min() < 0 or tets.max() >= nv):
        bad = int(np.flatnonzero((tets < 0) | (tets >= nv)).flat[0] // 4)
        raise MeshError(f"tet {bad}: vertex index out of range")
    tets = tets.copy()
    vols = tet_volumes(vertices, tets)
    flipped = vols < 0
    tets[flipped, 0], tets[flipped, 1] = tets[flipped, 1], tets[flipped, 0].copy()
    vols = np.abs(vols)
    extent = vertices.max(axis=0) - vertices.min(axis=0)
    threshold = 1e-14 * float(np.linalg.norm(extent)) ** 3
    degenerate = np.flatnonzero(vols < threshold)
    if degenerate.size:
        raise MeshError(f"degenerate tet {int(degenerate[0])}: "
                        f"|volume| {vols[degenerate[0]]:g} below threshold")
    return tets


def mesh_from_arrays(vertices, tets, regions=None) -> TetMesh:
    """Build a validated TetMesh; inverted tets are reoriented."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tets = np.asarray(tets, dtype=np.int64).reshape(-1, 4)
    tets = _validate_and_orient(vertices, tets)
    if regions is None:
        regions = np.zeros(tets.shape[0], dtype=np.int64)
    else:
        regions = np.asarray(regions, dtype=np.int64)
        if regions.shape[0] != tets.shape[0]:
            raise MeshError("regions length must match tet count")
    return TetMesh(vertices, tets, regions, extract_surface_faces(tets))


def load_mesh(path: str | Path) -> TetMesh:
    """Load a mesh from MEDIT ``.mesh`` ASCII or the JSON mesh schema."""
    path = Path(path)
    if not path.exists():
        raise MeshError(f"mesh file not found: {path}")
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return _load_json_text(text)
    return _load_medit_text(text)


def _load_json_text(text: str) -> TetMesh:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MeshError(f"invalid JSON mesh: {exc}") from exc
    if "vertices" not in data or "tets" not in data:
        raise MeshError("JSON mesh must contain 'vertices' and 'tets'")
    return mesh_from_arrays(data["vertices"], data["tets"], data.get("regions"))


def _load_medit_text(text: str) -> TetMesh:
    tokens = text.split()
    pos = 0
    vertices = None
    tets = None
    regions = None

    def take(n: int) -> list[str]:
        nonlocal pos
        if pos + n > len(tokens):
            raise MeshError("unexpected end of MEDIT file")
        out = tokens[pos:pos + n]
        pos += n
        return out

    while pos < len(tokens):
        tok = tokens[pos]
        pos += 1
        key = tok.lower()
        if key == "vertices":
            try:
                count = int(take(1)[0])
                raw = np.array(take(4 * count), dtype=np.float64).reshape(-1, 4)
            except ValueError as exc:
                raise MeshError(f"malformed Vertices section: {exc}") from exc
            vertices = raw[:, :3]
        elif key == "tetrahedra":
            try:
                count = int(take(1)[0])
                raw = np.array(take(5 * count), dtype=np.int64).reshape(-1, 5)
            except ValueError as exc:
                raise MeshError(f"malformed Tetrahedra section: {exc}") from exc
            tets = raw[:, :4] - 1  # MEDIT is 1-based
            regions = raw[:, 4]
        elif key in ("meshversionformatted", "dimension"):
            take(1)
        elif key == "end":
            break
        # Other sections (Triangles, Edges, ...) are skipped token-wise by
        # falling through: their numeric payload never matches a keyword, so
        # consume it silently.
    if vertices is None or tets is None:
        raise MeshError("MEDIT file missing Vertices or Tetrahedra section")
    return mesh_from_arrays(vertices, tets, regions)


def save_mesh(mesh: TetMesh, path: str | Path) -> None:
    """Save a mesh; format chosen by extension (.json or .mesh)."""
    path = Path(path)
    if path.suffix == ".json":
        payload = {
            "vertices": mesh.rest_positions.tolist(),
            "tets": mesh.tets.tolist(),
            "regions": mesh.regions.tolist(),
        }
        path.write_text(json.dumps(payload))
        return
    lines = ["MeshVersionFormatted 1", "Dimension 3",
             "Vertices", str(mesh.num_vertices)]
    for v in mesh.rest_positions:
        lines.append(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g} 0")
    lines += ["Tetrahedra", str(mesh.num_tets)]
    for t, r in zip(mesh.tets, mesh.regions):
        lines.append(f"{t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1} {r}")
    lines.append("End")
    path.write_text("\n".join(lines) + "\n")


def flatten_positions(positions: NDArray[np.float64]) -> NDArray[np.float64]:
    """``|V| x 3`` array -> dimension-blocked ``3|V|`` vector."""
    return np.asarray(positions, dtype=np.float64).flatten(order="F")


def unflatten_positions(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Dimension-blocked ``3|V|`` vector -> ``|V| x 3`` array."""
    return np.asarray(x, dtype=np.float64).reshape(-1, 3, order="F")


def build_operators(mesh: TetMesh, materials: MaterialField) -> DiscreteOperators:
    """Assemble J, volumes, masses and lumped mass matrices."""
    if materials.youngs.shape[0] != mesh.num_tets:
        raise ValueError("materials sized differently from tet count")
    nv, nt = mesh.num_vertices, mesh.num_tets
    p = mesh.rest_positions
    tets = mesh.tets

    dm = np.stack([p[tets[:, 1]] - p[tets[:, 0]],
                   p[tets[:, 2]] - p[tets[:, 0]],
                   p[tets[:, 3]] - p[tets[:, 0]]], axis=2)  # |T| x 3 x 3
    dm_inv = np.linalg.inv(dm)
    grad_phi = np.einsum("ij,tjk->tik", _DPHI, dm_inv)  # |T| x 4 x 3

    vols = np.abs(tet_volumes(p, tets))
    masses = materials.density * vols

    # J rows: entry (t, a, b) of F (row index 9t + 3b + a) picks coefficient
    # grad_phi[t, i, b] at nodal column a*|V| + tets[t, i].
    t_idx = np.arange(nt)
    rows = (9 * t_idx[:, None, None, None]
            + 3 * np.arange(3)[None, None, :, None]          # b
            + np.arange(3)[None, :, None, None])             # a
    rows = np.broadcast_to(rows, (nt, 3, 3, 4))
    cols = (np.arange(3)[None, :, None, None] * nv
            + tets[:, None, None, :])
    cols = np.broadcast_to(cols, (nt, 3, 3, 4))
    vals = np.broadcast_to(grad_phi.transpose(0, 2, 1)[:, None, :, :],
                           (nt, 3, 3, 4))
    J = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(9 * nt, 3 * nv))

    # Barycentric lumping: a quarter of each tet's mass per vertex.
    mw_diag = np.zeros(nv)
    np.add.at(mw_diag, tets.ravel(), np.repeat(masses / 4.0, 4))
    M_w = sp.diags(mw_diag, format="csr")
    M = sp.diags(np.concatenate([mw_diag] * 3), format="csr")
    return DiscreteOperators(J, vols, masses, M_w, M, grad_phi)


def deformation_gradients(ops: DiscreteOperators,
                          x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-tet deformation gradients as a ``|T| x 3 x 3`` array."""
    f = ops.J @ x
    return f.reshape(-1, 3, 3).transpose(0, 2, 1)  # undo column-major packing
