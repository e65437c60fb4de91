"""Skinning-eigenmode subspace construction and the LBS position basis.

The positional basis has the Kronecker structure ``B = I_3 kron C`` with
``C`` of shape ``|V| x q``; reduced coordinates are dimension-blocked,
``u = [u_x; u_y; u_z]`` with ``x_d = rest_d + C u_d`` and ``r = 3q``.
For a skinning subspace with ``m`` weights, ``C[i, 4j + k] = W[i, j] *
Xbar[i, k]`` (homogeneous rest coordinates), so ``q = 4m`` and ``r = 12m``.
The blocks ``u_d[4j : 4j + 4]`` are the rows of handle ``j``'s 3x4 affine
transform, expressed as a displacement from rest (``u = 0`` is rest).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from . import elastic
from .elastic import EnergyModel, EnergyModelKind
from .mesh import DiscreteOperators, MaterialField, TetMesh

_DENSE_EIG_LIMIT = 2600


class SubspaceError(RuntimeError):
    """Raised when subspace construction fails (e.g. eigensolver issues)."""


@dataclass(frozen=True)
class PositionBasis:
    """Reduced position basis ``x = rest + (I_3 kron C) u``."""

    C: NDArray[np.float64]
    rest_positions: NDArray[np.float64]

    @property
    def q(self) -> int:
        return self.C.shape[1]

    @property
    def r(self) -> int:
        return 3 * self.C.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.C.shape[0]

    def positions(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Reduced coordinates -> ``|V| x 3`` deformed positions."""
        uu = u.reshape(3, self.q).T
        return self.rest_positions + self.C @ uu

    def project_nodal(self, f: NDArray[np.float64]) -> NDArray[np.float64]:
        """``B^T f`` for a dimension-blocked nodal vector ``f``."""
        ff = f.reshape(3, self.num_vertices)
        return (ff @ self.C).ravel()

    def reduced_mass(self, M_w: sp.spmatrix) -> NDArray[np.float64]:
        """``B^T M B`` exploiting the Kronecker structure (r x r dense)."""
        core = np.asarray(self.C.T @ (M_w @ self.C))
        return np.kron(np.eye(3), core)

    def tet_block(self, verts: NDArray[np.int64]) -> NDArray[np.float64]:
        """Rows of C at a tet's vertices (4 x q); used to restrict B."""
        return self.C[verts]


def lbs_basis(W: NDArray[np.float64],
              rest_positions: NDArray[np.float64]) -> PositionBasis:
    """Linear blend skinning Jacobian as a PositionBasis (q = 4m)."""
    nv, m = W.shape
    xbar = np.concatenate([rest_positions, np.ones((nv, 1))], axis=1)
    # C[i, 4j + k] = W[i, j] * xbar[i, k]
    c = (W[:, :, None] * xbar[:, None, :]).reshape(nv, 4 * m)
    return PositionBasis(c, np.asarray(rest_positions, dtype=np.float64))


def identity_basis(mesh: TetMesh) -> PositionBasis:
    """Full-space basis: a free-vertex selection matrix (pinned rows zero)."""
    free = mesh.free_vertices
    c = np.zeros((mesh.num_vertices, free.size))
    c[free, np.arange(free.size)] = 1.0
    return PositionBasis(c, mesh.rest_positions)


@dataclass(frozen=True)
class SkinningSubspace:
    """Skinning weights, eigenvalues and the derived position basis."""

    W: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    basis: PositionBasis
    pinned: NDArray[np.int64]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @property
    def r(self) -> int:
        return self.basis.r


def weight_laplacian(mesh: TetMesh, materials: MaterialField,
                     ops: DiscreteOperators,
                     kind: EnergyModelKind = EnergyModelKind.ARAP) -> sp.csr_matrix:
    """Scalar elastic-energy Laplacian: sum of the three per-dimension
    diagonal blocks of the rest-state elastic Hessian (|V| x |V| sparse)."""
    nt = mesh.num_tets
    rows, cols, vals = [], [], []
    ident = np.eye(3)
    for t in range(nt):
        model = EnergyModel(kind, materials.lame_mu[t], materials.lame_lambda[t])
        h6 = elastic.psi_hess(elastic.REST_STRETCH, model, ops.volumes[t])
        l = elastic.constraint_jacobian_block(ident, ops.grad_phi[t])
        h12 = l.T @ h6 @ l
        block = h12[0:4, 0:4] + h12[4:8, 4:8] + h12[8:12, 8:12]
        verts = mesh.tets[t]
        rows.append(np.repeat(verts, 4))
        cols.append(np.tile(verts, 4))
        vals.append(block.ravel())
    nv = mesh.num_vertices
    hw = sp.csr_matrix((np.concatenate(vals),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(nv, nv))
    return 0.5 * (hw + hw.T)


def skinning_eigenmodes(H_w: sp.spmatrix, M_w: sp.spmatrix, m: int,
                        pinned: NDArray[np.int64] | None = None):
    """Smallest-m generalized eigenpairs of ``H_w W = M_w W Gamma``.

    Pinned vertex rows/columns are deleted before the solve and the
    corresponding rows of ``W`` zero-padded. Columns get a deterministic
    sign (largest-magnitude entry positive) and are M_w-orthonormal over
    the free rows.
    """
    nv = H_w.shape[0]
    pinned = np.asarray(pinned if pinned is not None else [], dtype=np.int64)
    mask = np.ones(nv, dtype=bool)
    mask[pinned] = False
    free = np.flatnonzero(mask)
    if m < 1 or m > free.size:
        raise ValueError(f"mode count {m} out of range for {free.size} free vertices")

    h = H_w.tocsr()[free][:, free]
    mm = M_w.tocsr()[free][:, free]
    if free.size <= _DENSE_EIG_LIMIT:
        evals, evecs = scipy.linalg.eigh(h.toarray(), mm.toarray(),
                                         subset_by_index=(0, m - 1))
    else:
        scale = abs(h.diagonal()).max()
        try:
            evals, evecs = spla.eigsh(h, k=m, M=mm, sigma=-1e-8 * scale,
                                      which="LM")
        except Exception as exc:  # ArpackError and friends
            raise SubspaceError(f"eigensolver failed to converge: {exc}") from exc
        order = np.argsort(evals)
        evals, evecs = evals[order], evecs[:, order]

    # Deterministic sign convention.
    for j in range(m):
        col = evecs[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            evecs[:, j] = -col

    W = np.zeros((nv, m))
    W[free] = evecs
    return W, evals


def build_skinning_subspace(mesh: TetMesh, materials: MaterialField,
                            ops: DiscreteOperators, m: int,
                            kind: EnergyModelKind = EnergyModelKind.ARAP) -> SkinningSubspace:
    """Full offline pipeline: Laplacian, eigenmodes, LBS basis."""
    hw = weight_laplacian(mesh, materials, ops, kind)
    W, gamma = skinning_eigenmodes(hw, ops.M_w, m, mesh.pinned_vertices)
    basis = lbs_basis(W, mesh.rest_positions)
    return SkinningSubspace(W, gamma, basis, mesh.pinned_vertices.copy())


def save_subspace(path: str | Path, subspace: SkinningSubspace,
                  scheme=None, seed: int | None = None) -> None:
    """Persist subspace (and optionally a cubature scheme) as an .npz sidecar."""
    payload = {
        "W": subspace.W,
        "eigenvalues": subspace.eigenvalues,
        "rest_positions": subspace.basis.rest_positions,
        "pinned": subspace.pinned,
        "seed": np.int64(-1 if seed is None else seed),
    }
    if scheme is not None:
        payload.update(labels=scheme.labels, cubature_tets=scheme.cubature_tets,
                       weights=scheme.weights)
    np.savez(path, **payload)


def load_subspace(path: str | Path):
    """Inverse of :func:`save_subspace`. Returns (subspace, scheme_or_None, seed)."""
    from .cubature import CubatureScheme
    data = np.load(path)
    W = data["W"]
    subspace = SkinningSubspace(
        W, data["eigenvalues"],
        lbs_basis(W, data["rest_positions"]),
        data["pinned"].astype(np.int64))
    scheme = None
    if "labels" in data:
        scheme = CubatureScheme(data["labels"].astype(np.int64),
                                data["cubature_tets"].astype(np.int64),
                                data["weights"])
    seed = int(data["seed"])
    return subspace, scheme, (None if seed < 0 else seed)
