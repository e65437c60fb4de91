"""Full-space mixed-FEM stepper: stretch DOFs and multipliers on every tet.

This is an independent sparse implementation (its own assembly, its own
Schur condensation over nodal coordinates) used both as a desk-scale
reference solver and as the oracle that the reduced path must reproduce
under an identity basis with all-tet cubature. Pinned vertices are
eliminated from the nodal unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from . import elastic
from .elastic import EnergyModel, EnergyModelKind
from .mesh import (DiscreteOperators, MaterialField, TetMesh,
                   deformation_gradients, flatten_positions)
from .solver import D6, SolverConfig, SolverError


@dataclass
class FullState:
    """Full nodal positions, per-tet stretches and velocities."""

    x: NDArray[np.float64]            # 3|V| dimension-blocked
    s: NDArray[np.float64]            # |T| x 6
    x_vel: NDArray[np.float64]
    rotations: NDArray[np.float64]    # |T| x 3 x 3
    step_index: int = 0
    time: float = 0.0

    def copy(self) -> "FullState":
        return FullState(self.x.copy(), self.s.copy(), self.x_vel.copy(),
                         self.rotations.copy(), self.step_index, self.time)


class FullSpaceModel:
    """Mesh-resolution mixed FEM with per-tet volume weights."""

    def __init__(self, mesh: TetMesh, materials: MaterialField,
                 ops: DiscreteOperators, config: SolverConfig):
        self.mesh = mesh
        self.materials = materials
        self.ops = ops
        self.config = config
        self.models = [EnergyModel(config.model, materials.lame_mu[t],
                                   materials.lame_lambda[t])
                       for t in range(mesh.num_tets)]
        self.weights = ops.volumes

        nv = mesh.num_vertices
        free = mesh.free_vertices
        self.free_dofs = np.concatenate([free + d * nv for d in range(3)])
        mdiag = np.concatenate([ops.M_w.diagonal()] * 3)
        self.M_free = sp.diags(mdiag[self.free_dofs], format="csc")
        g = config.gravity
        self.f_ext = np.concatenate([g[d] * ops.M_w.diagonal()
                                     for d in range(3)])[self.free_dofs]

    def rest_state(self) -> FullState:
        nt = self.mesh.num_tets
        x = flatten_positions(self.mesh.rest_positions)
        return FullState(x, np.tile(elastic.REST_STRETCH, (nt, 1)),
                         np.zeros_like(x), np.tile(np.eye(3), (nt, 1, 1)))

    def rotations_at(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return elastic.rotations_from_gradients(
            deformation_gradients(self.ops, x))

    def sbar_all(self, x, rotations) -> NDArray[np.float64]:
        return elastic.sbar_batch(deformation_gradients(self.ops, x), rotations)

    def _constraint_jacobian(self, rotations) -> sp.csr_matrix:
        """Sparse d(sbar)/dx over all tets (6|T| x 3|V|), rotations fixed."""
        nt = self.mesh.num_tets
        nv = self.mesh.num_vertices
        rows = np.empty(nt * 72, dtype=np.int64)
        cols = np.empty(nt * 72, dtype=np.int64)
        vals = np.empty(nt * 72)
        local_cols = np.empty(12, dtype=np.int64)
        for t in range(nt):
            l = elastic.constraint_jacobian_block(rotations[t],
                                                  self.ops.grad_phi[t])
            verts = self.mesh.tets[t]
            for a in range(3):
                local_cols[4 * a:4 * a + 4] = verts + a * nv
            base = 72 * t
            rows[base:base + 72] = np.repeat(6 * t + np.arange(6), 12)
            cols[base:base + 72] = np.tile(local_cols, 6)
            vals[base:base + 72] = l.ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(6 * nt, 3 * nv))

    def elastic_energy(self, s: NDArray[np.float64]) -> float:
        return sum(elastic.psi_density(s[t], self.models[t], self.weights[t])
                   for t in range(self.mesh.num_tets))

    def incremental_energy(self, x_free, x_tilde_free) -> float:
        d = x_free - x_tilde_free
        h2 = self.config.dt ** 2
        return 0.5 / h2 * float(d @ (self.M_free @ d)) \
            - float(x_free @ self.f_ext)

    def _lagrangian(self, x, s, mu, rotations, x_tilde_free) -> float:
        g = self.weights[:, None] * D6[None, :] * (self.sbar_all(x, rotations) - s)
        return self.incremental_energy(x[self.free_dofs], x_tilde_free) \
            + self.elastic_energy(s) + float(np.sum(mu * g))


def full_space_step(model: FullSpaceModel, state: FullState,
                    f_ext_extra: NDArray[np.float64] | None = None):
    """One SQP step of the full-space mixed formulation (sparse solves)."""
    cfg = model.config
    f_ext = model.f_ext.copy()
    if f_ext_extra is not None:
        f_ext += f_ext_extra[model.free_dofs]
    h2 = cfg.dt ** 2
    x = state.x.copy()
    s = state.s.copy()
    x_tilde_free = state.x[model.free_dofs] + cfg.dt * state.x_vel[model.free_dofs]
    nt = model.mesh.num_tets
    diagnostics = []
    no_decrease_run = 0

    for it in range(cfg.max_iterations):
        rotations = model.rotations_at(x)
        sb = model.sbar_all(x, rotations)
        w = model.weights[:, None] * D6[None, :]
        f_mu = w * (sb - s)
        f_z = np.empty((nt, 6))
        h_z = np.empty((nt, 6, 6))
        for t in range(nt):
            f_z[t] = elastic.psi_grad(s[t], model.models[t], model.weights[t])
            h_z[t] = elastic.psi_hess(s[t], model.models[t], model.weights[t],
                                      project=cfg.hessian_projection)
        if not np.all(np.isfinite(f_z)):
            raise SolverError("state diverged: non-finite stretch forces", it)

        jac = model._constraint_jacobian(rotations)[:, model.free_dofs]
        # G_z = -diag(w); the condensation collapses the weight factors:
        # N = G_z^-1 G_u = -jac, so K = jac^T blkdiag(H_z) jac.
        hz_block = sp.block_diag([h_z[t] for t in range(nt)], format="csr")
        k = (jac.T @ hz_block @ jac).tocsc()
        f_u = model.M_free @ (x[model.free_dofs] - x_tilde_free) / h2 - f_ext
        y = (f_z + np.einsum("tij,tj->ti", h_z, sb - s)).ravel()
        rhs = -f_u - jac.T @ y
        lhs = (model.M_free / h2 + k).tocsc()
        try:
            du = spla.spsolve(lhs, rhs)
        except Exception as exc:
            raise SolverError(f"full-space factorization failed: {exc}",
                              it) from exc
        if not np.all(np.isfinite(du)):
            raise SolverError("full-space solve produced non-finite direction",
                              it)
        decrement = float(np.sqrt(max(du @ (lhs @ du), 0.0)))
        du_inf = float(np.abs(du).max()) if du.size else 0.0
        g_inf = float(np.abs(f_mu).max())
        if du_inf < cfg.tol_du:
            diagnostics.append((decrement, g_inf, 0.0, du_inf))
            break
        ds = (sb - s) + (jac @ du).reshape(nt, 6)
        mu = (f_z + np.einsum("tij,tj->ti", h_z, ds)) / w

        base = model._lagrangian(x, s, mu, rotations, x_tilde_free)
        alpha = 1.0
        decreased = False
        for _ in range(cfg.max_backtracks + 1):
            x_try = x.copy()
            x_try[model.free_dofs] += alpha * du
            trial = model._lagrangian(x_try, s + alpha * ds, mu, rotations,
                                      x_tilde_free)
            if np.isfinite(trial) and trial < base:
                decreased = True
                break
            alpha *= cfg.backtrack_shrink
        diagnostics.append((decrement, g_inf, alpha, du_inf))
        if not decreased:
            no_decrease_run += 1
            if no_decrease_run >= 3:
                break
        else:
            no_decrease_run = 0
            x[model.free_dofs] += alpha * du
            s = s + alpha * ds

    x_vel = np.zeros_like(x)
    x_vel[model.free_dofs] = (x[model.free_dofs]
                              - state.x[model.free_dofs]) / cfg.dt
    new_state = FullState(x, s, x_vel, model.rotations_at(x),
                          state.step_index + 1, state.time + cfg.dt)
    return new_state, diagnostics


def full_gradient(model: FullSpaceModel, x: NDArray[np.float64],
                  x_tilde_free: NDArray[np.float64],
                  f_ext_extra: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
    """Gradient of the positions-only incremental potential at x (free DOFs).

    Uses the elastic energy evaluated at the rotation-stripped stretch of
    the current configuration, i.e. the problem the mixed solver resolves
    once its constraint is feasible.
    """
    cfg = model.config
    rotations = model.rotations_at(x)
    sb = model.sbar_all(x, rotations)
    nt = model.mesh.num_tets
    f_s = np.empty((nt, 6))
    for t in range(nt):
        f_s[t] = elastic.psi_grad(sb[t], model.models[t], model.weights[t])
    jac = model._constraint_jacobian(rotations)[:, model.free_dofs]
    grad = model.M_free @ (x[model.free_dofs] - x_tilde_free) / cfg.dt ** 2 \
        - model.f_ext + jac.T @ f_s.ravel()
    if f_ext_extra is not None:
        grad -= f_ext_extra[model.free_dofs]
    return grad
