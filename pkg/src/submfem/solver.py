"""Reduced mixed-FEM time stepping with Schur-condensed SQP iterations.

One simulation step repeats: refresh per-cubature rotations, assemble the
KKT blocks, solve the condensed dense system for the reduced direction,
recover stretch/multiplier updates with per-slot local solves, and
backtrack on the Lagrangian. A standard reduced-Newton FEM stepper over
the same basis and cubature is provided as a comparison baseline.
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from . import elastic
from .cubature import CubatureScheme, effective_volumes
from .elastic import EnergyModel, EnergyModelKind
from .mesh import (DiscreteOperators, MaterialField, TetMesh,
                   flatten_positions)
from .subspace import PositionBasis

D6 = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


class SolverError(RuntimeError):
    """Numerical failure inside a solve; carries the iteration index."""

    def __init__(self, message: str, iteration: int = -1):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1.0 / 60.0
    max_iterations: int = 10
    tol_du: float = 1e-6
    tol_grad: float = 1e-6
    max_backtracks: int = 20
    backtrack_shrink: float = 0.5
    armijo: bool = False
    armijo_c: float = 1e-4
    gravity: NDArray[np.float64] = field(
        default_factory=lambda: np.array([0.0, -9.8, 0.0]))
    gamma: float = 0.0
    quad_refactor: bool = False
    hessian_projection: bool = True
    model: EnergyModelKind = EnergyModelKind.FCR

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.tol_du <= 0 or self.tol_grad <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SimState:
    """Reduced coordinates, cubature stretches and velocities."""

    u: NDArray[np.float64]
    z: NDArray[np.float64]            # |C| x 6
    u_vel: NDArray[np.float64]
    rotations: NDArray[np.float64]    # |C| x 3 x 3
    step_index: int = 0
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.u.copy(), self.z.copy(), self.u_vel.copy(),
                        self.rotations.copy(), self.step_index, self.time)


@dataclass
class IterationDiagnostics:
    newton_decrement: float
    constraint_inf: float
    alpha: float
    du_inf: float
    no_decrease: bool = False


@dataclass
class KKTBlocks:
    """Per-iteration KKT system in slot-blocked storage."""

    H_u: NDArray[np.float64]          # r x r
    H_z: NDArray[np.float64]          # |C| x 6 x 6
    G_u: NDArray[np.float64]          # |C| x 6 x r
    G_z_diag: NDArray[np.float64]     # |C| x 6 (diagonal entries)
    f_u: NDArray[np.float64]          # r
    f_z: NDArray[np.float64]          # |C| x 6
    f_mu: NDArray[np.float64]         # |C| x 6


class ReducedModel:
    """Bound (mesh, materials, basis, cubature) with precomputed constants."""

    def __init__(self, mesh: TetMesh, materials: MaterialField,
                 ops: DiscreteOperators, basis: PositionBasis,
                 scheme: CubatureScheme, config: SolverConfig):
        self.mesh = mesh
        self.materials = materials
        self.ops = ops
        self.basis = basis
        self.scheme = scheme
        self.config = config

        cub = scheme.cubature_tets
        self.cub_tets = mesh.tets[cub]                     # |C| x 4
        self.cub_grad_phi = ops.grad_phi[cub]              # |C| x 4 x 3
        self.cub_vols = effective_volumes(scheme, mesh, materials.density)
        self.cub_mu = materials.lame_mu[cub]
        self.cub_lam = materials.lame_lambda[cub]
        self.cub_models = [EnergyModel(config.model, materials.lame_mu[t],
                                       materials.lame_lambda[t])
                           for t in cub]
        # Rows of C at each cubature tet's vertices, for basis restriction.
        self.cub_C = basis.C[self.cub_tets]                # |C| x 4 x q

        self.M_r = basis.reduced_mass(ops.M_w)
        self.gravity_r = self._reduced_gravity(config.gravity)

        self._reg = None
        if config.gamma > 0.0:
            self._reg = self._build_regularizer(config.gamma)
        self._fem = None
        self._refactor = None
        if config.quad_refactor:
            if config.model != EnergyModelKind.ARAP:
                raise ValueError("quadratic refactoring requires the ARAP model")
            self._refactor = quad_refactor_matrices(mesh, materials, ops, basis)

    # -- precomputation helpers ------------------------------------------

    def _reduced_gravity(self, gravity) -> NDArray[np.float64]:
        mw = self.ops.M_w.diagonal()
        nodal = np.concatenate([gravity[d] * mw for d in range(3)])
        return self.basis.project_nodal(nodal)

    def _dense_B(self) -> NDArray[np.float64]:
        return np.kron(np.eye(3), np.asarray(self.basis.C))

    def _build_regularizer(self, gamma: float):
        # E_reg(u) = gamma * sum_t vol_t ||F_t(u) - F_{c(t)}(u)||_F^2,
        # quadratic in u since F is linear in positions.
        jb = self.ops.J @ self._dense_B()                  # 9|T| x r
        jx = self.ops.J @ flatten_positions(self.mesh.rest_positions)
        assigned = self.scheme.cubature_tets[self.scheme.labels]
        rows = (9 * assigned[:, None] + np.arange(9)[None, :]).ravel()
        diff = jb - jb[rows]
        diff_x = jx - jx[rows]
        sqrt_v = np.repeat(np.sqrt(self.ops.volumes), 9)
        mw = diff * sqrt_v[:, None]
        m0 = diff_x * sqrt_v
        hess = 2.0 * gamma * (mw.T @ mw)
        return {"gamma": gamma, "mw": mw, "m0": m0, "hess": hess,
                "grad0": 2.0 * gamma * (mw.T @ m0)}

    def _fem_precompute(self):
        """Constant pieces of the FEM baseline's deformation-gradient-space
        Gauss-Newton Hessian: per-slot dF/du factors T_c and the isotropic
        block kron(I_3, sum_c iso_c T_c T_c^T)."""
        if self._fem is None:
            t = np.matmul(self.cub_C.transpose(0, 2, 1), self.cub_grad_phi)
            scale = 1.0 if self.config.model == EnergyModelKind.SNH else 2.0
            iso = scale * self.cub_vols * self.cub_mu
            q = self.basis.q
            tf = t.transpose(0, 2, 1).reshape(-1, q)      # stacked T_c rows
            core = tf.T @ (np.repeat(iso, 3)[:, None] * tf)
            self._fem = {"T": t, "iso_hess": np.kron(np.eye(3), core)}
        return self._fem

    # -- kinematics ------------------------------------------------------

    def cubature_gradients(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Deformation gradients at cubature tets for reduced coords u."""
        x = self.basis.positions(u)
        xt = x[self.cub_tets]                              # |C| x 4 x 3
        return np.einsum("nia,nib->nab", xt, self.cub_grad_phi)

    def refresh_rotations(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        return elastic.rotations_from_gradients(self.cubature_gradients(u))

    def sbar_cub(self, u: NDArray[np.float64],
                 rotations: NDArray[np.float64]) -> NDArray[np.float64]:
        return elastic.sbar_batch(self.cubature_gradients(u), rotations)

    def constraint_maps(self, rotations: NDArray[np.float64]) -> NDArray[np.float64]:
        """Per-slot d(sbar)/du maps (|C| x 6 x r), rotations held fixed."""
        nc, q = rotations.shape[0], self.basis.q
        l = elastic.constraint_jacobian_blocks_batch(rotations,
                                                     self.cub_grad_phi)
        out = np.empty((nc, 6, 3 * q))
        for a in range(3):
            out[:, :, a * q:(a + 1) * q] = l[:, :, 4 * a:4 * a + 4] @ self.cub_C
        return out

    # -- energies --------------------------------------------------------

    def rest_state(self) -> SimState:
        r = self.basis.r
        nc = self.scheme.num_points
        z = np.tile(elastic.REST_STRETCH, (nc, 1))
        rot = np.tile(np.eye(3), (nc, 1, 1))
        return SimState(np.zeros(r), z, np.zeros(r), rot)

    def momentum_target(self, state: SimState) -> NDArray[np.float64]:
        return state.u + self.config.dt * state.u_vel

    def quadratic_energy(self, u, u_tilde, f_ext_r):
        """Incremental potential in reduced coordinates: value, grad, Hessian.

        Psi_u(u) = 1/(2 h^2) (u - u_tilde)^T M_r (u - u_tilde) - u^T f_ext
        plus the consistency regularizer and the quadratic refactoring term
        when enabled (both quadratic in u).
        """
        h2 = self.config.dt ** 2
        d = u - u_tilde
        md = self.M_r @ d
        energy = 0.5 / h2 * float(d @ md) - float(u @ f_ext_r)
        grad = md / h2 - f_ext_r
        hess = self.M_r / h2
        if self._reg is not None:
            res = self._reg["mw"] @ u + self._reg["m0"]
            energy += self._reg["gamma"] * float(res @ res)
            grad = grad + self._reg["hess"] @ u + self._reg["grad0"]
            hess = hess + self._reg["hess"]
        if self._refactor is not None:
            cmat, b, const = (self._refactor["C"], self._refactor["b"],
                              self._refactor["const"])
            energy += float(u @ (cmat @ u)) + 2.0 * float(b @ u) + const
            grad = grad + 2.0 * (cmat @ u) + 2.0 * b
            hess = hess + 2.0 * cmat
        return energy, grad, hess

    def stretch_energy(self, z: NDArray[np.float64]) -> float:
        if self._refactor is not None:
            return float(np.sum(self.cub_vols * self.cub_mu
                                * (-2.0 * z[:, :3].sum(axis=1) + 3.0)))
        return float(elastic.psi_density_batch(
            z, self.config.model, self.cub_mu, self.cub_lam,
            self.cub_vols).sum())

    def stretch_grad(self, z: NDArray[np.float64]) -> NDArray[np.float64]:
        if self._refactor is not None:
            out = np.zeros((self.scheme.num_points, 6))
            out[:, :3] = -2.0 * (self.cub_vols * self.cub_mu)[:, None]
            return out
        return elastic.psi_grad_batch(z, self.config.model, self.cub_mu,
                                      self.cub_lam, self.cub_vols)

    def stretch_hess(self, z: NDArray[np.float64],
                     project: bool) -> NDArray[np.float64]:
        if self._refactor is not None:
            return np.zeros((self.scheme.num_points, 6, 6))
        return elastic.psi_hess_batch(z, self.config.model, self.cub_mu,
                                      self.cub_lam, self.cub_vols,
                                      project=project)

    def constraint_residual(self, sbar, z) -> NDArray[np.float64]:
        """Weighted residual g(u, z) per slot (|C| x 6)."""
        return self.cub_vols[:, None] * D6[None, :] * (sbar - z)

    def lagrangian(self, u, z, mu, rotations, u_tilde, f_ext_r) -> float:
        e_u, _, _ = self.quadratic_energy(u, u_tilde, f_ext_r)
        g = self.constraint_residual(self.sbar_cub(u, rotations), z)
        return e_u + self.stretch_energy(z) + float(np.sum(mu * g))


def assemble_reduced_blocks(model: ReducedModel, u, z, rotations,
                            u_tilde, f_ext_r) -> KKTBlocks:
    """Build the per-iteration KKT blocks at (u, z) with fixed rotations."""
    energy, grad_u, hess_u = model.quadratic_energy(u, u_tilde, f_ext_r)
    if not np.isfinite(energy) or not np.all(np.isfinite(z)):
        raise SolverError("state diverged: non-finite energy")
    sb = model.sbar_cub(u, rotations)
    maps = model.constraint_maps(rotations)               # |C| x 6 x r
    w = model.cub_vols[:, None] * D6[None, :]             # |C| x 6
    g_u = w[:, :, None] * maps
    g_z = -w
    f_z = model.stretch_grad(z)
    h_z = model.stretch_hess(z, model.config.hessian_projection)
    f_mu = w * (sb - z)
    return KKTBlocks(hess_u, h_z, g_u, g_z, grad_u, f_z, f_mu)


def condensed_solve(blocks: KKTBlocks, iteration: int = -1):
    """Solve the Schur-condensed system for du; returns (du, H_u + K)."""
    gz_inv = 1.0 / blocks.G_z_diag                        # |C| x 6
    n = gz_inv[:, :, None] * blocks.G_u                   # G_z^-1 G_u
    hn = blocks.H_z @ n                                   # |C| x 6 x r
    r = n.shape[2]
    k = n.reshape(-1, r).T @ hn.reshape(-1, r)
    lhs = blocks.H_u + k
    y = gz_inv * (blocks.f_z
                  - (blocks.H_z @ (gz_inv * blocks.f_mu)[:, :, None])[:, :, 0])
    rhs = -blocks.f_u + blocks.G_u.reshape(-1, r).T @ y.reshape(-1)
    du = _solve_spd(lhs, rhs, "condensed system", iteration)
    return du, lhs


def _solve_spd(lhs, rhs, label: str, iteration: int) -> NDArray[np.float64]:
    """Cholesky solve with symmetric Jacobi equilibration and an LDL fallback.

    The skinning basis mixes constant and position-weighted columns, so the
    reduced system can span many orders of magnitude when materials do;
    rescaling by the diagonal keeps Cholesky stable in those cases. If it
    still fails from rounding, retry with an LDL factorization before giving
    up.
    """
    diag = np.abs(np.diag(lhs))
    scale = 1.0 / np.sqrt(np.where(diag > 0.0, diag, 1.0))
    sl = scale[:, None] * lhs * scale[None, :]
    sr = scale * rhs
    try:
        cho = scipy.linalg.cho_factor(sl, check_finite=False)
        return scale * scipy.linalg.cho_solve(cho, sr, check_finite=False)
    except scipy.linalg.LinAlgError:
        pass
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            du = scale * scipy.linalg.solve(sl, sr, assume_a="sym",
                                            check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"{label} factorization failed: {exc}",
                          iteration) from exc
    if not np.all(np.isfinite(du)):
        raise SolverError(f"{label} solve produced non-finite values",
                          iteration)
    return du


def local_solves(blocks: KKTBlocks, du: NDArray[np.float64]):
    """Per-slot stretch and multiplier updates given du."""
    gz_inv = 1.0 / blocks.G_z_diag
    dz = -gz_inv * (blocks.f_mu + blocks.G_u @ du)
    mu = -gz_inv * (blocks.f_z + (blocks.H_z @ dz[:, :, None])[:, :, 0])
    return dz, mu


def line_search(model: ReducedModel, u, z, du, dz, mu, rotations,
                u_tilde, f_ext_r, directional: float | None = None):
    """Backtracking on the Lagrangian; returns (alpha, decreased)."""
    cfg = model.config
    base = model.lagrangian(u, z, mu, rotations, u_tilde, f_ext_r)
    alpha = 1.0
    for _ in range(cfg.max_backtracks + 1):
        trial = model.lagrangian(u + alpha * du, z + alpha * dz, mu,
                                 rotations, u_tilde, f_ext_r)
        if np.isfinite(trial):
            if cfg.armijo and directional is not None:
                if trial <= base + cfg.armijo_c * alpha * directional:
                    return alpha, True
            elif trial < base:
                return alpha, True
        alpha *= cfg.backtrack_shrink
    return alpha / cfg.backtrack_shrink, False


def simulation_step(model: ReducedModel, state: SimState,
                    f_ext_extra: NDArray[np.float64] | None = None,
                    iterate_log: list | None = None):
    """One implicit-Euler step of the condensed mixed-FEM SQP.

    Returns (new_state, diagnostics list). Aborts early (returning the last
    accepted iterate) after three consecutive non-decreasing line searches.
    When ``iterate_log`` is a list, the accepted u after each iteration is
    appended to it (convergence studies).
    """
    cfg = model.config
    f_ext_r = model.gravity_r.copy()
    if f_ext_extra is not None:
        f_ext_r += f_ext_extra
    u_tilde = model.momentum_target(state)
    u = state.u.copy()
    z = state.z.copy()
    rotations = state.rotations
    diagnostics: list[IterationDiagnostics] = []
    no_decrease_run = 0

    for it in range(cfg.max_iterations):
        rotations = model.refresh_rotations(u)
        blocks = assemble_reduced_blocks(model, u, z, rotations,
                                         u_tilde, f_ext_r)
        try:
            du, lhs = condensed_solve(blocks, it)
        except SolverError:
            if cfg.hessian_projection:
                raise
            # Retry once with PSD-projected stretch Hessians.
            blocks.H_z = model.stretch_hess(z, True)
            du, lhs = condensed_solve(blocks, it)
        decrement = float(np.sqrt(max(du @ (lhs @ du), 0.0)))
        du_inf = float(np.abs(du).max()) if du.size else 0.0
        g_inf = float(np.abs(blocks.f_mu).max()) if blocks.f_mu.size else 0.0
        if du_inf < cfg.tol_du:
            diagnostics.append(IterationDiagnostics(decrement, g_inf, 0.0, du_inf))
            break
        dz, mu = local_solves(blocks, du)
        directional = -decrement ** 2
        alpha, decreased = line_search(model, u, z, du, dz, mu, rotations,
                                       u_tilde, f_ext_r, directional)
        diagnostics.append(IterationDiagnostics(decrement, g_inf, alpha,
                                                du_inf, not decreased))
        if not decreased:
            no_decrease_run += 1
            if no_decrease_run >= 3:
                break
        else:
            no_decrease_run = 0
        u = u + alpha * du
        z = z + alpha * dz
        if iterate_log is not None:
            iterate_log.append(u.copy())

    u_vel = (u - state.u) / cfg.dt
    new_state = SimState(u, z, u_vel, model.refresh_rotations(u),
                         state.step_index + 1, state.time + cfg.dt)
    return new_state, diagnostics


def subspace_fem_step(model: ReducedModel, state: SimState,
                      f_ext_extra: NDArray[np.float64] | None = None,
                      iterate_log: list | None = None):
    """Baseline: reduced Newton on the positions-only incremental potential
    with the cubature-approximated elastic energy.

    The elastic Hessian is the fixed-rotation Gauss-Newton curvature taken in
    deformation-gradient space. Its isotropic mu-block resists every gradient
    increment, rotations of stiff regions included, so at low iteration counts
    this baseline visibly damps rotational motion that the mixed solver keeps.
    Gradients agree with the packed-stretch form, so converged solutions match
    the mixed solver's.
    """
    cfg = model.config
    if model._refactor is not None:
        raise ValueError("quadratic refactoring applies to the mixed solver "
                         "only")
    f_ext_r = model.gravity_r.copy()
    if f_ext_extra is not None:
        f_ext_r += f_ext_extra
    u_tilde = model.momentum_target(state)
    u = state.u.copy()
    diagnostics: list[IterationDiagnostics] = []
    no_decrease_run = 0

    def objective(uu):
        e, _, _ = model.quadratic_energy(uu, u_tilde, f_ext_r)
        rot = model.refresh_rotations(uu)
        sb = model.sbar_cub(uu, rot)
        return e + float(elastic.psi_density_batch(
            sb, model.config.model, model.cub_mu, model.cub_lam,
            model.cub_vols).sum())

    pre = model._fem_precompute()
    t_t = pre["T"].transpose(0, 2, 1)                     # |C| x 3 x q

    for it in range(cfg.max_iterations):
        fs = model.cubature_gradients(u)
        rotations = elastic.rotations_from_gradients(fs)
        energy, grad, hess = model.quadratic_energy(u, u_tilde, f_ext_r)
        if not np.isfinite(energy):
            raise SolverError("state diverged: non-finite energy", it)
        gf = elastic.fem_force_gradients_batch(fs, rotations, cfg.model,
                                               model.cub_mu, model.cub_lam,
                                               model.cub_vols)
        grad = grad + np.matmul(gf, t_t).sum(axis=0).ravel()
        hess = hess + pre["iso_hess"]
        _, coeffs, dirs = elastic.fem_hessian_terms_batch(
            fs, rotations, cfg.model, model.cub_mu, model.cub_lam,
            model.cub_vols)
        if dirs is not None:
            a = np.matmul(dirs, t_t).reshape(dirs.shape[0], -1)
            hess = hess + a.T @ (coeffs[:, None] * a)
        du = _solve_spd(hess, -grad, "FEM Hessian", it)
        decrement = float(np.sqrt(max(du @ (hess @ du), 0.0)))
        du_inf = float(np.abs(du).max()) if du.size else 0.0
        if du_inf < cfg.tol_du:
            diagnostics.append(IterationDiagnostics(
                decrement, float(np.abs(grad).max()), 0.0, du_inf))
            break
        base = objective(u)
        alpha = 1.0
        decreased = False
        for _ in range(cfg.max_backtracks + 1):
            trial = objective(u + alpha * du)
            if np.isfinite(trial) and trial < base:
                decreased = True
                break
            alpha *= cfg.backtrack_shrink
        if not decreased:
            alpha /= cfg.backtrack_shrink
        diagnostics.append(IterationDiagnostics(
            decrement, float(np.abs(grad).max()), alpha, du_inf, not decreased))
        if not decreased:
            no_decrease_run += 1
            if no_decrease_run >= 3:
                break
        else:
            no_decrease_run = 0
            u = u + alpha * du
        if iterate_log is not None:
            iterate_log.append(u.copy())

    u_vel = (u - state.u) / cfg.dt
    rot = model.refresh_rotations(u)
    sb = model.sbar_cub(u, rot)
    new_state = SimState(u, sb, u_vel, rot,
                         state.step_index + 1, state.time + cfg.dt)
    return new_state, diagnostics


def consistency_regularizer(model: ReducedModel, u: NDArray[np.float64]):
    """Regularization energy, gradient and (constant) Hessian at u.

    Zero when gamma is 0 or every tet shares its cluster representative's
    deformation gradient (e.g. any globally affine deformation).
    """
    if model._reg is None:
        r = model.basis.r
        return 0.0, np.zeros(r), np.zeros((r, r))
    reg = model._reg
    res = reg["mw"] @ u + reg["m0"]
    energy = reg["gamma"] * float(res @ res)
    grad = reg["hess"] @ u + reg["grad0"]
    return energy, grad, reg["hess"]


def quad_refactor_matrices(mesh: TetMesh, materials: MaterialField,
                           ops: DiscreteOperators, basis: PositionBasis):
    """Constant matrices of the ARAP quadratic split.

    The trace-quadratic part of ARAP, sum_t vol_t mu_t tr(F^T F), equals
    u^T C u + 2 b^T u + const with F linear in u; the remaining cubatured
    density is linear in the stretch trace.
    """
    jb = ops.J @ np.kron(np.eye(3), np.asarray(basis.C))
    jx = ops.J @ flatten_positions(mesh.rest_positions)
    au = np.repeat(ops.volumes * materials.lame_mu, 9)
    cmat = jb.T @ (au[:, None] * jb)
    b = jb.T @ (au * jx)
    const = float(jx @ (au * jx))
    return {"C": cmat, "b": b, "const": const}
