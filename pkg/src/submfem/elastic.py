"""Stretch-coordinate kinematics and hyperelastic energy densities.

A symmetric 3x3 stretch matrix ``S`` is packed into a 6-vector
``s = (S11, S22, S33, S12, S13, S23)``: diagonal first, then off-diagonals.
Energy derivatives are taken with respect to the packed values directly,
so off-diagonal coordinates carry a factor-2 chain rule (each packed value
stands for two matrix entries). The ``diag(1,1,1,2,2,2)`` weighting of the
position/stretch consistency constraint lives in the solver, not here.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.typing import NDArray

REST_STRETCH = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# Factor applied to packed coordinates when expanding quadratic forms over
# the full symmetric matrix (off-diagonals appear twice).
PACK_WEIGHTS = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])

_DIAG = slice(0, 3)
_OFF = slice(3, 6)
# (row, col) of each packed slot in the 3x3 matrix.
_PACK_IDX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class EnergyModelKind(str, Enum):
    ARAP = "arap"
    FCR = "fcr"
    SNH = "snh"


@dataclass(frozen=True)
class EnergyModel:
    """Hyperelastic model tag with per-element Lame parameters."""

    kind: EnergyModelKind
    mu: float
    lam: float = 0.0


def vec6_to_mat(s: NDArray[np.float64]) -> NDArray[np.float64]:
    """Packed 6-vector -> symmetric 3x3 matrix."""
    s = np.asarray(s, dtype=np.float64)
    return np.array([[s[0], s[3], s[4]],
                     [s[3], s[1], s[5]],
                     [s[4], s[5], s[2]]])


def mat_to_vec6(m: NDArray[np.float64]) -> NDArray[np.float64]:
    """Symmetric 3x3 matrix -> packed 6-vector."""
    return np.array([m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]])


def polar_decompose(f: NDArray[np.float64]):
    """Rotation/stretch factorization ``F = R S`` with ``det(R) = +1``.

    Reflections are absorbed into ``S`` by negating its smallest singular
    value, keeping ``R`` a proper rotation even for inverted elements.
    """
    f = np.asarray(f, dtype=np.float64)
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite deformation gradient")
    u, sig, vt = np.linalg.svd(f)
    det_uv = np.linalg.det(u) * np.linalg.det(vt)
    d = np.ones(3)
    if det_uv < 0:
        d[2] = -1.0
    r = (u * d) @ vt
    s = vt.T @ np.diag(sig * d) @ vt
    s = 0.5 * (s + s.T)
    return r, s


def rotations_from_gradients(fs: NDArray[np.float64]) -> NDArray[np.float64]:
    """Batched polar rotations for an ``n x 3 x 3`` stack of gradients."""
    fs = np.asarray(fs, dtype=np.float64)
    if not np.all(np.isfinite(fs)):
        raise ValueError("non-finite deformation gradient")
    u, _, vt = np.linalg.svd(fs)
    det_uv = np.linalg.det(u) * np.linalg.det(vt)
    d = np.ones((fs.shape[0], 3))
    d[det_uv < 0, 2] = -1.0
    return (u * d[:, None, :]) @ vt


def sbar(f: NDArray[np.float64], r: NDArray[np.float64]) -> NDArray[np.float64]:
    """Rotation-stripped stretch ``vec6(sym(R^T F))``."""
    m = r.T @ f
    return mat_to_vec6(0.5 * (m + m.T))


def sbar_batch(fs: NDArray[np.float64],
               rs: NDArray[np.float64]) -> NDArray[np.float64]:
    """Batched ``sbar`` over ``n x 3 x 3`` stacks; returns ``n x 6``."""
    m = np.einsum("nji,njk->nik", rs, fs)
    sym = 0.5 * (m + m.transpose(0, 2, 1))
    return np.stack([sym[:, 0, 0], sym[:, 1, 1], sym[:, 2, 2],
                     sym[:, 0, 1], sym[:, 0, 2], sym[:, 1, 2]], axis=1)


def _det_packed(s):
    s1, s2, s3, s4, s5, s6 = s
    return s1 * s2 * s3 + 2.0 * s4 * s5 * s6 \
        - s1 * s6 ** 2 - s2 * s5 ** 2 - s3 * s4 ** 2


def _det_grad(s):
    s1, s2, s3, s4, s5, s6 = s
    return np.array([
        s2 * s3 - s6 ** 2,
        s1 * s3 - s5 ** 2,
        s1 * s2 - s4 ** 2,
        2.0 * (s5 * s6 - s3 * s4),
        2.0 * (s4 * s6 - s2 * s5),
        2.0 * (s4 * s5 - s1 * s6),
    ])


def _det_hess(s):
    s1, s2, s3, s4, s5, s6 = s
    h = np.zeros((6, 6))
    h[0, 1] = h[1, 0] = s3
    h[0, 2] = h[2, 0] = s2
    h[1, 2] = h[2, 1] = s1
    h[0, 5] = h[5, 0] = -2.0 * s6
    h[1, 4] = h[4, 1] = -2.0 * s5
    h[2, 3] = h[3, 2] = -2.0 * s4
    h[3, 3] = -2.0 * s3
    h[4, 4] = -2.0 * s2
    h[5, 5] = -2.0 * s1
    h[3, 4] = h[4, 3] = 2.0 * s6
    h[3, 5] = h[5, 3] = 2.0 * s5
    h[4, 5] = h[5, 4] = 2.0 * s4
    return h


def psi_density(s: NDArray[np.float64], model: EnergyModel,
                vol: float) -> float:
    """Elastic energy of one element at packed stretch ``s`` (Joules)."""
    s = np.asarray(s, dtype=np.float64)
    d = s - REST_STRETCH
    frob = float(np.dot(d * PACK_WEIGHTS, d))  # ||S - I||_F^2
    if model.kind == EnergyModelKind.ARAP:
        return vol * model.mu * frob
    if model.kind == EnergyModelKind.FCR:
        trace = float(d[_DIAG].sum())
        return vol * (model.mu * frob + 0.5 * model.lam * trace ** 2)
    if model.kind == EnergyModelKind.SNH:
        tr_sts = float(np.dot(s * PACK_WEIGHTS, s))
        det = _det_packed(s)
        return vol * (0.5 * model.mu * (tr_sts - 3.0)
                      - model.mu * (det - 1.0)
                      + 0.5 * model.lam * (det - 1.0) ** 2)
    raise ValueError(f"unknown energy model {model.kind}")


def psi_grad(s: NDArray[np.float64], model: EnergyModel,
             vol: float) -> NDArray[np.float64]:
    """Analytic gradient of ``psi_density`` w.r.t. the packed 6-vector."""
    s = np.asarray(s, dtype=np.float64)
    d = s - REST_STRETCH
    if model.kind == EnergyModelKind.ARAP:
        return 2.0 * vol * model.mu * PACK_WEIGHTS * d
    if model.kind == EnergyModelKind.FCR:
        g = 2.0 * vol * model.mu * PACK_WEIGHTS * d
        trace = d[_DIAG].sum()
        g[_DIAG] += vol * model.lam * trace
        return g
    if model.kind == EnergyModelKind.SNH:
        det = _det_packed(s)
        dg = _det_grad(s)
        return vol * (model.mu * PACK_WEIGHTS * s
                      + (model.lam * (det - 1.0) - model.mu) * dg)
    raise ValueError(f"unknown energy model {model.kind}")


def psi_hess(s: NDArray[np.float64], model: EnergyModel, vol: float,
             project: bool = False) -> NDArray[np.float64]:
    """Analytic Hessian of ``psi_density``; optionally PSD-projected."""
    s = np.asarray(s, dtype=np.float64)
    if model.kind == EnergyModelKind.ARAP:
        h = 2.0 * vol * model.mu * np.diag(PACK_WEIGHTS)
    elif model.kind == EnergyModelKind.FCR:
        h = 2.0 * vol * model.mu * np.diag(PACK_WEIGHTS)
        h[:3, :3] += vol * model.lam
    elif model.kind == EnergyModelKind.SNH:
        det = _det_packed(s)
        dg = _det_grad(s)
        dh = _det_hess(s)
        h = vol * (model.mu * np.diag(PACK_WEIGHTS)
                   + model.lam * np.outer(dg, dg)
                   + (model.lam * (det - 1.0) - model.mu) * dh)
    else:
        raise ValueError(f"unknown energy model {model.kind}")
    if project:
        h = project_psd(h)
    return h


def project_psd(h: NDArray[np.float64]) -> NDArray[np.float64]:
    """Clamp negative eigenvalues of a symmetric matrix to zero."""
    h = 0.5 * (h + h.T)
    w, v = np.linalg.eigh(h)
    if w[0] >= 0.0:
        return h
    return (v * np.maximum(w, 0.0)) @ v.T


def constraint_jacobian_block(r: NDArray[np.float64],
                              grad_phi_t: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-element map ``L`` (6 x 12) with ``L dx = vec6(sym(R^T dF))``.

    ``dx`` follows the local dimension-block order (x of the 4 vertices,
    then y, then z). ``grad_phi_t`` is the tet's 4 x 3 shape gradient.
    """
    # dF/dx_{i,a} = e_a outer grad_phi_t[i]; assemble all 12 columns at once.
    # sym(R^T dF)_{pq} = 0.5 (R[a,p] g[i,q] + R[a,q] g[i,p])
    l = np.zeros((6, 12))
    g = grad_phi_t
    for k, (p, q) in enumerate(_PACK_IDX):
        for a in range(3):
            # column index a*4 + i
            l[k, 4 * a:4 * a + 4] = 0.5 * (r[a, p] * g[:, q] + r[a, q] * g[:, p])
    return l


def _det_packed_batch(s):
    s1, s2, s3, s4, s5, s6 = s.T
    return s1 * s2 * s3 + 2.0 * s4 * s5 * s6 \
        - s1 * s6 ** 2 - s2 * s5 ** 2 - s3 * s4 ** 2


def _det_grad_batch(s):
    s1, s2, s3, s4, s5, s6 = s.T
    return np.stack([
        s2 * s3 - s6 ** 2,
        s1 * s3 - s5 ** 2,
        s1 * s2 - s4 ** 2,
        2.0 * (s5 * s6 - s3 * s4),
        2.0 * (s4 * s6 - s2 * s5),
        2.0 * (s4 * s5 - s1 * s6),
    ], axis=1)


def _det_hess_batch(s):
    n = s.shape[0]
    s1, s2, s3, s4, s5, s6 = s.T
    h = np.zeros((n, 6, 6))
    h[:, 0, 1] = h[:, 1, 0] = s3
    h[:, 0, 2] = h[:, 2, 0] = s2
    h[:, 1, 2] = h[:, 2, 1] = s1
    h[:, 0, 5] = h[:, 5, 0] = -2.0 * s6
    h[:, 1, 4] = h[:, 4, 1] = -2.0 * s5
    h[:, 2, 3] = h[:, 3, 2] = -2.0 * s4
    h[:, 3, 3] = -2.0 * s3
    h[:, 4, 4] = -2.0 * s2
    h[:, 5, 5] = -2.0 * s1
    h[:, 3, 4] = h[:, 4, 3] = 2.0 * s6
    h[:, 3, 5] = h[:, 5, 3] = 2.0 * s5
    h[:, 4, 5] = h[:, 5, 4] = 2.0 * s4
    return h


def psi_density_batch(s: NDArray[np.float64], kind: EnergyModelKind,
                      mu: NDArray[np.float64], lam: NDArray[np.float64],
                      vols: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-slot energies for ``n x 6`` packed stretches (vectorized)."""
    s = np.asarray(s, dtype=np.float64)
    d = s - REST_STRETCH
    frob = np.einsum("ni,i,ni->n", d, PACK_WEIGHTS, d)
    if kind == EnergyModelKind.ARAP:
        return vols * mu * frob
    if kind == EnergyModelKind.FCR:
        trace = d[:, :3].sum(axis=1)
        return vols * (mu * frob + 0.5 * lam * trace ** 2)
    if kind == EnergyModelKind.SNH:
        tr_sts = np.einsum("ni,i,ni->n", s, PACK_WEIGHTS, s)
        det = _det_packed_batch(s)
        return vols * (0.5 * mu * (tr_sts - 3.0) - mu * (det - 1.0)
                       + 0.5 * lam * (det - 1.0) ** 2)
    raise ValueError(f"unknown energy model {kind}")


def psi_grad_batch(s: NDArray[np.float64], kind: EnergyModelKind,
                   mu: NDArray[np.float64], lam: NDArray[np.float64],
                   vols: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-slot gradients (``n x 6``), matching :func:`psi_grad`."""
    s = np.asarray(s, dtype=np.float64)
    d = s - REST_STRETCH
    vm = (vols * mu)[:, None]
    if kind == EnergyModelKind.ARAP:
        return 2.0 * vm * PACK_WEIGHTS * d
    if kind == EnergyModelKind.FCR:
        g = 2.0 * vm * PACK_WEIGHTS * d
        trace = d[:, :3].sum(axis=1)
        g[:, :3] += (vols * lam * trace)[:, None]
        return g
    if kind == EnergyModelKind.SNH:
        det = _det_packed_batch(s)
        dg = _det_grad_batch(s)
        return vm * PACK_WEIGHTS * s \
            + (vols * (lam * (det - 1.0) - mu))[:, None] * dg
    raise ValueError(f"unknown energy model {kind}")


def psi_hess_batch(s: NDArray[np.float64], kind: EnergyModelKind,
                   mu: NDArray[np.float64], lam: NDArray[np.float64],
                   vols: NDArray[np.float64],
                   project: bool = False) -> NDArray[np.float64]:
    """Per-slot Hessians (``n x 6 x 6``), matching :func:`psi_hess`."""
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    vm = vols * mu
    if kind == EnergyModelKind.ARAP:
        h = 2.0 * vm[:, None, None] * np.diag(PACK_WEIGHTS)[None]
    elif kind == EnergyModelKind.FCR:
        h = 2.0 * vm[:, None, None] * np.diag(PACK_WEIGHTS)[None]
        h[:, :3, :3] += (vols * lam)[:, None, None]
    elif kind == EnergyModelKind.SNH:
        det = _det_packed_batch(s)
        dg = _det_grad_batch(s)
        dh = _det_hess_batch(s)
        h = vm[:, None, None] * np.diag(PACK_WEIGHTS)[None] \
            + (vols * lam)[:, None, None] * np.einsum("ni,nj->nij", dg, dg) \
            + (vols * (lam * (det - 1.0) - mu))[:, None, None] * dh
    else:
        raise ValueError(f"unknown energy model {kind}")
    if project and n:
        h = 0.5 * (h + h.transpose(0, 2, 1))
        w, v = np.linalg.eigh(h)
        bad = w[:, 0] < 0.0
        if np.any(bad):
            wc = np.maximum(w[bad], 0.0)
            h[bad] = np.einsum("nij,nj,nkj->nik", v[bad], wc, v[bad])
    return h


def constraint_jacobian_blocks_batch(rs: NDArray[np.float64],
                                     grad_phis: NDArray[np.float64]) -> NDArray[np.float64]:
    """Batched :func:`constraint_jacobian_block`: ``n x 6 x 12``."""
    n = rs.shape[0]
    l = np.empty((n, 6, 12))
    g = grad_phis
    for k, (p, q) in enumerate(_PACK_IDX):
        # (n, 3, 4): rows over dimension a, columns over local vertex i.
        block = 0.5 * (rs[:, :, p, None] * g[:, None, :, q]
                       + rs[:, :, q, None] * g[:, None, :, p])
        l[:, k, :] = block.reshape(n, 12)
    return l


def cofactor_batch(fs: NDArray[np.float64]) -> NDArray[np.float64]:
    """Cofactor matrices d(det F)/dF for a batch of ``n x 3 x 3`` arrays."""
    cof = np.empty_like(fs)
    cof[:, :, 0] = np.cross(fs[:, :, 1], fs[:, :, 2])
    cof[:, :, 1] = np.cross(fs[:, :, 2], fs[:, :, 0])
    cof[:, :, 2] = np.cross(fs[:, :, 0], fs[:, :, 1])
    return cof


def fem_force_gradients_batch(fs: NDArray[np.float64],
                              rs: NDArray[np.float64],
                              kind: EnergyModelKind,
                              mu: NDArray[np.float64],
                              lam: NDArray[np.float64],
                              vols: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-slot dpsi/dF (``n x 3 x 3``) with rotations held fixed.

    Pulling psi back through the deformation gradient instead of the packed
    stretch yields the same force (the rotation sensitivity is orthogonal to
    the symmetric part) but exposes the isotropic curvature used by
    :func:`fem_hessian_terms_batch`.
    """
    vm = (vols * mu)[:, None, None]
    if kind == EnergyModelKind.ARAP:
        return 2.0 * vm * (fs - rs)
    if kind == EnergyModelKind.FCR:
        trace = np.einsum("nab,nab->n", rs, fs) - 3.0
        return 2.0 * vm * (fs - rs) + (vols * lam * trace)[:, None, None] * rs
    if kind == EnergyModelKind.SNH:
        det = np.linalg.det(fs)
        cof = cofactor_batch(fs)
        return vm * fs + (vols * (lam * (det - 1.0) - mu))[:, None, None] * cof
    raise ValueError(f"unknown energy model {kind}")


def fem_hessian_terms_batch(fs: NDArray[np.float64],
                            rs: NDArray[np.float64],
                            kind: EnergyModelKind,
                            mu: NDArray[np.float64],
                            lam: NDArray[np.float64],
                            vols: NDArray[np.float64]):
    """Gauss-Newton curvature of psi in deformation-gradient space.

    Returns ``(iso, coeffs, dirs)`` describing the per-slot 9 x 9 Hessian
    iso_c * I_9 + coeffs_c * vec(dirs_c) vec(dirs_c)^T with rotations held
    fixed; ``dirs`` is None for models without a rank-one term. The isotropic
    block penalizes all deformation-gradient increments, rotational ones
    included, which is what separates this baseline from the mixed solver at
    low iteration counts.
    """
    if kind == EnergyModelKind.ARAP:
        return 2.0 * vols * mu, None, None
    if kind == EnergyModelKind.FCR:
        return 2.0 * vols * mu, vols * lam, rs
    if kind == EnergyModelKind.SNH:
        return vols * mu, vols * lam, cofactor_batch(fs)
    raise ValueError(f"unknown energy model {kind}")
