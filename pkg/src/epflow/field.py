"""Anisotropic Green kernel, background potential and the Lagrangian force.

Conventions (fixed so that the Lagrangian Poisson equation holds with the
source 4 pi c w^alpha J^-1):

    G_L(y)  = <L^-1 y, y>^(-1/2)          (L:D^2 G_L = -4 pi delta, det L = 1)
    Psi(y)  = -c int_B w^alpha(z) G_L(eta(y) - eta(z)) dz
    G(y)    = -c int_B w^alpha(z) (grad G_L)(eta(y) - eta(z)) dz

so that G is the gradient of Psi in the image coordinates x = eta(y).

The background part (eta = id) is computed in target-centred polar
coordinates, where the volume element cancels the kernel singularity.  The
correction for eta != id is a grid sum whose leading singular part is
subtracted and added back analytically through the potential of a uniform
ellipsoid (Carlson integrals).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from numpy.polynomial import legendre
from scipy.special import elliprd, elliprf, roots_jacobi

from . import _kernels
from .geometry import weighted_norm
from .profiles import enthalpy_coefficient

__all__ = [
    "KernelSpec",
    "ForceField",
    "PolarRule",
    "SingularEvaluationError",
    "NonInjectiveMapError",
    "green_kernel",
    "green_gradient",
    "ball_kernel_integral",
    "background_potential",
    "force_field",
    "divcurl_residual",
    "normal_reconstruction",
    "DivCurlReport",
    "NormalReport",
]


class SingularEvaluationError(ValueError):
    pass


class NonInjectiveMapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Shape matrix Lambda (symmetric, positive definite, det 1)."""

    Lambda: np.ndarray
    Lambda_inv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        L = np.array(self.Lambda, dtype=float)
        if not np.allclose(L, L.T, atol=1e-12):
            raise ValueError("Lambda must be symmetric")
        L = 0.5 * (L + L.T)
        ev = np.linalg.eigvalsh(L)
        if ev[0] <= 0:
            raise ValueError("Lambda must be positive definite")
        if abs(np.prod(ev) - 1.0) > 1e-8:
            raise ValueError(f"det Lambda = {np.prod(ev):.12g} differs from 1")
        Li = np.linalg.inv(L)
        object.__setattr__(self, "Lambda", L)
        object.__setattr__(self, "Lambda_inv", 0.5 * (Li + Li.T))

    @classmethod
    def identity(cls):
        return cls(np.eye(3))


def green_kernel(spec, y):
    """<Lambda^-1 y, y>^(-1/2); raises at y = 0."""
    y = np.asarray(y, dtype=float)
    q = np.einsum("...i,ij,...j->...", y, spec.Lambda_inv, y)
    if np.any(q <= 0):
        raise SingularEvaluationError("kernel evaluated at the origin")
    return q**-0.5


def green_gradient(spec, y):
    """Gradient -Lambda^-1 y <Lambda^-1 y, y>^(-3/2)."""
    y = np.asarray(y, dtype=float)
    Ly = y @ spec.Lambda_inv
    q = np.sum(Ly * y, axis=-1)
    if np.any(q <= 0):
        raise SingularEvaluationError("kernel evaluated at the origin")
    return -Ly * (q**-1.5)[..., None]


def ball_kernel_integral(Q, y):
    """I(y) = int_B <Q(y - z), y - z>^(-1/2) dz and its gradient, for |y| <= 1.

    ``Q`` has shape (..., 3, 3) (symmetric positive definite), ``y`` shape
    (..., 3).  With Q = V diag(a^2) V^T,

        I = 2 pi R_F(a1^2, a2^2, a3^2) - (2 pi / 3) sum_i a_i^2 R_D(a_j^2, a_k^2, a_i^2) (v_i . y)^2.
    """
    Q = np.asarray(Q, dtype=float)
    y = np.asarray(y, dtype=float)
    a2, V = np.linalg.eigh(Q)
    proj = np.einsum("...ji,...j->...i", V, y)
    rf = elliprf(a2[..., 0], a2[..., 1], a2[..., 2])
    rd = np.stack([
        elliprd(a2[..., 1], a2[..., 2], a2[..., 0]),
        elliprd(a2[..., 0], a2[..., 2], a2[..., 1]),
        elliprd(a2[..., 0], a2[..., 1], a2[..., 2]),
    ], axis=-1)
    c = a2 * rd
    val = 2.0 * np.pi * rf - (2.0 * np.pi / 3.0) * np.sum(c * proj**2, axis=-1)
    grad = -(4.0 * np.pi / 3.0) * np.einsum("...ij,...j->...i", V, c * proj)
    return val, grad


@dataclass(frozen=True)
class PolarRule:
    """Resolution of the target-centred polar quadrature.

    ``n_cos`` Gauss-Legendre nodes in the cosine of the angle to the target
    direction, ``n_azim`` trapezoid nodes around it, ``n_rad`` Gauss-Jacobi
    nodes along each ray.
    """

    n_cos: int
    n_azim: int
    n_rad: int

    @classmethod
    def for_grid(cls, grid):
        return cls(4 * grid.n_r + 2 * grid.n_theta, max(grid.n_phi, 8), max(grid.n_r // 2, 6))


def _target_frames(Y):
    r = np.linalg.norm(Y, axis=-1)
    e3 = np.where(r[:, None] > 0, Y / np.where(r > 0, r, 1.0)[:, None], np.array([0.0, 0.0, 1.0]))
    # helper axis least aligned with e3
    idx = np.argmin(np.abs(e3), axis=-1)
    helper = np.eye(3)[idx]
    e1 = np.cross(helper, e3)
    e1 /= np.linalg.norm(e1, axis=-1)[:, None]
    e2 = np.cross(e3, e1)
    return r, e1, e2, e3


def _polar_background(Y, params, spec, rule, chunk=256):
    """Psi-bar = int_B w^alpha G_L(y - z) dz and its gradient at interior targets."""
    alpha = params.alpha
    k = enthalpy_coefficient(params.gamma)
    c, wc = legendre.leggauss(rule.n_cos)
    ph = 2.0 * np.pi * (np.arange(rule.n_azim) + 0.5) / rule.n_azim
    wph = 2.0 * np.pi / rule.n_azim
    x0, v0 = roots_jacobi(rule.n_rad, alpha, 0.0)
    x1, v1 = roots_jacobi(rule.n_rad, alpha - 1.0, 0.0)

    P = len(Y)
    val = np.empty(P)
    grad = np.empty((P, 3))
    for start in range(0, P, chunk):
        sl = slice(start, min(start + chunk, P))
        y = Y[sl]
        r, e1, e2, e3 = _target_frames(y)
        rc = r[:, None] * c[None, :]
        disc = np.sqrt(rc * rc + 1.0 - r[:, None] ** 2)
        R = -rc + disc
        R2 = rc + disc
        # radial sums; the (R - rho)^p factor sits in the Jacobi weight
        rho0 = 0.5 * R[..., None] * (1.0 + x0)
        rad0 = (0.5 * R) ** (alpha + 1.0) * np.sum(
            v0 * k**alpha * (rho0 + R2[..., None]) ** alpha * rho0, axis=-1)
        rho1 = 0.5 * R[..., None] * (1.0 + x1)
        base1 = -2.0 * alpha * k**alpha * v1 * (rho1 + R2[..., None]) ** (alpha - 1.0) * rho1
        S0 = (0.5 * R) ** alpha * np.sum(base1, axis=-1)
        S1 = (0.5 * R) ** alpha * np.sum(base1 * rho1, axis=-1)
        K0, K1 = _kernels.polar_angular(e1, e2, e3, c, ph, spec.Lambda_inv)
        K0 *= wph
        K1 *= wph
        val[sl] = np.sum(wc * K0 * rad0, axis=-1)
        grad[sl] = (np.sum(wc * K0 * S0, axis=-1)[:, None] * y
                    + np.einsum("j,pji,pj->pi", wc, K1, S1))
    return val, grad


def _grid_background(Y, grid, params, spec):
    """Plain grid sum for targets outside the ball."""
    src = grid.weights * grid.enthalpy(params.gamma) ** params.alpha
    Z = grid.Y.reshape(-1, 3)
    s = src.ravel()
    d = Y[:, None, :] - Z[None, :, :]
    val = np.einsum("m,pm->p", s, green_kernel(spec, d))
    grad = np.einsum("m,pmi->pi", s, green_gradient(spec, d))
    return val, grad


def background_potential(grid, params, spec, targets, rule=None, gradient=False):
    """Psi-bar(y) = int_B w^alpha(z) G_L(y - z) dz at the given points.

    Interior targets (|y| <= 1) use the polar rule, exterior ones the grid
    sum.  With ``gradient=True`` the gradient is returned as well.
    """
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    rule = rule or PolarRule.for_grid(grid)
    r = np.linalg.norm(Y, axis=-1)
    inside = r <= 1.0
    val = np.empty(len(Y))
    grad = np.empty((len(Y), 3))
    if np.any(inside):
        val[inside], grad[inside] = _polar_background(Y[inside], params, spec, rule)
    if np.any(~inside):
        val[~inside], grad[~inside] = _grid_background(Y[~inside], grid, params, spec)
    shape = np.shape(targets)[:-1]
    if gradient:
        return val.reshape(shape), grad.reshape(shape + (3,))
    return val.reshape(shape)


@dataclass(frozen=True, eq=False)
class ForceField:
    """Force G and potential Psi on the grid nodes, with provenance."""

    G: np.ndarray
    Psi: np.ndarray
    Lambda: np.ndarray
    field_sign: int
    displaced: bool
    distortion: tuple
    rule: PolarRule


def _graded_sphere_nodes(r, n_s):
    """Per-target nodes s (1 - cos psi = s^2) graded towards the nearest sphere point."""
    a = np.maximum(1.0 - r, 1e-14)
    x, wx = legendre.leggauss(n_s)
    smax = np.arcsinh(np.sqrt(2.0) / a)
    sig = 0.5 * smax[:, None] * (x[None, :] + 1.0)
    sv = a[:, None] * np.sinh(sig)
    ds = 0.5 * smax[:, None] * wx[None, :] * a[:, None] * np.cosh(sig)
    return sv, ds * 2.0 * sv


def _surface_moment(Y, Q, n_s=48, n_azim=24, backend="compiled"):
    """T_kj(y) = int_B (z - y)_j d_k H(y - z) dz with H(u) = <Q u, u>^(-1/2).

    Also returns the moments int_B (z - y)_j H(y - z) dz.

    By the divergence theorem T_kj = S_kj + delta_kj I_Q(y), where
    S_kj = int_{|z|=1} (y - z)_j z_k H(y - z) dS, and the moment equals
    Q^-1 int_{|z|=1} <Q u, u>^(1/2) z dS.  The surface integrals are taken
    around the pole z = y/|y| with the graded variable s = a sinh(sigma),
    a = 1 - |y|, which absorbs the near-singularity of H for targets close
    to the sphere.
    """
    P = len(Y)
    Q = np.ascontiguousarray(np.broadcast_to(Q, (P, 3, 3)))
    r, e1, e2, e3 = _target_frames(Y)
    sv, wgt = _graded_sphere_nodes(r, n_s)
    Qinv = np.linalg.inv(Q)
    if backend == "compiled":
        S, pm = _kernels.surface_moments(Y, e1, e2, e3, Q, Qinv, sv, wgt * (2.0 * np.pi / n_azim),
                                         n_azim)
    else:
        t = sv * sv
        cos_p = 1.0 - t
        sin_p = np.sqrt(np.clip(t * (2.0 - t), 0.0, None))
        ph = 2.0 * np.pi * (np.arange(n_azim) + 0.5) / n_azim
        Z = (sin_p[..., None, None] * (np.cos(ph)[None, None, :, None] * e1[:, None, None, :]
                                       + np.sin(ph)[None, None, :, None] * e2[:, None, None, :])
             + cos_p[..., None, None] * e3[:, None, None, :])
        U = (Y[:, None, None, :] - Z).reshape(P, -1, 3)
        Z = Z.reshape(P, -1, 3)
        q = np.sum(np.matmul(U, Q) * U, axis=-1)
        H = q**-0.5
        wH = np.repeat(wgt * (2.0 * np.pi / n_azim), n_azim, axis=1) * H
        S = np.matmul(np.swapaxes(Z * wH[..., None], 1, 2), U)
        m = np.sum(Z * (wH * q)[..., None], axis=1)
        pm = np.einsum("pjk,pk->pj", Qinv, m)
    IQ, _ = ball_kernel_integral(Q, Y)
    return S + IQ[:, None, None] * np.eye(3), pm


def _correction_chunk(idx, E, Y, W, src, dsrc, Deta, Linv, want_psi):
    """Reference numpy version of the compiled pair sums, for a block of targets."""
    u = E[idx, None, :] - E[None, :, :]
    u0 = Y[idx, None, :] - Y[None, :, :]
    uL = np.matmul(u0, np.swapaxes(Deta[idx], 1, 2))
    rows = np.arange(len(idx))
    d0 = np.sum(u0 * u0, axis=-1)
    d0[rows, idx] = 1.0
    du = np.sum(u * u, axis=-1)
    du[rows, idx] = 1.0
    ratio = np.sqrt(du / d0)
    ratio[rows, idx] = np.nan

    def kern(v):
        Lv = v @ Linv
        q = np.sum(Lv * v, axis=-1)
        q[rows, idx] = np.inf
        inv = 1.0 / np.sqrt(q)
        Lv *= -(inv * inv * inv)[..., None]
        return inv, Lv

    sm = np.broadcast_to(src[None, :], d0.shape)
    # source minus its first-order Taylor polynomial about the target
    taylor = src[idx][:, None] - np.sum(dsrc[idx][:, None, :] * u0, axis=-1)
    rest = sm - taylor
    g_u, acc = kern(u)
    acc *= (W * sm)[..., None]
    g_L, dg_L = kern(uL)
    acc -= (W * taylor)[..., None] * dg_L
    g_0, dg_0 = kern(u0)
    acc -= (W * rest)[..., None] * dg_0
    grad = acc.sum(axis=1)
    pot = np.sum(W * (sm * g_u - taylor * g_L - rest * g_0), axis=1) if want_psi else np.zeros(len(idx))
    return grad, pot, np.nanmin(ratio, axis=1), np.nanmax(ratio, axis=1)


def _correction_sums(E, Y, W, src, dsrc, Deta, Linv, want_psi, backend, threads):
    if backend == "compiled":
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
        return _kernels.correction_sums(E, Y, W, src, dsrc, np.ascontiguousarray(Deta),
                                        np.ascontiguousarray(Linv), want_psi)
    M = len(Y)
    chunks = [np.arange(s, min(s + 64, M)) for s in range(0, M, 64)]
    parts = [_correction_chunk(ix, E, Y, W, src, dsrc, Deta, Linv, want_psi) for ix in chunks]
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(4))


_COLLISION_RATIO = 1e-8


def force_field(grid, theta, fmd, spec, params, *, rule=None, threads=1, want_psi=True,
                background=None, backend="compiled"):
    """Force G = -c int w^alpha (grad G_L)(eta(y) - eta(z)) dz at every node.

    ``theta`` is the displacement eta - y (``None`` means zero).
    ``background`` may carry a precomputed (Psi-bar, grad Psi-bar) pair for
    the same Lambda, which is reused unchanged.  ``backend`` selects the
    compiled pair sums or the (slow) numpy reference.
    """
    rule = rule or PolarRule.for_grid(grid)
    Y = grid.Y.reshape(-1, 3)
    if background is None:
        background = _polar_background(Y, params, spec, rule)
    pbar, gbar = background
    grad = gbar.copy()
    pot = pbar.copy()
    displaced = theta is not None and bool(np.any(theta != 0))
    distortion = (1.0, 1.0)
    if displaced:
        E = Y + theta.reshape(-1, 3)
        W = grid.weights.ravel()
        w = grid.enthalpy(params.gamma).ravel()
        src = w**params.alpha
        kw = enthalpy_coefficient(params.gamma)
        dsrc = (-2.0 * kw * params.alpha * w ** (params.alpha - 1.0))[:, None] * Y
        Deta = fmd.Deta.reshape(-1, 3, 3)
        g1, p1, rmin, rmax = _correction_sums(E, Y, W, src, dsrc, Deta, spec.Lambda_inv,
                                              want_psi, backend, threads)
        # image distances below 1e-8 of the label distance count as a collision
        if not np.all(rmin > _COLLISION_RATIO):
            bad = np.flatnonzero(~(rmin > _COLLISION_RATIO))
            raise NonInjectiveMapError(f"flow map is not injective on the grid (nodes {bad[:5]})")
        grad += g1
        pot += p1
        # analytic parts of the subtracted singular terms
        Q = np.einsum("pki,kl,plj->pij", Deta, spec.Lambda_inv, Deta)
        L0 = np.broadcast_to(spec.Lambda_inv, Q.shape)
        IQ, gIQ = ball_kernel_integral(Q, Y)
        I0, gI0 = ball_kernel_integral(L0, Y)
        MinvT = np.swapaxes(np.linalg.inv(Deta), -1, -2)
        grad += src[:, None] * (np.einsum("pij,pj->pi", MinvT, gIQ) - gI0)
        # first-moment terms: int (z - y)_j grad G_L(M(y - z)) dz = M^-T T_.j
        TQ, mQ = _surface_moment(Y, Q, backend=backend)
        T0, m0 = _surface_moment(Y, L0, backend=backend)
        grad += np.einsum("pik,pkj,pj->pi", MinvT, TQ, dsrc) - np.einsum("pkj,pj->pk", T0, dsrc)
        pot += src * (IQ - I0) + np.einsum("pj,pj->p", dsrc, mQ - m0)
        distortion = (float(rmin.min()), float(rmax.max()))
    c = params.field_sign
    shape = grid.shape
    return ForceField(-c * grad.reshape(shape + (3,)), -c * pot.reshape(shape),
                      spec.Lambda.copy(), c, displaced, distortion, rule)


@dataclass(frozen=True)
class DivCurlReport:
    div_residual: np.ndarray
    curl_residual: np.ndarray
    div_norm: float
    curl_norm: float
    div_max: float
    curl_max: float


def divcurl_residual(grid, gf, theta, fmd, spec, params, weight_power=None):
    """Residuals of the divergence and curl identities satisfied by G.

    div_L G - 4 pi c w^alpha / J - tr(DG A Dtheta L) and
    Curl G - [(DG A Dtheta) - transpose].
    The norms are weighted L^2 with weight w^k, k = alpha by default.
    """
    w = grid.enthalpy(params.gamma)
    k = params.alpha if weight_power is None else weight_power
    DG = grid.gradient(gf.G)
    c = params.field_sign
    L = spec.Lambda
    divL = np.einsum("ij,...ji->...", L, DG)
    if theta is None:
        Dth = np.zeros(grid.shape + (3, 3))
    else:
        Dth = grid.gradient(theta)
    T = DG @ fmd.Ainv @ Dth
    div_res = divL - 4.0 * np.pi * c * w**params.alpha / fmd.J - np.einsum("...ij,ji->...", T, L)
    curl = DG - np.swapaxes(DG, -1, -2)
    curl_res = curl - (T - np.swapaxes(T, -1, -2))
    return DivCurlReport(div_res, curl_res,
                         float(np.sqrt(weighted_norm(grid, div_res, k, w=w))),
                         float(np.sqrt(weighted_norm(grid, curl_res, k, w=w))),
                         float(np.abs(div_res).max()), float(np.abs(curl_res).max()))


@dataclass(frozen=True)
class NormalReport:
    reconstructed: np.ndarray
    direct: np.ndarray
    max_error: float
    rel_error: float


def normal_reconstruction(grid, G, spec, *, region=None):
    """Recover X_r G from its divergence, curl and tangential derivatives.

    L X_r G^i = y^i div_L G - L_km slash_ik G^m + L_km y^k [Curl G]^i_m
                - L_km (y^k y^l / r^2) slash_lm G^i,
    with L = L_km y^k y^m / r^2.  Errors are measured on ``region``
    (default: the support of the cutoff).
    """
    Lam = spec.Lambda
    Y = grid.Y
    r2 = np.sum(Y * Y, axis=-1)
    DG = grid.gradient(G)
    divL = np.einsum("ij,...ji->...", Lam, DG)
    curl = DG - np.swapaxes(DG, -1, -2)
    slash = np.empty(grid.shape + (3, 3, 3))  # [..., a, b, m] = slash_ab G^m
    for a in range(3):
        for b in range(3):
            slash[..., a, b, :] = grid.tangential(G, a, b)
    Lyy = np.einsum("...k,km,...m->...", Y, Lam, Y) / r2
    rhs = Y * divL[..., None]
    rhs -= np.einsum("km,...ikm->...i", Lam, slash)
    rhs += np.einsum("km,...k,...im->...i", Lam, Y, curl)
    rhs -= np.einsum("km,...k,...l,...lmi->...i", Lam, Y, Y, slash) / r2[..., None]
    rec = rhs / Lyy[..., None]
    direct = grid.radial(G)
    mask = grid.psi > 0 if region is None else region
    err = np.abs(rec - direct)[mask]
    scale = max(np.abs(direct[mask]).max(), 1e-300)
    return NormalReport(rec, direct, float(err.max()), float(err.max() / scale))
