"""Compiled inner loops for the force convolution.

Every target is summed serially in source order, so the result does not
depend on how targets are distributed over threads.
"""

import math

import numba
import numpy as np

# the TBB layer shipped with some numba builds is too old and warns on import
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "workqueue"


@numba.njit(parallel=True, cache=True)
def correction_sums(E, Y, W, src, dsrc, Deta, Linv, want_psi):
    """Singularity-subtracted pair sums for the deformation correction.

    For target p the summand over sources m != p is
        W_m [ s_m K(e_p - e_m) - t_pm K(M_p u0) - (s_m - t_pm) K(u0) ],
    with u0 = y_p - y_m, t_pm = s_p - ds_p . u0 and K the kernel gradient
    (and the kernel itself for the potential).
    """
    n = Y.shape[0]
    grad = np.zeros((n, 3))
    pot = np.zeros(n)
    rmin = np.full(n, np.inf)
    rmax = np.zeros(n)
    for p in numba.prange(n):
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        ps = 0.0
        lo = np.inf
        hi = 0.0
        M = Deta[p]
        for m in range(n):
            if m == p:
                continue
            a0 = Y[p, 0] - Y[m, 0]
            a1 = Y[p, 1] - Y[m, 1]
            a2 = Y[p, 2] - Y[m, 2]
            b0 = E[p, 0] - E[m, 0]
            b1 = E[p, 1] - E[m, 1]
            b2 = E[p, 2] - E[m, 2]
            c0 = M[0, 0] * a0 + M[0, 1] * a1 + M[0, 2] * a2
            c1 = M[1, 0] * a0 + M[1, 1] * a1 + M[1, 2] * a2
            c2 = M[2, 0] * a0 + M[2, 1] * a1 + M[2, 2] * a2
            d0 = a0 * a0 + a1 * a1 + a2 * a2
            du = b0 * b0 + b1 * b1 + b2 * b2
            ratio = math.sqrt(du / d0)
            if ratio < lo:
                lo = ratio
            if ratio > hi:
                hi = ratio
            sm = src[m]
            t = src[p] - (dsrc[p, 0] * a0 + dsrc[p, 1] * a1 + dsrc[p, 2] * a2)
            wu = W[m] * sm
            wl = W[m] * t
            w0 = W[m] * (sm - t)
            # kernel at the image difference
            l0 = Linv[0, 0] * b0 + Linv[0, 1] * b1 + Linv[0, 2] * b2
            l1 = Linv[1, 0] * b0 + Linv[1, 1] * b1 + Linv[1, 2] * b2
            l2 = Linv[2, 0] * b0 + Linv[2, 1] * b1 + Linv[2, 2] * b2
            iu = 1.0 / math.sqrt(l0 * b0 + l1 * b1 + l2 * b2)
            f = wu * iu * iu * iu
            g0 -= f * l0
            g1 -= f * l1
            g2 -= f * l2
            # kernel at the linearised difference
            l0 = Linv[0, 0] * c0 + Linv[0, 1] * c1 + Linv[0, 2] * c2
            l1 = Linv[1, 0] * c0 + Linv[1, 1] * c1 + Linv[1, 2] * c2
            l2 = Linv[2, 0] * c0 + Linv[2, 1] * c1 + Linv[2, 2] * c2
            il = 1.0 / math.sqrt(l0 * c0 + l1 * c1 + l2 * c2)
            f = wl * il * il * il
            g0 += f * l0
            g1 += f * l1
            g2 += f * l2
            # kernel at the label difference
            l0 = Linv[0, 0] * a0 + Linv[0, 1] * a1 + Linv[0, 2] * a2
            l1 = Linv[1, 0] * a0 + Linv[1, 1] * a1 + Linv[1, 2] * a2
            l2 = Linv[2, 0] * a0 + Linv[2, 1] * a1 + Linv[2, 2] * a2
            i0 = 1.0 / math.sqrt(l0 * a0 + l1 * a1 + l2 * a2)
            f = w0 * i0 * i0 * i0
            g0 += f * l0
            g1 += f * l1
            g2 += f * l2
            if want_psi:
                ps += wu * iu - wl * il - w0 * i0
        grad[p, 0] = g0
        grad[p, 1] = g1
        grad[p, 2] = g2
        pot[p] = ps
        rmin[p] = lo
        rmax[p] = hi
    return grad, pot, rmin, rmax


@numba.njit(parallel=True, cache=True)
def surface_moments(Y, e1, e2, e3, Q, Qinv, s_nodes, s_weights, n_azim):
    """Sphere integrals S_kj = int (y - z)_j z_k H dS and m_k = int <Qu,u>^(1/2) z_k dS.

    ``s_nodes``/``s_weights`` hold per-target graded nodes s (with
    1 - cos(psi) = s^2) and weights already including 2 s ds dphi.
    """
    n = Y.shape[0]
    ns = s_nodes.shape[1]
    S = np.zeros((n, 3, 3))
    mom = np.zeros((n, 3))
    dph = 2.0 * math.pi / n_azim
    cph = np.empty(n_azim)
    sph = np.empty(n_azim)
    for l in range(n_azim):
        cph[l] = math.cos((l + 0.5) * dph)
        sph[l] = math.sin((l + 0.5) * dph)
    for p in numba.prange(n):
        acc = np.zeros((3, 3))
        mk = np.zeros(3)
        z = np.empty(3)
        u = np.empty(3)
        Qp = Q[p]
        for a in range(ns):
            sv = s_nodes[p, a]
            t = sv * sv
            cp = 1.0 - t
            sp = math.sqrt(max(t * (2.0 - t), 0.0))
            wgt = s_weights[p, a]
            for l in range(n_azim):
                for i in range(3):
                    z[i] = sp * (cph[l] * e1[p, i] + sph[l] * e2[p, i]) + cp * e3[p, i]
                    u[i] = Y[p, i] - z[i]
                q = 0.0
                for i in range(3):
                    for j in range(3):
                        q += u[i] * Qp[i, j] * u[j]
                h = wgt / math.sqrt(q)
                for k in range(3):
                    hz = h * z[k]
                    for j in range(3):
                        acc[k, j] += hz * u[j]
                    mk[k] += q * hz
        for k in range(3):
            for j in range(3):
                S[p, k, j] = acc[k, j]
        for j in range(3):
            v = 0.0
            for k in range(3):
                v += Qinv[p, j, k] * mk[k]
            mom[p, j] = v
    return S, mom


@numba.njit(parallel=True, cache=True)
def polar_angular(e1, e2, e3, c, ph, Linv):
    """Azimuthal sums K0 = sum_l G_L(omega) and K1 = sum_l G_L(omega) omega.

    omega = sin(c) (cos ph e1 + sin ph e2) + c e3 for every target and cosine node.
    """
    n = e1.shape[0]
    nc = c.shape[0]
    nl = ph.shape[0]
    K0 = np.zeros((n, nc))
    K1 = np.zeros((n, nc, 3))
    cph = np.cos(ph)
    sph = np.sin(ph)
    for p in numba.prange(n):
        om = np.empty(3)
        for j in range(nc):
            sc = math.sqrt(1.0 - c[j] * c[j])
            k0 = 0.0
            k1 = np.zeros(3)
            for l in range(nl):
                for i in range(3):
                    om[i] = sc * (cph[l] * e1[p, i] + sph[l] * e2[p, i]) + c[j] * e3[p, i]
                q = 0.0
                for i in range(3):
                    for k in range(3):
                        q += om[i] * Linv[i, k] * om[k]
                g = 1.0 / math.sqrt(q)
                k0 += g
                for i in range(3):
                    k1[i] += g * om[i]
            K0[p, j] = k0
            for i in range(3):
                K1[p, j, i] = k1[i]
    return K0, K1
