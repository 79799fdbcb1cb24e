"""Weighted energy, vorticity and dissipation functionals of a perturbation.

Norms follow the boundary/interior split with the cutoff psi: near the
boundary the derivatives are X_r^a slash^beta (a + |beta| <= N), in the
interior the Cartesian d^nu (|nu| <= N).  The squared weighted norm is
||f||_{k,g}^2 = int w^k |f|^2 g dy with the unscaled enthalpy w.

All functionals are snapshot values; the supremum over earlier times is
kept by :class:`NormSeries`.  Matrix-valued quantities (gradients, curls)
are measured with the Frobenius sum over all entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affine import AffineIVP, expansion_rates, frame_at, integrate
from .geometry import cartesian_indices, lie_operators, multi_indices, weighted_norm

__all__ = [
    "NormReport",
    "NormSeries",
    "DecayFit",
    "FitRefused",
    "energy_norm",
    "energy_norm_report",
    "vorticity_norm",
    "dissipation",
    "curl_residual",
    "decay_fit",
    "asymptotic_mu0",
]


class FitRefused(ValueError):
    pass


@dataclass(frozen=True)
class NormReport:
    tau: float
    boundary: dict
    interior: dict
    S: float
    B_V: float
    B_theta: float
    D: float
    mu0: float | None
    eB: float | None
    combined: float | None
    apriori: object = None


def _derivatives(grid, F, N):
    """Yield ('b', (a, beta), X_r^a slash^beta F) then ('i', nu, d^nu F)."""
    for a, beta in multi_indices(N):
        yield "b", (a, beta), grid.multi(F, a, beta)
    for nu in cartesian_indices(N):
        yield "i", nu, grid.cartesian_multi(F, nu)


def _v_factor(frame, params):
    return frame.mu ** (3.0 * params.gamma - 3.0) / params.delta


def energy_norm(state, frame, params, N):
    """Snapshot S^N and its breakdown.

    Returns ``(S, boundary, interior)`` where ``boundary[(a, beta)]`` and
    ``interior[nu]`` are dicts with the V, theta, gradient and divergence
    terms (the V term already carries delta^-1 mu^(3 gamma - 3)).
    """
    grid = state.grid
    w = grid.enthalpy(params.gamma)
    alpha = params.alpha
    psi = grid.psi
    fac = _v_factor(frame, params)
    Ainv = state.fmd.Ainv
    boundary, interior = {}, {}
    pairs = zip(_derivatives(grid, state.theta, N), _derivatives(grid, state.V, N))
    for (kind, idx, dth), (_, _, dv) in pairs:
        if kind == "b":
            k0, g, out = alpha + idx[0], psi, boundary
        else:
            k0, g, out = alpha, 1.0 - psi, interior
        G = grid.gradient(dth) @ Ainv
        out[idx] = {
            "V": fac * weighted_norm(grid, dv, k0, g, w),
            "theta": weighted_norm(grid, dth, k0, g, w),
            "grad": weighted_norm(grid, G, k0 + 1, g, w),
            "div": weighted_norm(grid, np.trace(G, axis1=-2, axis2=-1), k0 + 1, g, w),
        }
    S = sum(sum(t.values()) for t in boundary.values()) + sum(sum(t.values()) for t in interior.values())
    return float(S), boundary, interior


def vorticity_norm(F, state, frame, params, N):
    """B^N of the field F: Curl_{Lambda A} of each derivative, weights w^(a+alpha+1)."""
    grid = state.grid
    w = grid.enthalpy(params.gamma)
    alpha = params.alpha
    total = 0.0
    for kind, idx, dF in _derivatives(grid, F, N):
        curl = lie_operators(grid, dF, state.fmd, frame.Lambda)["curl_LA"]
        if kind == "b":
            total += weighted_norm(grid, curl, alpha + idx[0] + 1, grid.psi, w)
        else:
            total += weighted_norm(grid, curl, alpha + 1, 1.0 - grid.psi, w)
    return float(total)


def dissipation(state, frame, params, N):
    """D^N = (5 - 3 gamma)/delta mu^(3 gamma - 3) times the weighted V sum."""
    if params.gamma >= 5.0 / 3.0:
        raise ValueError("dissipation is only positive for gamma < 5/3")
    grid = state.grid
    w = grid.enthalpy(params.gamma)
    alpha = params.alpha
    total = 0.0
    for kind, idx, dv in _derivatives(grid, state.V, N):
        if kind == "b":
            total += weighted_norm(grid, dv, alpha + idx[0], grid.psi, w)
        else:
            total += weighted_norm(grid, dv, alpha, 1.0 - grid.psi, w)
    return float((5.0 - 3.0 * params.gamma) * _v_factor(frame, params) * total)


def energy_norm_report(state, frame, params, N, mu0=None):
    S, bnd, inn = energy_norm(state, frame, params, N)
    BV = vorticity_norm(state.V, state, frame, params, N)
    Bt = vorticity_norm(state.theta, state, frame, params, N)
    D = dissipation(state, frame, params, N)
    eB = comb = None
    if mu0 is not None:
        eB = float(np.exp(2.0 * mu0 * state.tau) * BV)
        comb = S + eB
    return NormReport(float(state.tau), bnd, inn, S, BV, Bt, D, mu0, eB, comb, state.apriori)


@dataclass
class NormSeries:
    """Running term-wise supremum: S^N(tau) = sum over terms of sup_{tau' <= tau}."""

    _sup: dict = field(default_factory=dict)

    def add(self, rep):
        for part, terms in (("b", rep.boundary), ("i", rep.interior)):
            for idx, vals in terms.items():
                for name, v in vals.items():
                    key = (part, idx, name)
                    self._sup[key] = max(self._sup.get(key, 0.0), v)
        return float(sum(self._sup.values()))


def curl_residual(states, traj, params, weight_power=None):
    """Weighted L^2 norm of the curl-transport residual at interior snapshots.

    Curl(V_t) + (mu_t/mu) Curl V + 2 Curl(Gamma* V), all with
    Curl = Curl_{Lambda A} at the snapshot, V_t by centred differences.
    Snapshots must be equally spaced in tau; at least three are needed.
    """
    if len(states) < 3:
        raise ValueError("need at least three snapshots")
    grid = states[0].grid
    w = grid.enthalpy(params.gamma)
    k = params.alpha + 1.0 if weight_power is None else weight_power
    out = []
    for prev, cur, nxt in zip(states[:-2], states[1:-1], states[2:]):
        fr = frame_at(traj, traj.t_of_tau(cur.tau))
        Vt = (nxt.V - prev.V) / (nxt.tau - prev.tau)
        field_ = Vt + (fr.mu_tau / fr.mu) * cur.V + 2.0 * cur.V @ fr.Gamma_star.T
        curl = lie_operators(grid, field_, cur.fmd, fr.Lambda)["curl_LA"]
        out.append(float(np.sqrt(weighted_norm(grid, curl, k, w=w))))
    return np.array(out)


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    stderr: float
    window: tuple
    n: int


def decay_fit(tau, values, window=None, min_samples=10, min_efolds=2.0):
    """Least-squares slope of log(value) against tau.

    ``window`` is a (lo, hi) range in tau; the default is the trailing half
    of the series.  The window must hold ``min_samples`` points and the
    values must span ``min_efolds`` e-folds.
    """
    tau = np.asarray(tau, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (tau[0] + 0.5 * (tau[-1] - tau[0]), tau[-1])
    sel = (tau >= window[0]) & (tau <= window[1])
    t, y = tau[sel], v[sel]
    if len(t) < min_samples:
        raise FitRefused(f"only {len(t)} samples in window {window}")
    if np.any(y <= 0):
        raise FitRefused("non-positive values in the fit window")
    ly = np.log(y)
    if ly.max() - ly.min() < min_efolds:
        raise FitRefused(f"values span {ly.max() - ly.min():.2f} e-folds, fewer than {min_efolds}")
    X = np.vstack([t, np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(X, ly, rcond=None)
    dof = max(len(t) - 2, 1)
    resid = ly - X @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    return DecayFit(float(coef[0]), float(np.sqrt(cov[0, 0])), (float(window[0]), float(window[1])),
                    int(len(t)))


def asymptotic_mu0(params, A0, A1, t_end=1e7):
    """mu_0 = (3 gamma - 3)/2 mu_1 with mu_1 = det(b)^(1/3) and b = A'(t_end)."""
    traj = integrate(AffineIVP(params, A0, A1, t_end=t_end))
    return expansion_rates(traj.Adot(traj.t_end), params.gamma).mu0
