"""Background profiles of the affine motion and admissibility checks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre
from scipy.special import beta as beta_fn
from scipy.special import betainc, roots_jacobi

__all__ = [
    "AffineFieldSample",
    "AdmissibilityReport",
    "MassReport",
    "enthalpy",
    "enthalpy_coefficient",
    "affine_density_velocity",
    "total_mass",
    "radial_mass",
    "admissibility_checks",
    "classify_gamma",
]


def enthalpy_coefficient(gamma):
    """(gamma - 1) / (2 gamma), the value of w at the centre."""
    return (gamma - 1.0) / (2.0 * gamma)


def enthalpy(y, params, scaled=False):
    """w(y) = (gamma-1)/(2 gamma) (1 - |y|^2)_+ ; times delta if ``scaled``."""
    y = np.asarray(y, dtype=float)
    w = enthalpy_coefficient(params.gamma) * np.maximum(1.0 - np.sum(y * y, axis=-1), 0.0)
    return params.delta * w if scaled else w


@dataclass(frozen=True)
class AffineFieldSample:
    t: float
    x: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    inside: np.ndarray


def affine_density_velocity(frame, x, params):
    """Eulerian density and velocity of the affine motion at points ``x``."""
    x = np.asarray(x, dtype=float)
    Ainv = np.linalg.inv(frame.A)
    y = x @ Ainv.T
    q = 1.0 - np.sum(y * y, axis=-1)
    inside = q > 0.0
    base = params.delta * enthalpy_coefficient(params.gamma) * np.where(inside, q, 0.0)
    rho = base**params.alpha / np.linalg.det(frame.A)
    u = y @ frame.Adot.T
    return AffineFieldSample(frame.t, x, rho, u, inside)


def radial_mass(r, gamma):
    """4 pi int_0^r w^alpha s^2 ds (unscaled), exact via the incomplete beta function."""
    alpha = 1.0 / (gamma - 1.0)
    k = enthalpy_coefficient(gamma)
    r = np.clip(np.asarray(r, dtype=float), 0.0, 1.0)
    full = 0.5 * beta_fn(1.5, alpha + 1.0)
    return 4.0 * np.pi * k**alpha * full * betainc(1.5, alpha + 1.0, r * r)


@dataclass(frozen=True)
class MassReport:
    mass: float
    error_estimate: float
    converged: bool


def total_mass(frame, params, n_radial=16, tol=1e-10):
    """Eulerian mass of the affine motion by quadrature over the ellipsoid A B.

    The substitution x = A y is applied numerically: the Jacobian det A and
    the density factor 1/det A both appear and cancel only in floating point.
    Radial nodes are Gauss-Jacobi for the weight (1 - r)^alpha on [0, 1];
    the error estimate compares ``n_radial`` and ``2 n_radial`` nodes.
    """
    a = params.alpha

    def quad(n):
        x, wq = roots_jacobi(n, a, 2.0)
        r = 0.5 * (x + 1.0)
        # (1 - r)^a r^2 is in the weight; remaining factor (1 + r)^a
        wq = wq * 0.5 ** (a + 3.0)
        pts = r[:, None] * frame.A[:, 2][None, :]
        rho = affine_density_velocity(frame, pts, params).rho
        detA = np.linalg.det(frame.A)
        smooth = rho / (1.0 - r) ** a
        return 4.0 * np.pi * detA * float(np.sum(wq * smooth))

    m1, m2 = quad(n_radial), quad(2 * n_radial)
    err = abs(m2 - m1)
    ok = err <= tol * max(abs(m2), 1e-300)
    if not ok:
        warnings.warn(f"total_mass quadrature not converged (estimate {err:.2e})", stacklevel=2)
    return MassReport(m2, err, ok)


def classify_gamma(gamma, tol=1e-12):
    """'1+1/n' for gamma = 1 + 1/n (n >= 2), 'below-14/13', or 'not-covered'."""
    n = 1.0 / (gamma - 1.0)
    if abs(n - round(n)) < tol * max(1.0, n) and round(n) >= 2:
        return "1+1/n"
    if gamma < 14.0 / 13.0:
        return "below-14/13"
    return "not-covered"


@dataclass(frozen=True)
class AdmissibilityReport:
    gamma: float
    gamma_class: str
    physical_vacuum: bool
    max_radial_derivative: float
    weight_sums: tuple
    refinement_ratio: float
    divergent: bool
    N: int
    warnings: list = field(default_factory=list)


def _xr_powers(alpha, N):
    """Coefficients of X_r^a (1 - r^2)^alpha as sums c r^(2p) (1 - r^2)^(alpha - m).

    Returns a list over a = 0..N of dicts {(p, m): c}.
    """
    terms = {(0, 0): 1.0}
    out = [dict(terms)]
    for _ in range(N):
        new = {}
        for (p, m), c in terms.items():
            # X_r [r^2p (1-r^2)^e] = 2p r^2p (1-r^2)^e - 2e r^(2p+2) (1-r^2)^(e-1)
            e = alpha - m
            if p:
                new[(p, m)] = new.get((p, m), 0.0) + 2.0 * p * c
            if e != 0:
                new[(p + 1, m + 1)] = new.get((p + 1, m + 1), 0.0) - 2.0 * e * c
        terms = {k: v for k, v in new.items() if v != 0.0}
        out.append(dict(terms))
    return out


def _weight_sum(alpha, k, N, r, wr):
    """sum_a ||X_r^a w^alpha||_{alpha + a, 1} on radial nodes r with weights wr (incl. r^2)."""
    total = 0.0
    s = 1.0 - r * r
    for a, terms in enumerate(_xr_powers(alpha, N)):
        f = np.zeros_like(r)
        for (p, m), c in terms.items():
            f += c * r ** (2 * p) * s ** (alpha - m)
        f *= k**alpha
        integrand = (k * s) ** (alpha + a) * f * f
        total += np.sqrt(4.0 * np.pi * np.sum(wr * integrand))
    return total


def admissibility_checks(params, N, grid):
    """Physical-vacuum check, weight-sum divergence test and gamma classification.

    Tangential derivatives of the radial weight vanish, so only the X_r^a
    terms of the weight sum contribute.  They are expanded exactly and
    integrated on the grid's radial rule and on a rule with twice the nodes;
    a ratio above 1.5 flags divergence.
    """
    g = params.gamma
    alpha = params.alpha
    k = enthalpy_coefficient(g)
    msgs = []
    # spectral radial derivative of w on the boundary collar r >= 3/4
    dw = grid.d_r(grid.enthalpy(g))[grid.r >= 0.75]
    vacuum = bool(np.all(dw < 0))

    sums = []
    for n in (grid.n_r, 2 * grid.n_r):
        x, wx = legendre.leggauss(2 * n)
        r, wr = x[n:], wx[n:] * x[n:] ** 2
        sums.append(_weight_sum(alpha, k, N, r, wr))
    ratio = sums[1] / sums[0]
    divergent = bool(ratio > 1.5 or not np.isfinite(ratio))
    cls = classify_gamma(g)
    if cls == "not-covered":
        msgs.append(f"gamma = {g} is outside the sufficient conditions (1 + 1/n or < 14/13)")
    if divergent:
        msgs.append(f"weight sum grows under refinement (ratio {ratio:.3g})")
    return AdmissibilityReport(g, cls, vacuum, float(dw.max()), tuple(sums), float(ratio),
                               divergent, int(N), msgs)
