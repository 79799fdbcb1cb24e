"""Discretization of the closed unit ball.

The grid is a tensor product in (r, theta, phi) with no node at the origin
or on the poles.  Derivatives are spectral:

* radial: polynomial differentiation on the full Gauss-Legendre diameter,
  using the antipodal continuation f(-r, theta, phi) = f(r, pi - theta, phi + pi);
* polar: Fourier differentiation on the doubled sphere (theta extended to
  [0, 2 pi) with the same antipodal rule);
* azimuthal: Fourier differentiation.

Fields carry Cartesian components in trailing axes, so a scalar field has
shape ``grid.shape``, a vector field ``grid.shape + (3,)`` and a matrix field
``grid.shape + (3, 3)``.
"""

from __future__ import annotations

import csv
import functools
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

__all__ = [
    "BallGrid",
    "FlowMapDerivatives",
    "DegenerateMapError",
    "build_grid",
    "cutoff",
    "apply_vector_field",
    "flow_map_derivatives",
    "lie_operators",
    "weighted_norm",
    "tangential_pairs",
    "multi_indices",
    "cartesian_indices",
    "write_field_csv",
]

#: Tangential fields used for the multi-index beta, in this fixed order.
tangential_pairs = ((0, 1), (0, 2), (1, 2))


class DegenerateMapError(ValueError):
    """Raised when a flow map has a non-positive Jacobian somewhere."""


def cutoff(r):
    """C^2 quintic smoothstep: 0 for r <= 1/4, 1 for r >= 3/4."""
    s = np.clip((np.asarray(r, dtype=float) - 0.25) / 0.5, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _barycentric_diff_matrix(x, lam):
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (lam[None, :] / lam[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@functools.lru_cache(maxsize=None)
def _fourier_matrix(n):
    """Periodic spectral differentiation on n equispaced points (n even, Nyquist mode dropped)."""
    d = np.arange(n)[:, None] - np.arange(n)[None, :]
    with np.errstate(divide="ignore"):
        D = 0.5 * (-1.0) ** d / np.tan(d * np.pi / n)
    D[d == 0] = 0.0
    D.setflags(write=False)
    return D


def _fourier_derivative(f, axis, n):
    if n % 2:
        F = np.fft.rfft(f, axis=axis)
        shape = [1] * F.ndim
        shape[axis] = -1
        k = np.arange(F.shape[axis], dtype=float).reshape(shape)
        return np.fft.irfft(F * 1j * k, n=n, axis=axis)
    return np.moveaxis(np.tensordot(_fourier_matrix(n), f, axes=(1, axis)), 0, axis)


@dataclass(frozen=True, eq=False)
class BallGrid:
    """Offset spherical product grid on the unit ball.

    Use :func:`build_grid` to construct one.
    """

    n_r: int
    n_theta: int
    n_phi: int
    r: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    Y: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    _Dpp: np.ndarray = field(repr=False)
    _Dpn: np.ndarray = field(repr=False)
    _basis: tuple = field(repr=False)

    @property
    def shape(self):
        return (self.n_r, self.n_theta, self.n_phi)

    @property
    def size(self):
        return self.n_r * self.n_theta * self.n_phi

    @property
    def radius(self):
        """|y| at every node."""
        return np.broadcast_to(self.r[:, None, None], self.shape)

    @property
    def h_min(self):
        """Smallest distance between neighbouring nodes along a coordinate line."""
        dr = np.min(np.diff(self.r))
        r0 = self.r[0]
        dth = r0 * np.pi / self.n_theta
        dph = r0 * np.sin(self.theta[0]) * 2.0 * np.pi / self.n_phi
        return float(min(dr, dth, dph))

    def enthalpy(self, gamma):
        """Background enthalpy w on the nodes (unscaled by delta)."""
        k = (gamma - 1.0) / (2.0 * gamma)
        return k * (1.0 - self.radius**2)

    def integrate(self, f):
        """Quadrature of a scalar field over B."""
        return float(np.sum(self.weights * f))

    # -- antipodal continuation -------------------------------------------
    def _antipode(self, f):
        half = self.n_phi // 2
        return np.roll(f[:, ::-1], -half, axis=2)

    # -- coordinate derivatives -------------------------------------------
    def d_r(self, f):
        fa = self._antipode(f)
        return np.tensordot(self._Dpp, f, axes=(1, 0)) + np.tensordot(self._Dpn, fa, axes=(1, 0))

    def d_theta(self, f):
        ext = np.concatenate([f, self._antipode(f)], axis=1)
        return _fourier_derivative(ext, 1, 2 * self.n_theta)[:, : self.n_theta]

    def d_phi(self, f):
        return _fourier_derivative(f, 2, self.n_phi)

    def _bcast(self, a, f):
        extra = f.ndim - 3
        return a.reshape(a.shape + (1,) * extra)

    def gradient(self, f):
        """Cartesian gradient; the derivative index is appended last."""
        fr, ft, fp = self.d_r(f), self.d_theta(f), self.d_phi(f)
        er, et, ep = self._basis
        out = []
        for i in range(3):
            g = (self._bcast(er[i], f) * fr + self._bcast(et[i], f) * ft
                 + self._bcast(ep[i], f) * fp)
            out.append(g)
        return np.stack(out, axis=-1)

    def partial(self, f, i):
        er, et, ep = self._basis
        return (self._bcast(er[i], f) * self.d_r(f) + self._bcast(et[i], f) * self.d_theta(f)
                + self._bcast(ep[i], f) * self.d_phi(f))

    def radial(self, f):
        """X_r f = r d_r f."""
        return self._bcast(self.radius, f) * self.d_r(f)

    def tangential(self, f, j, i):
        """y_j d_i f - y_i d_j f (0-based indices)."""
        if i == j:
            return np.zeros_like(f)
        if (j, i) in ((1, 0), (2, 1), (0, 2)):
            return -self.tangential(f, i, j)
        th = self.theta[None, :, None]
        ph = self.phi[None, None, :]
        if (j, i) == (0, 1):
            return self.d_phi(f)
        cot = np.cos(th) / np.sin(th)
        if (j, i) == (1, 2):
            a, b = -np.sin(ph), -cot * np.cos(ph)
        else:  # (2, 0)
            a, b = np.cos(ph), -cot * np.sin(ph)
        a = np.broadcast_to(a, self.shape)
        b = np.broadcast_to(b, self.shape)
        return self._bcast(a, f) * self.d_theta(f) + self._bcast(b, f) * self.d_phi(f)

    def multi(self, f, a, beta):
        """X_r^a applied after the tangential fields of ``beta``.

        ``beta`` counts applications of the fields in ``tangential_pairs``;
        they are applied in that fixed order.
        """
        g = f
        for count, (j, i) in zip(beta, tangential_pairs):
            for _ in range(count):
                g = self.tangential(g, j, i)
        for _ in range(a):
            g = self.radial(g)
        return g

    def cartesian_multi(self, f, nu):
        """d^nu f for a Cartesian multi-index nu = (n1, n2, n3)."""
        g = f
        for i, count in enumerate(nu):
            for _ in range(count):
                g = self.partial(g, i)
        return g


def build_grid(n_radial, n_polar, n_azimuthal, *, check=True):
    """Build the offset ball grid.

    Radial nodes are the positive half of a ``2*n_radial`` point
    Gauss-Legendre rule; polar nodes are the Fejer (midpoint) nodes; the
    azimuthal nodes are offset by half a cell.
    """
    if min(n_radial, n_polar, n_azimuthal) < 4:
        raise ValueError("grid counts must all be at least 4")
    if n_azimuthal % 2:
        raise ValueError("n_azimuthal must be even for the antipodal map")
    n_r, n_t, n_p = int(n_radial), int(n_polar), int(n_azimuthal)

    x, wx = legendre.leggauss(2 * n_r)
    lam = (-1.0) ** np.arange(2 * n_r) * np.sqrt((1.0 - x**2) * wx)
    D = _barycentric_diff_matrix(x, lam)
    r = x[n_r:]
    wr = wx[n_r:] * r**2
    Dpp = D[n_r:, n_r:]
    Dpn = D[n_r:, :n_r][:, ::-1]

    theta = (np.arange(n_t) + 0.5) * np.pi / n_t
    # Fejer's first rule for the measure sin(theta) d theta
    m = np.arange(1, n_t // 2 + 1)
    wt = np.array([
        1.0 - 2.0 * np.sum(np.cos(2.0 * m * t) / (4.0 * m * m - 1.0)) for t in theta
    ]) * 2.0 / n_t
    phi = (np.arange(n_p) + 0.5) * 2.0 * np.pi / n_p
    wp = np.full(n_p, 2.0 * np.pi / n_p)

    R, T, P = np.meshgrid(r, theta, phi, indexing="ij")
    st, ct, sp, cp = np.sin(T), np.cos(T), np.sin(P), np.cos(P)
    Y = np.stack([R * st * cp, R * st * sp, R * ct], axis=-1)
    weights = wr[:, None, None] * wt[None, :, None] * wp[None, None, :]
    er = (st * cp, st * sp, ct)
    et = (ct * cp / R, ct * sp / R, -st / R)
    ep = (-sp / (R * st), cp / (R * st), np.zeros_like(R))

    grid = BallGrid(n_r, n_t, n_p, r, theta, phi, Y, weights, cutoff(R), Dpp, Dpn,
                    (er, et, ep))
    if check:
        vol = grid.integrate(np.ones(grid.shape))
        second = grid.integrate(np.sum(Y**2, axis=-1))
        if abs(vol - 4.0 * np.pi / 3.0) > 1e-10 or abs(second - 0.8 * np.pi) > 1e-10:
            raise ValueError("grid quadrature failed its build-time exactness check")
    return grid


def multi_indices(N):
    """All (a, beta) with a + |beta| <= N, in a deterministic order."""
    out = []
    for total in range(N + 1):
        for a in range(total, -1, -1):
            rest = total - a
            for beta in itertools.product(range(rest + 1), repeat=3):
                if sum(beta) == rest:
                    out.append((a, beta))
    return out


def cartesian_indices(N):
    """All Cartesian multi-indices nu with |nu| <= N."""
    out = []
    for total in range(N + 1):
        for nu in itertools.product(range(total + 1), repeat=3):
            if sum(nu) == total:
                out.append(nu)
    return out



def apply_vector_field(grid, f, kind, order=1):
    """Apply one of the vector fields X_r, d/dy_i or the tangential field.

    ``kind`` is ``"X_r"``, ``("d", i)`` or ``("slash", j, i)`` with 0-based
    indices.  ``order`` repeats the application.
    """
    if order > grid.n_r // 2:
        warnings.warn("derivative order exceeds the radial resolution budget", stacklevel=2)
    g = f
    for _ in range(order):
        if kind == "X_r":
            g = grid.radial(g)
        elif kind[0] == "d":
            g = grid.partial(g, kind[1])
        elif kind[0] == "slash":
            g = grid.tangential(g, kind[1], kind[2])
        else:
            raise ValueError(f"unknown vector field {kind!r}")
    return g


@dataclass(frozen=True, eq=False)
class FlowMapDerivatives:
    """D eta, its inverse (the matrix called A-script in the analysis) and det."""

    Deta: np.ndarray
    Ainv: np.ndarray
    J: np.ndarray


def flow_map_derivatives(grid, eta=None, *, theta=None):
    """Derivatives of the flow map, from ``eta`` or from the displacement.

    Passing ``theta`` computes D eta = I + D theta, which is exactly the
    identity when theta vanishes.
    """
    if theta is not None:
        Deta = np.eye(3) + grid.gradient(theta)
    elif eta is not None:
        Deta = grid.gradient(eta)
    else:
        raise ValueError("need eta or theta")
    J = np.linalg.det(Deta)
    if not np.all(J > 0):
        idx = np.unravel_index(np.argmin(J), J.shape)
        raise DegenerateMapError(f"Jacobian {J[idx]:.3e} <= 0 at node {idx}")
    return FlowMapDerivatives(Deta, np.linalg.inv(Deta), J)


def lie_operators(grid, F, fmd, Lambda):
    """Lie derivatives of a vector field along the flow map.

    Returns a dict with ``grad`` ([nabla_eta F]^i_j), ``div``, ``curl`` and
    ``curl_LA`` (the Lambda-twisted curl).
    """
    DF = grid.gradient(F)
    G = DF @ fmd.Ainv
    M = G @ np.asarray(Lambda)
    return {
        "grad": G,
        "div": np.trace(G, axis1=-2, axis2=-1),
        "curl": G - np.swapaxes(G, -1, -2),
        "curl_LA": M - np.swapaxes(M, -1, -2),
    }


def weighted_norm(grid, f, k, g=None, w=None):
    """Squared weighted norm: the quadrature of w^k |f|^2 g over B.

    ``f`` may carry trailing component axes, which are summed over.  ``w`` is
    the enthalpy on the nodes (needed when ``k > 0``).
    """
    if k < 0:
        raise ValueError("weight power must be non-negative")
    f = np.asarray(f, dtype=float)
    sq = f * f
    while sq.ndim > 3:
        sq = sq.sum(axis=-1)
    if k:
        if w is None:
            raise ValueError("w is required for k > 0")
        sq = sq * w**k
    if g is not None:
        sq = sq * g
    return grid.integrate(sq)


def write_field_csv(path, grid, fields):
    """Write node values as ``r,theta,phi,y1,y2,y3,<name>...``.

    ``fields`` maps column-name prefixes to scalar, vector or matrix fields.
    """
    cols, data = [], []
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=float).reshape(grid.size, -1)
        if arr.shape[1] == 1:
            cols.append(name)
        else:
            cols.extend(f"{name}{c + 1}" for c in range(arr.shape[1]))
        data.append(arr)
    R, T, P = np.meshgrid(grid.r, grid.theta, grid.phi, indexing="ij")
    base = np.column_stack([R.ravel(), T.ravel(), P.ravel(), grid.Y.reshape(-1, 3)])
    table = np.column_stack([base] + data)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "theta", "phi", "y1", "y2", "y3"] + cols)
        for row in table:
            writer.writerow([f"{v:.17g}" for v in row])
