"""Affine background motions and their time-dependent coefficient frame.

The matrix path A(t) solves

    A'' = delta * det(A)^(1 - gamma) * A^-T,   A(0) = A0,  A'(0) = A1,

with conserved energy 1/2 |A'|^2 + delta/(gamma - 1) det(A)^(1 - gamma).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

__all__ = [
    "GasParams",
    "AffineIVP",
    "AffineTrajectory",
    "AffineFrame",
    "ExpansionRates",
    "DecompositionReport",
    "PicardResult",
    "DomainError",
    "IntegrationError",
    "NonContractionError",
    "TrajectoryTooShortError",
    "nonlinearity",
    "integrate",
    "picard_oracle",
    "decompose_linear_part",
    "frame_at",
    "frame_from_matrices",
    "TimeMaps",
    "expansion_rates",
    "time_maps",
    "write_trajectory_csv",
]


class DomainError(ValueError):
    """Input outside the domain of a formula (e.g. det A <= 0)."""


class IntegrationError(RuntimeError):
    pass


class NonContractionError(RuntimeError):
    """Picard iterates stopped contracting; delta is too large for the oracle."""


class TrajectoryTooShortError(RuntimeError):
    def __init__(self, msg, required_t_end):
        super().__init__(msg)
        self.required_t_end = required_t_end


@dataclass(frozen=True)
class GasParams:
    """Polytropic index, smallness parameter and sign of the Poisson coupling."""

    gamma: float
    delta: float
    field_sign: int = 1

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise DomainError("gamma must exceed 1")
        if self.delta < 0.0:
            raise DomainError("delta must be non-negative")
        if self.field_sign not in (-1, 1):
            raise DomainError("field_sign must be +1 or -1")

    @property
    def alpha(self):
        return 1.0 / (self.gamma - 1.0)

    def require_dynamics(self):
        """Raise unless the parameters are in the range used for perturbation runs."""
        if not 1.0 < self.gamma < 5.0 / 3.0:
            raise DomainError("dynamics runs need 1 < gamma < 5/3")
        if not self.delta > 0.0:
            raise DomainError("dynamics runs need delta > 0")


@dataclass(frozen=True)
class AffineIVP:
    params: GasParams
    A0: np.ndarray
    A1: np.ndarray
    t_end: float
    rtol: float = 1e-10
    atol: float = 1e-12
    tau_end: float | None = None

    def __post_init__(self):
        A0 = np.array(self.A0, dtype=float).reshape(3, 3)
        A1 = np.array(self.A1, dtype=float).reshape(3, 3)
        if np.linalg.det(A0) <= 0 or np.linalg.det(A1) <= 0:
            raise DomainError("A0 and A1 must have positive determinant")
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "A1", A1)


def nonlinearity(A, gamma):
    """det(A)^(1 - gamma) A^-T."""
    A = np.asarray(A, dtype=float)
    d = np.linalg.det(A)
    if not d > 0.0:
        raise DomainError(f"det A = {d:.3e} is not positive")
    return d ** (1.0 - gamma) * np.linalg.inv(A).T


def _energy(A, Adot, params):
    d = np.linalg.det(A)
    pot = 0.0 if params.delta == 0 else params.delta / (params.gamma - 1.0) * d ** (1.0 - params.gamma)
    return 0.5 * float(np.sum(Adot * Adot)) + pot


def _rhs_factory(params):
    g, delta = params.gamma, params.delta

    def rhs(t, u):
        A = u[:9].reshape(3, 3)
        d = np.linalg.det(A)
        if d <= 0.0:
            # let the det event stop the solver; keep the rhs finite
            d = 1e-300
            Ainv = np.zeros((3, 3))
        else:
            Ainv = np.linalg.inv(A)
        out = np.empty(20)
        out[:9] = u[9:18]
        out[9:18] = (delta * d ** (1.0 - g) * Ainv.T).ravel() if delta else 0.0
        out[18] = d ** (-1.0 / 3.0)
        out[19] = d ** ((1.0 - 3.0 * g) / 6.0)
        return out

    return rhs


@dataclass(frozen=True, eq=False)
class AffineTrajectory:
    """Dense solution of the affine ODE, augmented with tau(t) and s(t)."""

    ivp: AffineIVP
    t: np.ndarray
    A_samples: np.ndarray = field(repr=False)
    Adot_samples: np.ndarray = field(repr=False)
    tau_samples: np.ndarray = field(repr=False)
    energy0: float = 0.0
    _sol: object = field(default=None, repr=False)

    @property
    def params(self):
        return self.ivp.params

    @property
    def t_end(self):
        return float(self.t[-1])

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t[0] - 1e-12) or np.any(t > self.t[-1] * (1 + 1e-12) + 1e-12):
            raise ValueError("time outside trajectory range")
        return np.clip(t, self.t[0], self.t[-1])

    def state(self, t):
        return self._sol(self._check(t))

    def A(self, t):
        u = self.state(t)
        return np.moveaxis(u[:9], 0, -1).reshape(np.shape(t) + (3, 3))

    def Adot(self, t):
        u = self.state(t)
        return np.moveaxis(u[9:18], 0, -1).reshape(np.shape(t) + (3, 3))

    def Addot(self, t):
        A = self.A(t)
        p = self.params
        if p.delta == 0:
            return np.zeros_like(A)
        d = np.linalg.det(A)
        return p.delta * (d ** (1.0 - p.gamma))[..., None, None] * np.swapaxes(np.linalg.inv(A), -1, -2)

    def tau(self, t):
        return self.state(t)[18]

    def s(self, t):
        return self.state(t)[19]

    def energy(self, t):
        A, Ad = self.A(t), self.Adot(t)
        p = self.params
        kin = 0.5 * np.sum(Ad * Ad, axis=(-2, -1))
        if p.delta == 0:
            return kin
        return kin + p.delta / (p.gamma - 1.0) * np.linalg.det(A) ** (1.0 - p.gamma)

    def _invert(self, values, target, row):
        if np.ndim(target):
            return np.array([self._invert(values, float(v), row) for v in np.ravel(target)]).reshape(
                np.shape(target))
        if target < values[0] - 1e-14 or target > values[-1] + 1e-12:
            raise ValueError("value outside trajectory range")
        k = int(np.searchsorted(values, target))
        if k == 0:
            return float(self.t[0])
        if k >= len(values):
            return float(self.t[-1])
        lo, hi = self.t[k - 1], self.t[k]
        return brentq(lambda x: self._sol(x)[row] - target, lo, hi, xtol=1e-15, rtol=1e-15)

    def t_of_tau(self, tau):
        return self._invert(self.tau_samples, tau, 18)

    def t_of_s(self, s):
        return self._invert(self._s_samples, s, 19)

    @property
    def _s_samples(self):
        return self._sol(self.t)[19]

    def frame_at_tau(self, tau):
        return frame_at(self, self.t_of_tau(tau))


def integrate(ivp):
    """Integrate the affine ODE with DOP853 and dense output.

    The state is augmented with tau (d tau/dt = det^-1/3) and
    s (ds/dt = det^((1 - 3 gamma)/6)).  If ``ivp.tau_end`` is set, the
    integration stops once tau reaches it.
    """
    p = ivp.params
    u0 = np.concatenate([ivp.A0.ravel(), ivp.A1.ravel(), [0.0, 0.0]])

    def det_event(t, u):
        return np.linalg.det(u[:9].reshape(3, 3)) - 1e-12

    det_event.terminal = True
    events = [det_event]
    if ivp.tau_end is not None:
        def tau_event(t, u):
            return u[18] - ivp.tau_end

        tau_event.terminal = True
        tau_event.direction = 1
        events.append(tau_event)

    sol = solve_ivp(_rhs_factory(p), (0.0, float(ivp.t_end)), u0, method="DOP853",
                    rtol=ivp.rtol, atol=ivp.atol, dense_output=True, events=events)
    if sol.status == -1:
        raise IntegrationError(f"affine integration failed: {sol.message}")
    if len(sol.t_events[0]):
        raise IntegrationError(f"det A reached zero near t = {sol.t_events[0][0]:.6g}")
    if ivp.tau_end is not None and sol.status != 1 and sol.y[18, -1] < ivp.tau_end:
        raise IntegrationError("t_end reached before tau_end; increase t_end")
    A = sol.y[:9].T.reshape(-1, 3, 3)
    Ad = sol.y[9:18].T.reshape(-1, 3, 3)
    return AffineTrajectory(ivp, sol.t.copy(), A, Ad, sol.y[18].copy(),
                            _energy(ivp.A0, ivp.A1, p), sol.sol)


@dataclass(frozen=True)
class ExpansionRates:
    b: np.ndarray
    mu1: float
    mu0: float
    mu2: float


def expansion_rates(b, gamma):
    """mu1 = det(b)^(1/3), mu0 = (3 gamma - 3)/2 mu1, mu2 = (5 - 3 gamma)/2 mu1."""
    b = np.asarray(b, dtype=float)
    d = np.linalg.det(b)
    if not d > 0:
        raise DomainError("det b must be positive")
    mu1 = float(np.cbrt(d))
    return ExpansionRates(b, mu1, 1.5 * (gamma - 1.0) * mu1, 0.5 * (5.0 - 3.0 * gamma) * mu1)


@dataclass(frozen=True)
class AffineFrame:
    """Coefficients of the perturbation equations at one instant."""

    t: float
    tau: float
    A: np.ndarray
    Adot: np.ndarray
    mu: float
    mu_tau: float
    Lambda: np.ndarray
    Lambda_inv: np.ndarray
    Lambda_tau: np.ndarray
    O: np.ndarray
    Gamma_star: np.ndarray
    d: np.ndarray


def _frame(t, tau, A, Ad):
    det = np.linalg.det(A)
    if not det > 0:
        raise DomainError("det A must be positive")
    mu = float(np.cbrt(det))
    Ainv = np.linalg.inv(A)
    B = Ainv @ Ad
    mu_dot = mu * np.trace(B) / 3.0
    Lam = mu * mu * Ainv @ Ainv.T
    Lam = 0.5 * (Lam + Lam.T)
    Lam_dot = 2.0 * mu * mu_dot * Ainv @ Ainv.T - mu * mu * (B @ Ainv @ Ainv.T + Ainv @ Ainv.T @ B.T)
    Lam_inv = (A.T @ A) / (mu * mu)
    Lam_inv = 0.5 * (Lam_inv + Lam_inv.T)
    Gamma = mu * B - mu_dot * np.eye(3)
    return AffineFrame(float(t), float(tau), A.copy(), Ad.copy(), mu, mu * mu_dot, Lam, Lam_inv,
                       mu * Lam_dot, A / mu, Gamma, np.linalg.eigvalsh(Lam))


def frame_at(traj, t):
    """Frame (mu, Lambda, O, Gamma*, ...) at physical time t."""
    u = traj.state(float(t))
    return _frame(t, u[18], u[:9].reshape(3, 3), u[9:18].reshape(3, 3))


def frame_from_matrices(A, Adot, t=0.0, tau=0.0):
    """Frame computed from explicit A, A' (no trajectory needed)."""
    return _frame(t, tau, np.asarray(A, float), np.asarray(Adot, float))


@dataclass(frozen=True)
class TimeMaps:
    traj: AffineTrajectory

    def tau(self, t):
        return self.traj.tau(t)

    def s(self, t):
        return self.traj.s(t)

    def t_of_tau(self, tau):
        return self.traj.t_of_tau(tau)

    def t_of_s(self, s):
        return self.traj.t_of_s(s)


def time_maps(traj):
    """Monotone maps t <-> tau and t <-> s carried by the trajectory."""
    return TimeMaps(traj)


@dataclass(frozen=True)
class DecompositionReport:
    rates: ExpansionRates
    b_minus_A1: float
    residual: float
    slope: float | None
    slope_window: tuple | None


def decompose_linear_part(traj, tol=1e-3, window=(10.0, 1000.0), n_fit=200):
    """Estimate b = lim A'(t) from A'(t_end) and fit the decay of |A''|.

    The settling residual is |A''(t_end)| t_end.  The decay power is fitted
    as the least-squares slope of log|A''(t)| against log(1 + t); using 1 + t
    keeps the early part of the window (where t ~ 1 + t is not yet true)
    from biasing the fit.
    """
    p = traj.params
    t_end = traj.t_end
    res = float(np.linalg.norm(traj.Addot(t_end)) * t_end)
    if res > tol:
        expo = 3.0 * p.gamma - 3.0
        need = t_end * (res / tol) ** (1.0 / expo)
        raise TrajectoryTooShortError(
            f"settling residual {res:.3e} exceeds {tol:.1e}; need t_end >= {need:.3g}", need)
    b = traj.Adot(t_end)
    rates = expansion_rates(b, p.gamma)
    slope, win = None, None
    lo, hi = window[0], min(window[1], t_end)
    if p.delta > 0 and hi > 2.0 * lo:
        ts = np.geomspace(lo, hi, n_fit)
        vals = np.linalg.norm(traj.Addot(ts), axis=(-2, -1))
        slope = float(np.polyfit(np.log1p(ts), np.log(vals), 1)[0])
        win = (lo, hi)
    return DecompositionReport(rates, float(np.linalg.norm(b - traj.ivp.A1)), res, slope, win)


# -- Picard oracle -----------------------------------------------------------

@dataclass(frozen=True)
class PicardResult:
    t: np.ndarray
    Gamma: np.ndarray
    A: np.ndarray
    iterations: int
    distances: list


def _panel_matrices(n):
    """Chebyshev-Lobatto nodes on [-1, 1] and the cumulative integration matrix."""
    x = -np.cos(np.pi * np.arange(n) / (n - 1))
    V = chebyshev.chebvander(x, n - 1)
    Vi = np.linalg.inv(V)
    C = np.zeros((n, n))
    for j in range(n):
        c = np.zeros(n)
        c[j] = 1.0
        ci = chebyshev.chebint(c, lbnd=-1.0)
        C[:, j] = chebyshev.chebval(x, ci)
    return x, C @ Vi


def _graded_panels(T, n_panels):
    # geometric grading: short panels near 0, longer ones later
    if T <= 4.0:
        return np.linspace(0.0, T, n_panels + 1)
    edges = np.concatenate([[0.0], np.geomspace(1.0, T + 1.0, n_panels) - 1.0])
    return edges


def picard_oracle(ivp, T, max_iters=200, n_panels=16, n_nodes=17, rtol=1e-14):
    """Fixed point of Gamma = delta int int (1+s)^(2-3g) N(L~ + Gamma/(1+s)).

    Here L(t) = A0 + t A1 and L~ = L/(1 + t).  The double integral is
    evaluated panel-wise with spectral (Chebyshev) cumulative quadrature.
    The iteration must contract: each sup-distance (weighted by 1/(1+t))
    has to fall by at least a factor 0.9, otherwise NonContractionError.
    """
    p = ivp.params
    g = p.gamma
    edges = _graded_panels(float(T), n_panels)
    xref, Cref = _panel_matrices(n_nodes)
    ts, scales = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        ts.append(a + (b - a) * (xref + 1.0) / 2.0)
        scales.append((b - a) / 2.0)
    tgrid = np.concatenate(ts)

    def cumint(f):
        # f: (n_panels*n_nodes, ...) -> integral from 0
        out = np.empty_like(f)
        acc = np.zeros(f.shape[1:])
        for k in range(len(scales)):
            sl = slice(k * n_nodes, (k + 1) * n_nodes)
            part = scales[k] * np.tensordot(Cref, f[sl], axes=(1, 0))
            out[sl] = acc + part
            acc = out[sl][-1]
        return out

    L = ivp.A0[None] + tgrid[:, None, None] * ivp.A1[None]
    Ltil = L / (1.0 + tgrid)[:, None, None]
    fac = (1.0 + tgrid) ** (2.0 - 3.0 * g)
    weight = 1.0 / (1.0 + tgrid)

    Gam = np.zeros_like(L)
    dists = []
    it = 0
    for it in range(1, max_iters + 1):
        arg = Ltil + Gam / (1.0 + tgrid)[:, None, None]
        if p.delta == 0:
            new = np.zeros_like(Gam)
        else:
            N = np.stack([nonlinearity(m, g) for m in arg])
            new = p.delta * cumint(cumint(fac[:, None, None] * N))
        d = float(np.max(np.linalg.norm(new - Gam, axis=(1, 2)) * weight))
        dists.append(d)
        Gam = new
        scale = float(np.max(np.linalg.norm(Gam, axis=(1, 2)) * weight))
        if d <= rtol * max(scale, 1e-300) or d == 0.0:
            break
        if len(dists) >= 2 and d > 0.9 * dists[-2]:
            raise NonContractionError(
                f"iterate distance {dists[-2]:.3e} -> {d:.3e}: delta = {p.delta} too large")
    else:
        raise NonContractionError("Picard iteration did not converge within max_iters")
    # keep one copy of each shared panel edge
    keep = np.ones(len(tgrid), dtype=bool)
    keep[np.arange(1, len(scales)) * n_nodes] = False
    return PicardResult(tgrid[keep], Gam[keep], (L + Gam)[keep], it, dists)


def write_trajectory_csv(path, traj, times=None):
    """Export samples with header t,A11..A33,Adot11..Adot33,mu,detLambda,energy."""
    ts = traj.t if times is None else np.asarray(times, dtype=float)
    header = ["t"] + [f"A{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    header += [f"Adot{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    header += ["mu", "detLambda", "energy"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in ts:
            fr = frame_at(traj, t)
            row = [t, *fr.A.ravel(), *fr.Adot.ravel(), fr.mu, np.linalg.det(fr.Lambda),
                   float(traj.energy(t))]
            w.writerow([f"{v:.17g}" for v in row])
