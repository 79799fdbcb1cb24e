"""Time evolution of the Lagrangian perturbation theta = eta - y in slow time tau.

Two modes share the same momentum equation

    theta_tt = -(mu_t/mu) V - 2 Gamma* V
               - delta mu^(3-3gamma) [Lambda theta + (1+alpha) grad w . K + w div K]
               - delta^alpha mu^-1 Lambda G,
    K[k, i] = ((A-script J^(-1/alpha) - I) Lambda)[k, i],

with V = theta_t:

* ``radial_1d``: theta = q(r) y/|y| for isotropic affine motions (Lambda = I,
  Gamma* = 0).  q is odd in r and is differentiated on the same
  Gauss-Legendre diameter as the ball grid; the force is the exact enclosed
  mass over the squared image radius.
* ``full_3d``: theta on a :class:`~epflow.geometry.BallGrid` with the full
  convolution force from :mod:`epflow.field`.

Time stepping is explicit Runge-Kutta in tau with the affine frame taken
from the dense trajectory at every stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from .affine import AffineIVP, frame_at, integrate
from .field import KernelSpec, PolarRule, _polar_background, force_field
from .geometry import DegenerateMapError, build_grid, flow_map_derivatives, weighted_norm
from .profiles import enthalpy_coefficient, radial_mass

log = logging.getLogger(__name__)

__all__ = [
    "StepperConfig",
    "PerturbationState",
    "AprioriFlags",
    "RadialGrid",
    "VacuumDegeneracyError",
    "AprioriViolation",
    "perturbation_rhs",
    "radial_rhs",
    "step",
    "run_radial",
    "full3d_short_run",
    "eulerian_reconstruct",
    "radial_eulerian_mass",
    "embed_radial",
    "trajectory_to_tau",
    "apriori_flags",
    "sound_speed",
    "momentum_residual",
    "EulerianSample",
    "RunResult",
]


class VacuumDegeneracyError(RuntimeError):
    """The Jacobian of the flow map reached zero."""


class AprioriViolation(RuntimeError):
    """A smallness flag (theta in W^2,inf or J - 1 in W^1,inf) exceeded 1/3."""


@dataclass(frozen=True)
class StepperConfig:
    cfl: float = 0.5
    max_dt: float = 0.05
    order: int = 4
    refresh: int = 5
    mode: str = "radial_1d"
    abort_on_apriori: bool = True

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError("CFL number must lie in (0, 1]")
        if self.refresh < 1:
            raise ValueError("force refresh cadence must be at least 1")
        if self.order not in (2, 4):
            raise ValueError("scheme order must be 2 or 4")
        if self.mode not in ("radial_1d", "full_3d"):
            raise ValueError(f"unknown stepper mode {self.mode!r}")
        if not self.max_dt > 0:
            raise ValueError("max_dt must be positive")


@dataclass(frozen=True)
class AprioriFlags:
    theta_w2inf: float
    jac_w1inf: float

    @property
    def ok(self):
        return self.theta_w2inf < 1.0 / 3.0 and self.jac_w1inf < 1.0 / 3.0


@dataclass(frozen=True, eq=False)
class PerturbationState:
    """Immutable snapshot.  Radial states hold q(r) and q_tau(r) as 1-D arrays."""

    tau: float
    theta: np.ndarray
    V: np.ndarray
    grid: object = field(repr=False)
    fmd: object = field(default=None, repr=False)
    apriori: AprioriFlags | None = None

    @property
    def radial(self):
        return isinstance(self.grid, RadialGrid)


# -- radial discretization ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Positive half of a 2n-point Gauss-Legendre diameter, as in the ball grid."""

    n_r: int
    r: np.ndarray
    weights: np.ndarray
    _x: np.ndarray = field(repr=False)
    _lam: np.ndarray = field(repr=False)
    _Dpp: np.ndarray = field(repr=False)
    _Dpn: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n_r):
        g = build_grid(n_r, 4, 4, check=False)
        x, wx = legendre.leggauss(2 * n_r)
        lam = (-1.0) ** np.arange(2 * n_r) * np.sqrt((1.0 - x**2) * wx)
        r = x[n_r:]
        return cls(n_r, r, 4.0 * np.pi * wx[n_r:] * r * r, x, lam, g._Dpp, g._Dpn)

    @property
    def h_min(self):
        return float(min(np.min(np.diff(self.r)), self.r[0]))

    def d_odd(self, f):
        return self._Dpp @ f - self._Dpn @ f

    def d_even(self, f):
        return self._Dpp @ f + self._Dpn @ f

    def interpolate(self, f, s, parity):
        """Barycentric evaluation at points s of the field continued with the given parity."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        full = np.concatenate([parity * f[::-1], f])
        d = s[:, None] - self._x[None, :]
        hit = d == 0
        d[hit] = 1.0
        c = self._lam / d
        out = (c @ full) / c.sum(axis=1)
        rows, cols = np.nonzero(hit)
        out[rows] = full[cols]
        return out


def _check_jacobian(J, where):
    if not np.all(J > 0):
        idx = int(np.argmin(J))
        raise VacuumDegeneracyError(f"Jacobian {J.flat[idx]:.3e} <= 0 at {where} node {idx}")


def sound_speed(frame, params):
    """c_max = sqrt((1 + alpha) delta mu^(3-3gamma) max w)."""
    k = enthalpy_coefficient(params.gamma)
    return float(np.sqrt((1.0 + params.alpha) * params.delta * frame.mu ** (3.0 - 3.0 * params.gamma) * k))


def _pressure_coefficient(frame, params):
    return params.delta * frame.mu ** (3.0 - 3.0 * params.gamma)


def radial_rhs(rg, q, V, frame, params, *, field_on=True):
    """Acceleration q_tt of the radial mode."""
    r = rg.r
    a = 1.0 + rg.d_odd(q)
    b = 1.0 + q / r
    J = a * b * b
    _check_jacobian(J, "radial")
    alpha = params.alpha
    Jm = J ** (-1.0 / alpha)
    kr = Jm / a - 1.0
    kt = Jm / b - 1.0
    k = enthalpy_coefficient(params.gamma)
    w = k * (1.0 - r * r)
    press = (1.0 + alpha) * (-2.0 * k * r) * kr + w * (rg.d_even(kr) + 2.0 * (kr - kt) / r)
    acc = -(frame.mu_tau / frame.mu) * V - _pressure_coefficient(frame, params) * (q + press)
    if field_on:
        G = params.field_sign * radial_mass(r, params.gamma) / (r + q) ** 2
        acc = acc - params.delta**params.alpha / frame.mu * G
    return acc


def perturbation_rhs(state, frame, gf, params, *, field_on=True):
    """Acceleration theta_tt on the ball grid for a given force field ``gf``."""
    grid = state.grid
    fmd = state.fmd
    _check_jacobian(fmd.J.ravel(), "grid")
    alpha = params.alpha
    Lam = frame.Lambda
    K = (fmd.Ainv * (fmd.J ** (-1.0 / alpha))[..., None, None] - np.eye(3)) @ Lam
    divK = np.einsum("...kik->...i", grid.gradient(K))
    k = enthalpy_coefficient(params.gamma)
    w = grid.enthalpy(params.gamma)
    gw = -2.0 * k * grid.Y
    press = (1.0 + alpha) * np.einsum("...k,...ki->...i", gw, K) + w[..., None] * divK
    acc = (-(frame.mu_tau / frame.mu) * state.V - 2.0 * state.V @ frame.Gamma_star.T
           - _pressure_coefficient(frame, params) * (state.theta @ Lam + press))
    if field_on:
        acc = acc - params.delta**alpha / frame.mu * gf.G @ Lam
    return acc


# -- helpers -----------------------------------------------------------------

def trajectory_to_tau(params, A0, A1, tau_max, t_cap=1e15):
    """Integrate the affine motion until tau reaches ``tau_max`` (with a small margin)."""
    ivp = AffineIVP(params, A0, A1, t_end=t_cap, tau_end=float(tau_max) * 1.001 + 1e-3)
    return integrate(ivp)


def embed_radial(state, n_theta=6, n_phi=12, grid=None):
    """theta = q(r) y/|y| and V on a ball grid with the same radial nodes."""
    g = grid or build_grid(state.grid.n_r, n_theta, n_phi)
    e = g.Y / g.radius[..., None]
    q = state.theta[:, None, None, None]
    v = state.V[:, None, None, None]
    return g, q * e, v * e


def apriori_flags(grid, theta, fmd):
    """sup-norm versions of |theta|_{W^2,inf} and |J - 1|_{W^1,inf}."""
    Dth = fmd.Deta - np.eye(3)
    D2 = grid.gradient(Dth)
    th = max(np.abs(theta).max(), np.abs(Dth).max(), np.abs(D2).max())
    Jm = fmd.J - 1.0
    jac = max(np.abs(Jm).max(), np.abs(grid.gradient(Jm)).max())
    return AprioriFlags(float(th), float(jac))


def _radial_apriori(state):
    g, th, _ = embed_radial(state)
    return apriori_flags(g, th, flow_map_derivatives(g, theta=th))


def _dt_limit(h_min, frame, params, config):
    c = sound_speed(frame, params)
    lim = config.max_dt if c == 0 else min(config.cfl * h_min / c, config.max_dt)
    return lim


def _rk(f, tau, th, V, dt, order):
    if order == 2:
        a1 = f(tau, th, V)
        a2 = f(tau + 0.5 * dt, th + 0.5 * dt * V, V + 0.5 * dt * a1)
        return th + dt * (V + 0.5 * dt * a1), V + dt * a2
    a1 = f(tau, th, V)
    V2 = V + 0.5 * dt * a1
    a2 = f(tau + 0.5 * dt, th + 0.5 * dt * V, V2)
    V3 = V + 0.5 * dt * a2
    a3 = f(tau + 0.5 * dt, th + 0.5 * dt * V2, V3)
    V4 = V + dt * a3
    a4 = f(tau + dt, th + dt * V3, V4)
    th_new = th + dt / 6.0 * (V + 2.0 * V2 + 2.0 * V3 + V4)
    V_new = V + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return th_new, V_new


class _FrameCache:
    """Frames at stage times; each tau needs one root solve on the trajectory."""

    def __init__(self, traj):
        self.traj = traj
        self._cache = {}

    def __call__(self, tau):
        key = float(tau)
        fr = self._cache.get(key)
        if fr is None:
            if len(self._cache) > 64:
                self._cache.clear()
            fr = frame_at(self.traj, self.traj.t_of_tau(key))
            self._cache[key] = fr
        return fr


class _Force3D:
    """Convolution force with a refresh cadence and linear extrapolation in between."""

    def __init__(self, grid, params, refresh, threads, rule=None):
        self.grid = grid
        self.params = params
        self.refresh = refresh
        self.threads = threads
        self.rule = rule or PolarRule.for_grid(grid)
        self._bg_key = None
        self._bg = None
        self.history = []  # (tau, G) at refresh points, newest last
        self.evaluations = 0

    def evaluate(self, theta, fmd, Lam):
        spec = KernelSpec(Lam)
        key = Lam.tobytes()
        if key != self._bg_key:
            self._bg = _polar_background(self.grid.Y.reshape(-1, 3), self.params, spec, self.rule)
            self._bg_key = key
        self.evaluations += 1
        return force_field(self.grid, theta, fmd, spec, self.params, rule=self.rule,
                           threads=self.threads, want_psi=False, background=self._bg)

    def refresh_at(self, tau, theta, fmd, Lam):
        G = self.evaluate(theta, fmd, Lam).G
        self.history = (self.history + [(tau, G)])[-2:]
        return G

    def extrapolated(self, tau):
        if len(self.history) == 1:
            return self.history[0][1]
        (t0, G0), (t1, G1) = self.history
        return G1 + (tau - t1) / (t1 - t0) * (G1 - G0)


@dataclass(frozen=True, eq=False)
class _G:
    G: np.ndarray


def step(state, traj, config, params, *, dt=None, field_on=True, force=None, frames=None,
         step_index=0):
    """Advance one Runge-Kutta step in tau.

    ``dt`` defaults to the CFL limit; a larger request is reduced (and logged).
    For 3-D states, ``force`` is the refresh/extrapolation helper.
    """
    frames = frames or _FrameCache(traj)
    fr0 = frames(state.tau)
    grid = state.grid
    lim = _dt_limit(grid.h_min, fr0, params, config)
    if dt is None:
        dt = lim
    elif dt > lim * (1 + 1e-12):
        log.warning("dt %.3e exceeds the CFL limit %.3e at tau=%.4f; reduced", dt, lim, state.tau)
        dt = lim

    if state.radial:
        def f(tau, q, V):
            return radial_rhs(grid, q, V, frames(tau), params, field_on=field_on)

        th, V = _rk(f, state.tau, state.theta, state.V, dt, config.order)
        return PerturbationState(state.tau + dt, th, V, grid)

    if field_on and force is None:
        force = _Force3D(grid, params, config.refresh, 1)
    refresh_now = field_on and (config.refresh == 1 or step_index % config.refresh == 0
                                or not force.history)
    if field_on and config.refresh > 1 and refresh_now:
        force.refresh_at(state.tau, state.theta, state.fmd, fr0.Lambda)

    def f(tau, th, V):
        fmd = state.fmd if th is state.theta else _fmd(grid, th)
        fr = frames(tau)
        gf = None
        if field_on:
            if config.refresh == 1:
                gf = _G(force.evaluate(th, fmd, fr.Lambda).G)
            else:
                gf = _G(force.extrapolated(tau))
        s = PerturbationState(tau, th, V, grid, fmd)
        return perturbation_rhs(s, fr, gf, params, field_on=field_on)

    th, V = _rk(f, state.tau, state.theta, state.V, dt, config.order)
    return PerturbationState(state.tau + dt, th, V, grid, _fmd(grid, th))


def _fmd(grid, theta):
    try:
        return flow_map_derivatives(grid, theta=theta)
    except DegenerateMapError as exc:
        raise VacuumDegeneracyError(str(exc)) from exc


# -- Eulerian reconstruction ---------------------------------------------------

@dataclass(frozen=True)
class EulerianSample:
    x: np.ndarray
    rho: np.ndarray
    u: np.ndarray


def eulerian_reconstruct(state, frame, params, labels=None):
    """Position, density and velocity carried by the labels.

    x = A eta, rho = delta^alpha w^alpha / (J det A), u = A' eta + A V / mu.
    For radial states ``labels`` are radii (default: the grid nodes) and the
    fields are returned along the first axis direction.
    """
    alpha = params.alpha
    detA = float(np.linalg.det(frame.A))
    k = enthalpy_coefficient(params.gamma)
    if state.radial:
        rg = state.grid
        r = rg.r if labels is None else np.asarray(labels, dtype=float)
        q = rg.interpolate(state.theta, r, -1.0)
        qp = rg.interpolate(rg.d_odd(state.theta), r, 1.0)
        v = rg.interpolate(state.V, r, -1.0)
        rad = r + q
        with np.errstate(divide="ignore", invalid="ignore"):
            J = np.where(r > 0, (1.0 + qp) * (rad / np.where(r > 0, r, 1.0)) ** 2, (1.0 + qp) ** 3)
        w = k * np.maximum(1.0 - r * r, 0.0)
        rho = params.delta**alpha * w**alpha / (J * detA)
        e = np.zeros((len(r), 3))
        e[:, 0] = 1.0
        eta = rad[:, None] * e
        u = eta @ frame.Adot.T + (v[:, None] * e) @ frame.A.T / frame.mu
        return EulerianSample(eta @ frame.A.T, rho, u)
    grid = state.grid
    if labels is not None:
        raise ValueError("3-D reconstruction is available on the grid nodes only")
    eta = grid.Y + state.theta
    fmd = state.fmd or _fmd(grid, state.theta)
    w = grid.enthalpy(params.gamma)
    rho = params.delta**alpha * w**alpha / (fmd.J * detA)
    u = eta @ frame.Adot.T + state.V @ frame.A.T / frame.mu
    return EulerianSample(eta @ frame.A.T, rho, u)


def radial_eulerian_mass(state, frame, params, n_quad=None):
    """4 pi int_0^R rho(x) x^2 dx by Gauss-Jacobi quadrature in the Eulerian radius.

    The label of each Eulerian node is found by Newton iteration on
    mu (r + q(r)) = x with the spectral interpolant of q.
    """
    from scipy.special import roots_jacobi

    rg = state.grid
    mu = float(np.cbrt(np.linalg.det(frame.A)))
    qb = float(rg.interpolate(state.theta, [1.0], -1.0)[0])
    R = mu * (1.0 + qb)
    n = n_quad or 2 * rg.n_r
    a = params.alpha
    xg, wg = roots_jacobi(n, a, 2.0)
    s = 0.5 * (xg + 1.0)
    x = s * R
    dq = rg.d_odd(state.theta)
    # Newton for the label r(x)
    r = x / R
    for _ in range(50):
        g = r + rg.interpolate(state.theta, r, -1.0) - x / mu
        gp = 1.0 + rg.interpolate(dq, r, 1.0)
        step_ = g / gp
        r = np.clip(r - step_, 0.0, 1.0)
        if np.max(np.abs(step_)) < 1e-15:
            break
    smp = eulerian_reconstruct(state, frame, params, r)
    # rho / (1 - s)^alpha is smooth; (1 - s)^alpha s^2 is in the Jacobi weight
    smooth = smp.rho / np.maximum(1.0 - s, 1e-300) ** a
    return float(4.0 * np.pi * R**3 * 0.5 ** (a + 3.0) * np.sum(wg * smooth))


# -- drivers -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RunResult:
    states: list
    reports: list
    rows: list
    traj: object
    log: list
    steps: int


def _row(state, fr, rep, mass, jdev, flags, S_sup):
    return {
        "tau": state.tau, "t": fr.t, "mu": fr.mu, "S_norm": S_sup, "B_norm": rep.B_V,
        "D_norm": rep.D, "mass": mass, "max_J_dev": jdev,
        "apriori_flag": int(not flags.ok),
    }


def run_radial(ivp_or_traj, params, q0, V0, tau_max, config, *, n_r=16, N=2, record_every=1,
               field_on=True, traj=None, monitor=True):
    """Spherically symmetric run with the exact enclosed-mass force.

    ``q0``/``V0`` are callables of r (odd in r) or arrays on the radial nodes.
    Returns states and monitor rows at every ``record_every`` steps.
    """
    from .monitors import NormSeries, asymptotic_mu0, energy_norm_report

    params.require_dynamics()
    traj = traj if traj is not None else _as_traj(ivp_or_traj, params, tau_max)
    _require_isotropic(traj)
    mu0 = asymptotic_mu0(params, traj.ivp.A0, traj.ivp.A1) if monitor else None
    rg = RadialGrid.build(n_r)
    q = q0(rg.r) if callable(q0) else np.asarray(q0, dtype=float)
    V = V0(rg.r) if callable(V0) else np.asarray(V0, dtype=float)
    state = PerturbationState(0.0, np.array(q, float), np.array(V, float), rg)
    frames = _FrameCache(traj)
    series = NormSeries()
    states, reports, rows, msgs = [], [], [], []
    g3 = build_grid(n_r, 6, 12)
    n = 0

    def record(st):
        fr = frames(st.tau)
        g, th, v = embed_radial(st, grid=g3)
        fmd = _fmd(g, th)
        flags = apriori_flags(g, th, fmd)
        if not flags.ok:
            msgs.append(f"a priori flag at tau={st.tau:.4f}: {flags}")
            if config.abort_on_apriori:
                raise AprioriViolation(msgs[-1])
        snap = PerturbationState(st.tau, th, v, g, fmd, flags)
        states.append(PerturbationState(st.tau, st.theta, st.V, rg, None, flags))
        mass = radial_eulerian_mass(st, fr, params)
        if monitor:
            rep = energy_norm_report(snap, fr, params, N, mu0)
            S_sup = series.add(rep)
            reports.append(rep)
            rows.append(_row(st, fr, rep, mass, float(np.abs(fmd.J - 1).max()), flags, S_sup))
        else:
            rows.append({"tau": st.tau, "t": fr.t, "mu": fr.mu, "mass": mass})

    record(state)
    while state.tau < tau_max - 1e-12:
        fr = frames(state.tau)
        dt = min(_dt_limit(rg.h_min, fr, params, config), tau_max - state.tau)
        state = step(state, traj, config, params, dt=dt, field_on=field_on, frames=frames)
        n += 1
        if n % record_every == 0 or state.tau >= tau_max - 1e-12:
            record(state)
    return RunResult(states, reports, rows, traj, msgs, n)


def full3d_short_run(ivp_or_traj, params, theta0, V0, n_steps, config, *, grid=None, dt=None,
                     N=1, record_every=1, field_on=True, threads=1, traj=None, monitor=True):
    """Coarse 3-D run with the convolution force; records states and norm rows.

    ``theta0``/``V0`` are callables of the node array Y (shape (..., 3)) or
    arrays on the grid.
    """
    from .monitors import NormSeries, asymptotic_mu0, energy_norm_report

    params.require_dynamics()
    grid = grid or build_grid(8, 4, 8)
    th = theta0(grid.Y) if callable(theta0) else np.asarray(theta0, dtype=float)
    V = V0(grid.Y) if callable(V0) else np.asarray(V0, dtype=float)
    tau_guess = n_steps * (config.max_dt if dt is None else dt)
    traj = traj if traj is not None else _as_traj(ivp_or_traj, params, tau_guess)
    frames = _FrameCache(traj)
    mu0 = asymptotic_mu0(params, traj.ivp.A0, traj.ivp.A1) if monitor else None
    state = PerturbationState(0.0, np.array(th, float), np.array(V, float), grid, _fmd(grid, th))
    force = _Force3D(grid, params, config.refresh, threads) if field_on else None
    series = NormSeries()
    states, reports, rows, msgs = [], [], [], []

    def record(st):
        fr = frames(st.tau)
        flags = apriori_flags(grid, st.theta, st.fmd)
        if not flags.ok:
            msgs.append(f"a priori flag at tau={st.tau:.4f}: {flags}")
            if config.abort_on_apriori:
                raise AprioriViolation(msgs[-1])
        st = PerturbationState(st.tau, st.theta, st.V, grid, st.fmd, flags)
        states.append(st)
        w = grid.enthalpy(params.gamma)
        mass = float(np.sum(grid.weights * params.delta**params.alpha * w**params.alpha))
        if monitor:
            rep = energy_norm_report(st, fr, params, N, mu0)
            S_sup = series.add(rep)
            reports.append(rep)
            rows.append(_row(st, fr, rep, mass, float(np.abs(st.fmd.J - 1).max()), flags, S_sup))
        else:
            rows.append({"tau": st.tau, "t": fr.t, "mu": fr.mu, "mass": mass})

    record(state)
    for n in range(n_steps):
        h = dt if dt is not None else _dt_limit(grid.h_min, frames(state.tau), params, config)
        if state.tau + h > traj.tau_samples[-1]:
            raise ValueError("trajectory too short for the requested steps")
        state = step(state, traj, config, params, dt=h, field_on=field_on, force=force,
                     frames=frames, step_index=n)
        if (n + 1) % record_every == 0 or n + 1 == n_steps:
            record(state)
    res = RunResult(states, reports, rows, traj, msgs, n_steps)
    object.__setattr__(res, "force_evaluations", force.evaluations if force else 0)
    return res


def momentum_residual(states, traj, params, *, field_on=True, threads=1):
    """Centred-difference residual V_t - rhs(theta, V) at interior snapshots.

    Snapshots must be equally spaced in tau.  Returns the weighted L^2 norm
    (weight w^alpha) of the residual at each interior snapshot.
    """
    frames = _FrameCache(traj)
    out = []
    grid = states[0].grid
    force = _Force3D(grid, params, 1, threads) if field_on else None
    w = grid.enthalpy(params.gamma)
    for prev, cur, nxt in zip(states[:-2], states[1:-1], states[2:]):
        h = nxt.tau - prev.tau
        fr = frames(cur.tau)
        gf = _G(force.evaluate(cur.theta, cur.fmd, fr.Lambda).G) if field_on else None
        acc = perturbation_rhs(cur, fr, gf, params, field_on=field_on)
        res = (nxt.V - prev.V) / h - acc
        out.append(float(np.sqrt(weighted_norm(grid, res, params.alpha, w=w))))
    return np.array(out)


def _as_traj(ivp_or_traj, params, tau_max):
    if hasattr(ivp_or_traj, "t_of_tau"):
        return ivp_or_traj
    ivp = ivp_or_traj
    return trajectory_to_tau(params, ivp.A0, ivp.A1, tau_max)


def _require_isotropic(traj, tol=1e-12):
    A0, A1 = traj.ivp.A0, traj.ivp.A1
    for M in (A0, A1):
        if np.abs(M - M[0, 0] * np.eye(3)).max() > tol * max(1.0, abs(M[0, 0])):
            raise ValueError("radial mode needs A0 and A1 proportional to the identity")

