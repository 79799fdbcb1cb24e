"""Named acceptance checks, each returning a pass/fail record.

Every check runs at its stated tolerance and reports the measured value.
``run_all`` executes them in order; the CLI exposes each one by name.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .affine import (AffineIVP, GasParams, TrajectoryTooShortError, decompose_linear_part,
                     frame_at, integrate, picard_oracle)
from .dynamics import (StepperConfig, eulerian_reconstruct, full3d_short_run, run_radial,
                       trajectory_to_tau)
from .field import KernelSpec, background_potential, divcurl_residual, force_field, normal_reconstruction
from .geometry import build_grid, flow_map_derivatives
from .monitors import curl_residual, decay_fit

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "run_all", "DEFAULT_A1"]

#: Sheared, anisotropic initial velocity used by the affine checks.
DEFAULT_A1 = np.array([[1.2, 0.1, 0.0], [-0.05, 1.0, 0.1], [0.0, 0.05, 0.8]])
#: Traceless-ish deformation used for the theta = eps M y identity checks.
DEFAULT_M = np.array([[0.3, 0.5, -0.2], [0.1, -0.4, 0.6], [0.2, 0.3, 0.1]])


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    runtime: float = 0.0
    values: dict = field(default_factory=dict)
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} [{self.number:2d}] {self.name}: {self.detail} ({self.runtime:.2f} s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.runtime = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- affine ------------------------------------------------------------------

def c1_affine_exactness():
    """delta = 0: A(t) = A0 + t A1 on [0, 100] to 1e-10 in under a second."""
    t0 = time.perf_counter()
    p = GasParams(1.5, 0.0)
    A0 = np.eye(3)
    traj = integrate(AffineIVP(p, A0, DEFAULT_A1, t_end=100.0))
    ts = np.linspace(0.0, 100.0, 1001)
    err = float(np.max(np.linalg.norm(traj.A(ts) - (A0 + ts[:, None, None] * DEFAULT_A1), axis=(1, 2))))
    rt = time.perf_counter() - t0
    ok = err <= 1e-10 and rt < 1.0
    return CriterionResult(1, "affine exactness", ok, rt, {"sup_error": err},
                           f"sup|A - (A0 + t A1)| = {err:.2e} (<= 1e-10), runtime {rt:.3f} s (< 1 s)")


def c2_energy():
    """Relative energy drift over [0, 50] at default tolerances."""
    p = GasParams(1.5, 1e-2)
    traj = integrate(AffineIVP(p, np.eye(3), DEFAULT_A1, t_end=50.0))
    ts = np.linspace(0.0, 50.0, 2001)
    E = traj.energy(ts)
    drift = float(np.max(np.abs(E / traj.energy0 - 1.0)))
    return CriterionResult(2, "affine energy conservation", drift <= 1e-8, values={"drift": drift},
                           detail=f"relative drift {drift:.2e} (<= 1e-8)")


def c3_picard():
    """Picard fixed point against direct integration on [0, 2]."""
    errs = {}
    for d in (1e-2, 1e-3):
        ivp = AffineIVP(GasParams(1.5, d), np.eye(3), DEFAULT_A1, t_end=2.0)
        pic = picard_oracle(ivp, 2.0)
        traj = integrate(ivp)
        errs[d] = float(np.max(np.linalg.norm(pic.A - traj.A(pic.t), axis=(1, 2))))
    worst = max(errs.values())
    return CriterionResult(3, "Picard oracle equivalence", worst <= 1e-8, values={"errors": errs},
                           detail="sup-norm " + ", ".join(f"delta={d:g}: {e:.2e}" for d, e in errs.items())
                           + " (<= 1e-8)")


def _decompose(p, A0, A1, t_end=1e5):
    for _ in range(4):
        traj = integrate(AffineIVP(p, A0, A1, t_end=t_end))
        try:
            return traj, decompose_linear_part(traj)
        except TrajectoryTooShortError as exc:
            t_end = 1.5 * exc.required_t_end
    raise RuntimeError("could not reach the settling horizon")


def c4_asymptotics():
    """Slope 2 - 3 gamma of |A''|, stable |b - A1|/delta, det Lambda = 1."""
    slopes, ratios, det_dev = {}, {}, 0.0
    ok = True
    for g in (1.5, 4.0 / 3.0):
        traj, rep = _decompose(GasParams(g, 0.1), np.eye(3), DEFAULT_A1)
        slopes[g] = rep.slope
        ok &= abs(rep.slope - (2.0 - 3.0 * g)) <= 0.05
    for g in (1.5, 4.0 / 3.0):
        vals = []
        for d in (1e-1, 1e-2, 1e-3, 1e-4):
            traj, rep = _decompose(GasParams(g, d), np.eye(3), DEFAULT_A1)
            vals.append(rep.b_minus_A1 / d)
            ts = np.geomspace(1e-3, traj.t_end, 200)
            for t in ts:
                det_dev = max(det_dev, abs(np.linalg.det(frame_at(traj, t).Lambda) - 1.0))
        ratios[g] = vals
        ok &= max(vals) / min(vals) < 2.0
    ok &= det_dev <= 1e-10
    detail = ("slopes " + ", ".join(f"gamma={g:.4g}: {s:.4f} (target {2 - 3 * g:.3f})"
                                    for g, s in slopes.items())
              + "; |b-A1|/delta spread " + ", ".join(f"{max(v) / min(v):.3f}" for v in ratios.values())
              + f" (< 2); max |det Lambda - 1| = {det_dev:.1e}")
    return CriterionResult(4, "affine asymptotics", bool(ok),
                           values={"slopes": slopes, "ratios": ratios, "det_dev": det_dev},
                           detail=detail)


# -- field -------------------------------------------------------------------

LEVELS = ((8, 4, 8), (12, 6, 12), (16, 8, 16))


def c5_poisson(default_grid=(16, 8, 16)):
    """Centre potential pi/4 and div-residual refinement for gamma = 2."""
    t0 = time.perf_counter()
    p = GasParams(2.0, 1.0)
    grid = build_grid(*default_grid)
    spec = KernelSpec.identity()
    psi0 = float(background_potential(grid, p, spec, np.zeros((1, 3)))[0])
    err0 = abs(psi0 - np.pi / 4.0)
    iso, aniso = [], []
    aspec = KernelSpec(np.diag([1.2, 1.0 / (1.2 * 0.9), 0.9]))
    for lv in LEVELS:
        g = build_grid(*lv)
        fmd = flow_map_derivatives(g, theta=np.zeros(g.shape + (3,)))
        for sp, out in ((spec, iso), (aspec, aniso)):
            gf = force_field(g, None, fmd, sp, p, want_psi=False)
            out.append(divcurl_residual(g, gf, None, fmd, sp, p).div_norm)
    rt = time.perf_counter() - t0
    # the polar rule integrates the isotropic gamma = 2 case exactly, so that
    # sequence sits at round-off; the anisotropic one shows the rate
    iso_ok = max(iso) <= 1e-11
    dec = all(b < 0.5 * a for a, b in zip(aniso, aniso[1:]))
    ok = err0 <= 1e-3 and iso_ok and dec and rt < 30.0
    detail = (f"Psi-bar(0) = {psi0:.12f} (|err| {err0:.1e} <= 1e-3); div residual isotropic "
              + ", ".join(f"{v:.1e}" for v in iso) + " (round-off), anisotropic "
              + ", ".join(f"{v:.1e}" for v in aniso) + f"; runtime {rt:.1f} s (< 30 s)")
    return CriterionResult(5, "Poisson validation", ok, rt,
                           {"psi0": psi0, "iso": iso, "aniso": aniso}, detail)


def _commutator_errors(grid):
    Y = grid.Y
    x, y, z = Y[..., 0], Y[..., 1], Y[..., 2]
    f = x**3 * y - 2.0 * y * z**2 + x * z + 0.5 * z**4 + x * y * z
    errs = []
    for j in range(3):
        for i in range(3):
            a = grid.tangential(grid.radial(f), j, i)
            b = grid.radial(grid.tangential(f, j, i))
            errs.append(np.abs(a - b).max())
            for k in range(3):
                lhs = (grid.tangential(grid.tangential(f, i, k), j, i)
                       - grid.tangential(grid.tangential(f, j, i), i, k))
                # [slash_ji, slash_ik] = slash_jk holds for distinct j, i, k
                if len({i, j, k}) == 3:
                    errs.append(np.abs(lhs - grid.tangential(f, j, k)).max())
            for m in range(3):
                c = grid.partial(grid.tangential(f, j, i), m) - grid.tangential(grid.partial(f, m), j, i)
                rhs = (m == j) * grid.partial(f, i) - (m == i) * grid.partial(f, j)
                errs.append(np.abs(c - rhs).max())
    for m in range(3):
        c = grid.partial(grid.radial(f), m) - grid.radial(grid.partial(f, m))
        errs.append(np.abs(c - grid.partial(f, m)).max())
    r2 = np.sum(Y * Y, axis=-1)
    dec = []
    for i in range(3):
        s = sum(Y[..., j] * grid.tangential(f, j, i) for j in range(3)) / r2 + Y[..., i] * grid.radial(f) / r2
        dec.append(np.abs(s - grid.partial(f, i)).max())
    return max(errs), max(dec)


def c6_identities():
    """Commutators, the d_i decomposition, div/curl identities and the normal formula."""
    grid = build_grid(12, 6, 12)
    com, dec = _commutator_errors(grid)
    p = GasParams(1.5, 1.0)
    spec = KernelSpec(np.diag([1.2, 1.0 / (1.2 * 0.9), 0.9]))
    res = {}
    for eps in (0.0, 0.01, 0.02):
        th = eps * grid.Y @ DEFAULT_M.T
        fmd = flow_map_derivatives(grid, theta=th)
        gf = force_field(grid, th if eps else None, fmd, spec, p, want_psi=False)
        r = divcurl_residual(grid, gf, th, fmd, spec, p)
        res[eps] = (r.div_norm, r.curl_norm)
    # linear in eps: doubling eps roughly doubles the excess over the eps = 0 floor
    lin = []
    for k in (0, 1):
        a = res[0.01][k] - res[0.0][k]
        b = res[0.02][k] - res[0.0][k]
        lin.append(b / a if a > 0 else np.inf)
    lin_ok = all(1.6 <= v <= 2.4 for v in lin)
    # at eps = 0 both residuals are quadrature error of the anisotropic background
    floor_ok = res[0.0][0] <= 1e-6 and res[0.0][1] <= 1e-6
    th = 0.01 * grid.Y @ DEFAULT_M.T
    fmd = flow_map_derivatives(grid, theta=th)
    G = force_field(grid, th, fmd, spec, p, want_psi=False).G
    nr = normal_reconstruction(grid, G, spec)
    Ypoly = grid.Y
    poly = np.stack([Ypoly[..., 0] ** 2 * Ypoly[..., 1], Ypoly[..., 2] ** 3, Ypoly[..., 0] * Ypoly[..., 2]], axis=-1)
    nr_poly = normal_reconstruction(grid, poly, spec)
    ok = com <= 1e-10 and dec <= 1e-10 and lin_ok and floor_ok and nr_poly.max_error <= 1e-10 \
        and nr.rel_error <= 1e-8
    detail = (f"commutators {com:.1e}, d_i decomposition {dec:.1e} (<= 1e-10); div/curl at eps=0 "
              f"{res[0.0][0]:.1e}/{res[0.0][1]:.1e}, doubling ratios {lin[0]:.2f}/{lin[1]:.2f} (linear); "
              f"normal formula polynomial {nr_poly.max_error:.1e}, force field rel {nr.rel_error:.1e}")
    return CriterionResult(6, "identity suite", bool(ok),
                           values={"commutators": com, "decomposition": dec, "divcurl": res,
                                   "linearity": lin, "normal_poly": nr_poly.max_error,
                                   "normal_force": nr.rel_error}, detail=detail)


# -- dynamics ----------------------------------------------------------------

def _zero(r):
    return 0.0 * r


def c7_mass():
    """Eulerian mass constant along radial runs for c = +1 and c = -1."""
    devs = {}
    for c in (1, -1):
        p = GasParams(1.5, 1e-2, c)
        traj = trajectory_to_tau(p, np.eye(3), np.eye(3), 3.0)
        res = run_radial(None, p, lambda r: 0.01 * r * (1.0 - r * r / 3.0), _zero, 3.0,
                         StepperConfig(), traj=traj, monitor=False)
        m = np.array([row["mass"] for row in res.rows])
        devs[c] = float(np.max(np.abs(m / m[0] - 1.0)))
    ok = max(devs.values()) <= 1e-6
    return CriterionResult(7, "mass conservation", ok, values={"deviation": devs},
                           detail=", ".join(f"c={c:+d}: {v:.1e}" for c, v in devs.items()) + " (<= 1e-6)")


def c8_scaling(tau_max=4.0):
    """sup S-norm of the zero-data response scales like delta^3 for gamma = 3/2."""
    t0 = time.perf_counter()
    deltas = (10**-1.5, 1e-2, 10**-2.5)
    sups = []
    for d in deltas:
        p = GasParams(1.5, d)
        traj = trajectory_to_tau(p, np.eye(3), np.eye(3), tau_max)
        res = run_radial(None, p, _zero, _zero, tau_max, StepperConfig(), traj=traj, N=2,
                         record_every=2)
        sups.append(res.rows[-1]["S_norm"])
    slope = float(np.polyfit(np.log(deltas), np.log(sups), 1)[0])
    rt = time.perf_counter() - t0
    ok = abs(slope - 3.0) <= 0.3 and rt < 300.0
    return CriterionResult(8, "zero-data response scaling", ok, rt, {"slope": slope, "sups": sups},
                           f"log-slope {slope:.3f} (3 +/- 0.3); runtime {rt:.1f} s (< 300 s)")


def c9_expansion(tau_max=7.0):
    """Boundary radius linear in t; t^3 rho(centre) settles over the last decade."""
    p = GasParams(1.5, 1e-2)
    traj = trajectory_to_tau(p, np.eye(3), np.eye(3), tau_max)
    res = run_radial(None, p, lambda r: 0.01 * r * (1.0 - r * r / 3.0), _zero, tau_max,
                     StepperConfig(), traj=traj, monitor=False)
    t = np.array([row["t"] for row in res.rows])
    R, t3rho = [], []
    for st, ti in zip(res.states, t):
        fr = frame_at(traj, ti)
        qb = st.grid.interpolate(st.theta, [1.0], -1.0)[0]
        R.append(fr.mu * (1.0 + qb))
        t3rho.append(ti**3 * eulerian_reconstruct(st, fr, p, [0.0]).rho[0])
    R, t3rho = np.array(R), np.array(t3rho)
    sel = t >= t[-1] / 10.0
    coef = np.polyfit(t[sel], R[sel], 1)
    resid = R[sel] - np.polyval(coef, t[sel])
    r2 = 1.0 - float(resid @ resid) / float(np.sum((R[sel] - R[sel].mean()) ** 2))
    drift = float(abs(t3rho[sel][-1] / t3rho[sel][0] - 1.0))
    ok = r2 >= 0.999 and drift < 0.05
    return CriterionResult(9, "linear expansion and scattering", ok,
                           values={"r2": r2, "drift": drift, "slope": float(coef[0]),
                                   "t_last": float(t[-1])},
                           detail=f"R^2 {r2:.6f} (>= 0.999), t^3 rho(centre) drift {drift:.3%} (< 5%) "
                                  f"over t in [{t[-1] / 10:.0f}, {t[-1]:.0f}]")


def _rotational_V0(eps):
    def V0(Y):
        rot = np.stack([-Y[..., 1], Y[..., 0], np.zeros_like(Y[..., 0])], axis=-1)
        return eps * rot * (1.0 + Y[..., 2:3])
    return V0


def c10_curl(n_steps=40, dt=0.05):
    """Curl-transport residual order under snapshot halving and the B^N decay rate."""
    p = GasParams(1.5, 1e-2)
    A1 = np.diag([1.2, 1.0, 0.8])
    grid = build_grid(8, 4, 8)
    traj = trajectory_to_tau(p, np.eye(3), A1, n_steps * dt)
    res = full3d_short_run(traj, p, lambda Y: 0.0 * Y, _rotational_V0(1e-3), n_steps,
                           StepperConfig(max_dt=dt, refresh=1, mode="full_3d"), grid=grid, dt=dt, N=1, traj=traj)
    resid = [float(curl_residual(res.states[::s], traj, p).max()) for s in (4, 2, 1)]
    orders = [float(np.log2(a / b)) for a, b in zip(resid, resid[1:])]
    tau = [row["tau"] for row in res.rows]
    B = [row["B_norm"] for row in res.rows]
    fit = decay_fit(tau, B, window=(tau[0], tau[-1]))
    mu0 = res.reports[0].mu0
    ok = all(o >= 1.5 for o in orders) and fit.exponent <= -2.0 * mu0 * 0.85
    return CriterionResult(10, "curl transport", ok,
                           values={"residuals": resid, "orders": orders, "exponent": fit.exponent,
                                   "mu0": mu0},
                           detail="residual " + ", ".join(f"{v:.2e}" for v in resid)
                           + " (orders " + ", ".join(f"{o:.2f}" for o in orders) + ", stencil order 2); "
                           f"B^N exponent {fit.exponent:.3f} <= {-2 * mu0 * 0.85:.3f}")


def c11_fixed_point(n_steps=100):
    """With the field off, zero data stays zero for 100 steps."""
    p = GasParams(1.5, 1e-2)
    A1 = np.diag([1.2, 1.0, 0.8])
    grid = build_grid(8, 4, 8)
    dt = 0.02
    traj = trajectory_to_tau(p, np.eye(3), A1, n_steps * dt)
    res = full3d_short_run(traj, p, lambda Y: 0.0 * Y, lambda Y: 0.0 * Y, n_steps,
                           StepperConfig(max_dt=dt, refresh=1, mode="full_3d"), grid=grid, dt=dt, N=1, traj=traj,
                           field_on=False, record_every=10)
    S = max(row["S_norm"] for row in res.rows)
    rtraj = trajectory_to_tau(p, np.eye(3), np.eye(3), n_steps * dt)
    rres = run_radial(None, p, _zero, _zero, n_steps * dt, StepperConfig(max_dt=dt), traj=rtraj,
                      field_on=False, N=1, record_every=10)
    S = max(S, max(row["S_norm"] for row in rres.rows))
    return CriterionResult(11, "pure Euler fixed point", S <= 1e-12, values={"S_max": S},
                           detail=f"max S^N over {n_steps} steps = {S:.1e} (<= 1e-12)")


CRITERIA = {
    1: c1_affine_exactness,
    2: c2_energy,
    3: c3_picard,
    4: c4_asymptotics,
    5: c5_poisson,
    6: c6_identities,
    7: c7_mass,
    8: c8_scaling,
    9: c9_expansion,
    10: c10_curl,
    11: c11_fixed_point,
}


def run_criterion(n):
    res = _timed(CRITERIA[int(n)])()
    return res


def run_all(numbers=None, echo=None):
    out = []
    for n in numbers or sorted(CRITERIA):
        r = run_criterion(n)
        if echo:
            echo(r.line())
        out.append(r)
    return out
