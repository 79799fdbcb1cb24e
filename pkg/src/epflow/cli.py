"""Batch scenario runner.

    epflow run CONFIG [--out DIR] [--threads K]
    epflow report RUN_DIR

Configs are INI files; ``defaults.ini`` in this package lists every key.
Outputs are CSV series, a JSON-lines summary and an invariant table.  No
wall-clock data is written to disk, so identical configs give identical
files.  Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 acceptance failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_ACCEPT = 0, 2, 3, 4
SCENARIOS = ("affine", "field_validation", "radial", "full3d", "norms", "sweep", "acceptance")
RUN_COLUMNS = ["tau", "t", "mu", "S_norm", "B_norm", "D_norm", "mass", "max_J_dev", "apriori_flag"]

log = logging.getLogger("epflow")


class ConfigError(ValueError):
    pass


def default_config_text():
    return resources.files("epflow").joinpath("defaults.ini").read_text()


def _floats(text, n=None, what="value"):
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {what}: {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what} needs {n} numbers, got {len(vals)}")
    return vals


@dataclass
class RunConfig:
    scenario: str
    out: Path
    threads: int
    parser: configparser.ConfigParser

    def get(self, section, key):
        return self.parser.get(section, key)

    def f(self, section, key):
        try:
            return self.parser.getfloat(section, key)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} must be a number") from exc

    def i(self, section, key):
        try:
            return self.parser.getint(section, key)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} must be an integer") from exc

    def b(self, section, key):
        try:
            return self.parser.getboolean(section, key)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} must be a boolean") from exc

    def matrix(self, section, key):
        return np.array(_floats(self.get(section, key), 9, f"[{section}] {key}")).reshape(3, 3)

    def floats(self, section, key):
        return _floats(self.get(section, key), what=f"[{section}] {key}")

    def params(self):
        from .affine import DomainError, GasParams

        try:
            return GasParams(self.f("gas", "gamma"), self.f("gas", "delta"), self.i("gas", "field_sign"))
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    def stepper(self):
        from .dynamics import StepperConfig

        try:
            return StepperConfig(self.f("stepper", "cfl"), self.f("stepper", "max_dt"),
                                 self.i("stepper", "order"), self.i("stepper", "refresh"),
                                 "full_3d" if self.scenario == "full3d" else "radial_1d",
                                 self.b("stepper", "abort_on_apriori"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def grid_shape(self):
        return (self.i("grid", "n_radial"), self.i("grid", "n_polar"), self.i("grid", "n_azimuthal"))

    def resolved_text(self):
        lines = []
        for sec in self.parser.sections():
            lines.append(f"[{sec}]")
            for k, v in self.parser.items(sec):
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def load_config(path, out=None, threads=None):
    """Read a config over the defaults and validate it."""
    base = configparser.ConfigParser()
    base.read_string(default_config_text())
    user = configparser.ConfigParser()
    try:
        with open(path) as fh:
            user.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for sec in user.sections():
        if not base.has_section(sec):
            raise ConfigError(f"unknown section [{sec}]")
        for k, v in user.items(sec):
            if not base.has_option(sec, k):
                raise ConfigError(f"unknown key [{sec}] {k}")
            base.set(sec, k, v)
    if out is not None:
        base.set("run", "out", str(out))
    if threads is not None:
        base.set("run", "threads", str(threads))
    scen = base.get("run", "scenario").strip()
    if scen not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scen!r}; expected one of {', '.join(SCENARIOS)}")
    cfg = RunConfig(scen, Path(base.get("run", "out")), 0, base)
    cfg.threads = cfg.i("run", "threads")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    p = cfg.params()
    if scen in ("radial", "full3d", "sweep"):
        try:
            p.require_dynamics()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.stepper()
    if scen == "acceptance":
        _criteria_selection(cfg)
    for key in ("A0", "A1"):
        if np.linalg.det(cfg.matrix("affine", key)) <= 0:
            raise ConfigError(f"[affine] {key} must have positive determinant")
    if scen == "radial":
        for key in ("A0", "A1"):
            M = cfg.matrix("affine", key)
            if np.abs(M - M[0, 0] * np.eye(3)).max() > 1e-14:
                raise ConfigError("radial runs need A0 and A1 proportional to the identity")
    return cfg


# -- output helpers ----------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    return v


class Summary:
    """JSON-lines records plus the invariant pass/fail table."""

    def __init__(self):
        self.records = []
        self.invariants = []

    def add(self, kind, **data):
        self.records.append({"kind": kind, **_jsonable(data)})

    def check(self, name, passed, value, target):
        self.invariants.append({"invariant": name, "passed": bool(passed), "value": _jsonable(value),
                                "target": target})

    def write(self, out):
        with open(out / "summary.jsonl", "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            for inv in self.invariants:
                fh.write(json.dumps({"kind": "invariant", **inv}, sort_keys=True) + "\n")
        with open(out / "invariants.txt", "w") as fh:
            for inv in self.invariants:
                status = "PASS" if inv["passed"] else "FAIL"
                fh.write(f"{status}  {inv['invariant']}: {inv['value']} (target {inv['target']})\n")

    @property
    def all_passed(self):
        return all(inv["passed"] for inv in self.invariants)


# -- scenarios ---------------------------------------------------------------

def _affine(cfg, out, summary):
    from .affine import (AffineIVP, TrajectoryTooShortError, decompose_linear_part, frame_at,
                         integrate, write_trajectory_csv)

    p = cfg.params()
    A0, A1 = cfg.matrix("affine", "A0"), cfg.matrix("affine", "A1")
    t_end = cfg.f("affine", "t_end")
    ivp = AffineIVP(p, A0, A1, t_end, cfg.f("affine", "rtol"), cfg.f("affine", "atol"))
    traj = integrate(ivp)
    n = cfg.i("affine", "samples")
    ts = np.unique(np.concatenate([np.linspace(0.0, min(1.0, t_end), 11),
                                   np.geomspace(min(1.0, t_end), t_end, n)]))
    write_trajectory_csv(out / "trajectory.csv", traj, ts)
    E = traj.energy(ts)
    drift = float(np.max(np.abs(E / traj.energy0 - 1.0)))
    det_dev = max(abs(np.linalg.det(frame_at(traj, t).Lambda) - 1.0) for t in ts)
    summary.add("affine", gamma=p.gamma, delta=p.delta, t_end=t_end, energy_drift=drift,
                det_lambda_dev=det_dev)
    summary.check("energy drift", drift <= 1e-8, drift, "<= 1e-8")
    summary.check("det Lambda = 1", det_dev <= 1e-10, det_dev, "<= 1e-10")
    if p.delta == 0:
        err = float(np.max(np.linalg.norm(traj.A(ts) - (A0 + ts[:, None, None] * A1), axis=(1, 2))))
        summary.add("exact_linear", sup_error=err)
        summary.check("exact linear motion (delta = 0)", err <= 1e-10, err, "<= 1e-10")
    else:
        try:
            rep = decompose_linear_part(traj)
            summary.add("decomposition", b=rep.rates.b, mu1=rep.rates.mu1, mu0=rep.rates.mu0,
                        mu2=rep.rates.mu2, b_minus_A1_over_delta=rep.b_minus_A1 / p.delta,
                        settling_residual=rep.residual, slope=rep.slope, slope_window=rep.slope_window,
                        slope_target=2.0 - 3.0 * p.gamma)
            if rep.slope is not None:
                summary.check("decay slope of |A''|", abs(rep.slope - (2 - 3 * p.gamma)) <= 0.05,
                              rep.slope, f"{2 - 3 * p.gamma:.4f} +/- 0.05")
        except TrajectoryTooShortError as exc:
            summary.add("decomposition", skipped=str(exc), required_t_end=exc.required_t_end)


def _field_validation(cfg, out, summary):
    from .field import KernelSpec, background_potential, divcurl_residual, force_field
    from .geometry import build_grid, flow_map_derivatives

    p = cfg.params()
    l1, l2 = _floats(cfg.get("field_validation", "lambda_diag"), 2, "lambda_diag")
    spec = KernelSpec(np.diag([l1, l2, 1.0 / (l1 * l2)]))
    eps = cfg.f("field_validation", "eps")
    M = cfg.matrix("perturbation", "M")
    rows = []
    for lv in cfg.get("field_validation", "levels").split(","):
        try:
            shape = tuple(int(v) for v in lv.strip().split("x"))
        except ValueError as exc:
            raise ConfigError(f"bad grid level {lv!r}") from exc
        g = build_grid(*shape)
        th = eps * g.Y @ M.T
        fmd = flow_map_derivatives(g, theta=th)
        gf = force_field(g, th if eps else None, fmd, spec, p, threads=cfg.threads, want_psi=False)
        r = divcurl_residual(g, gf, th, fmd, spec, p)
        psi0 = float(background_potential(g, p, spec, np.zeros((1, 3)))[0])
        rows.append({"n_radial": shape[0], "n_polar": shape[1], "n_azimuthal": shape[2],
                     "psi_bar_center": psi0, "div_norm": r.div_norm, "curl_norm": r.curl_norm,
                     "div_max": r.div_max, "curl_max": r.curl_max})
    write_csv(out / "field_validation.csv", list(rows[0]), rows)
    summary.add("field_validation", gamma=p.gamma, lambda_diag=[l1, l2], eps=eps, levels=rows)
    if p.gamma == 2.0 and l1 == 1.0 and l2 == 1.0:
        err = abs(rows[-1]["psi_bar_center"] - np.pi / 4)
        summary.check("Psi-bar(0) = pi/4 (gamma = 2)", err <= 1e-3, err, "<= 1e-3")
    div = [r["div_norm"] for r in rows]
    floor = 1e-11
    ok = all(b < 0.5 * a or max(a, b) <= floor for a, b in zip(div, div[1:]))
    summary.check("div residual decreases under refinement (or sits at round-off)", ok, div,
                  f"halving per level or <= {floor:g}")


def _combined_growth(reports):
    """max over tau of S + e^(2 mu0 tau) B, relative to its initial value."""
    comb = np.array([r.combined for r in reports if r.combined is not None])
    if len(comb) == 0 or comb[0] <= 0:
        return None
    return float(comb.max() / comb[0])


def _write_snapshots(cfg, out, res):
    every = cfg.i("monitors", "snapshot_every")
    if every <= 0:
        return
    from .geometry import write_field_csv

    d = out / "snapshots"
    d.mkdir(exist_ok=True)
    for k, st in enumerate(res.states[::every]):
        name = d / f"state_{k * every:05d}.csv"
        if st.radial:
            rows = [{"r": r, "q": q, "q_tau": v} for r, q, v in zip(st.grid.r, st.theta, st.V)]
            write_csv(name, ["r", "q", "q_tau"], rows)
        else:
            write_field_csv(name, st.grid, {"theta": st.theta, "V": st.V})


def _radial_profiles(cfg):
    ta = cfg.f("perturbation", "theta_amp")
    va = cfg.f("perturbation", "v_amp")
    return (lambda r: ta * r * (1.0 - r * r / 3.0)), (lambda r: va * r)


def _radial(cfg, out, summary):
    from .affine import frame_at
    from .dynamics import eulerian_reconstruct, run_radial, trajectory_to_tau

    p = cfg.params()
    tau_max = cfg.f("perturbation", "tau_max")
    A0, A1 = cfg.matrix("affine", "A0"), cfg.matrix("affine", "A1")
    traj = trajectory_to_tau(p, A0, A1, tau_max)
    q0, V0 = _radial_profiles(cfg)
    res = run_radial(None, p, q0, V0, tau_max, cfg.stepper(), n_r=cfg.i("grid", "n_radial"),
                     N=cfg.i("monitors", "N"), record_every=cfg.i("monitors", "record_every"),
                     field_on=cfg.b("perturbation", "field"), traj=traj)
    write_csv(out / "run.csv", RUN_COLUMNS, res.rows)
    t = np.array([row["t"] for row in res.rows])
    R, t3rho = [], []
    srows = []
    for st, row in zip(res.states, res.rows):
        fr = frame_at(traj, row["t"])
        qb = float(st.grid.interpolate(st.theta, [1.0], -1.0)[0])
        R.append(fr.mu * (1.0 + qb))
        rho_c = float(eulerian_reconstruct(st, fr, p, [0.0]).rho[0])
        t3rho.append(row["t"] ** 3 * rho_c)
        srows.append({"tau": row["tau"], "t": row["t"], "boundary_radius": R[-1], "rho_center": rho_c,
                      "t3_rho_center": t3rho[-1]})
    write_csv(out / "scattering.csv", list(srows[0]), srows)
    R, t3rho = np.array(R), np.array(t3rho)
    mass = np.array([row["mass"] for row in res.rows])
    mass_dev = float(np.max(np.abs(mass / mass[0] - 1.0)))
    summary.check("Eulerian mass constant", mass_dev <= 1e-6, mass_dev, "<= 1e-6 relative")
    sel = t >= t[-1] / 10.0
    _write_snapshots(cfg, out, res)
    mu0 = res.reports[0].mu0
    info = {"steps": res.steps, "tau_max": tau_max, "t_end": float(t[-1]), "S_sup": res.rows[-1]["S_norm"],
            "epsilon": res.rows[0]["S_norm"], "combined_growth": _combined_growth(res.reports),
            "mass_deviation": mass_dev, "bootstrap_size": p.delta ** (2 * p.alpha - 1),
            "mu0": mu0, "log": res.log}
    if sel.sum() >= 3 and t[-1] > 10 * max(t[1], 1e-300):
        coef = np.polyfit(t[sel], R[sel], 1)
        resid = R[sel] - np.polyval(coef, t[sel])
        r2 = 1.0 - float(resid @ resid) / float(np.sum((R[sel] - R[sel].mean()) ** 2))
        drift = float(abs(t3rho[sel][-1] / t3rho[sel][0] - 1.0))
        # asymptotic slope mu1 (1 + q(boundary)) with mu1 = 2 mu0 / (3 gamma - 3)
        mu1 = 2.0 * mu0 / (3.0 * p.gamma - 3.0)
        qb = float(res.states[-1].grid.interpolate(res.states[-1].theta, [1.0], -1.0)[0])
        target = mu1 * (1.0 + qb)
        info.update(expansion_slope=float(coef[0]), expansion_r2=r2, expansion_target=target,
                    t3rho_tail=float(t3rho[-1]), t3rho_drift=drift,
                    last_decade=[float(t[-1] / 10), float(t[-1])])
        summary.check("boundary radius linear in t (last decade)", r2 >= 0.999, r2, ">= 0.999")
        rel = abs(coef[0] / target - 1.0)
        summary.check("expansion slope vs mu1 (1 + q(1))", rel <= 0.05, rel, "<= 0.05 relative")
        summary.check("t^3 rho(centre) drift (last decade)", drift < 0.05, drift, "< 0.05")
    else:
        info.update(expansion_note="run shorter than a time decade; no linear fit")
    summary.add("radial", **info)
    flags = [row["apriori_flag"] for row in res.rows]
    summary.check("a priori flags never tripped", not any(flags), int(sum(flags)), "0 trips")


def _full3d(cfg, out, summary):
    from .dynamics import full3d_short_run, momentum_residual, trajectory_to_tau
    from .geometry import build_grid
    from .monitors import FitRefused, curl_residual, decay_fit

    p = cfg.params()
    A0, A1 = cfg.matrix("affine", "A0"), cfg.matrix("affine", "A1")
    n_steps = cfg.i("perturbation", "n_steps")
    dt = cfg.f("perturbation", "dt")
    grid = build_grid(*cfg.grid_shape())
    traj = trajectory_to_tau(p, A0, A1, n_steps * dt)
    M = cfg.matrix("perturbation", "M")
    ta, va = cfg.f("perturbation", "theta_amp"), cfg.f("perturbation", "v_amp")

    def th0(Y):
        return ta * Y @ M.T

    def V0(Y):
        rot = np.stack([-Y[..., 1], Y[..., 0], np.zeros_like(Y[..., 0])], axis=-1)
        return va * rot * (1.0 + Y[..., 2:3])

    field_on = cfg.b("perturbation", "field")
    res = full3d_short_run(traj, p, th0, V0, n_steps, cfg.stepper(), grid=grid, dt=dt,
                           N=cfg.i("monitors", "N"), record_every=1, field_on=field_on,
                           threads=cfg.threads, traj=traj)
    write_csv(out / "run.csv", RUN_COLUMNS, res.rows)
    _write_snapshots(cfg, out, res)
    info = {"steps": n_steps, "dt": dt, "grid": list(cfg.grid_shape()), "epsilon": res.rows[0]["S_norm"],
            "combined_growth": _combined_growth(res.reports), "refresh": cfg.i("stepper", "refresh"),
            "force_evaluations": res.force_evaluations, "mu0": res.reports[0].mu0, "log": res.log}
    if len(res.states) >= 3:
        curl = [float(curl_residual(res.states[::s], traj, p).max()) for s in (4, 2, 1)
                if len(res.states[::s]) >= 3]
        mom = momentum_residual(res.states, traj, p, field_on=field_on, threads=cfg.threads)
        info.update(curl_residual=curl, momentum_residual_max=float(mom.max()))
        if len(curl) >= 2 and curl[-1] > 0:
            orders = [float(np.log2(a / b)) for a, b in zip(curl, curl[1:])]
            info["curl_orders"] = orders
            summary.check("curl residual decreases under snapshot halving",
                          all(o > 1.0 for o in orders), orders, "order ~2")
    tau = [row["tau"] for row in res.rows]
    B = [row["B_norm"] for row in res.rows]
    try:
        fit = decay_fit(tau, B, window=(tau[0], tau[-1]))
        info.update(B_exponent=fit.exponent, B_exponent_stderr=fit.stderr, B_window=fit.window,
                    B_target=-2.0 * res.reports[0].mu0)
        summary.check("B^N decay exponent", fit.exponent <= -2 * res.reports[0].mu0 * 0.85,
                      fit.exponent, f"<= {-2 * res.reports[0].mu0 * 0.85:.4f}")
    except FitRefused as exc:
        info["B_fit"] = f"refused: {exc}"
    summary.add("full3d", **info)
    flags = [row["apriori_flag"] for row in res.rows]
    summary.check("a priori flags never tripped", not any(flags), int(sum(flags)), "0 trips")


def _norms(cfg, out, summary):
    from .affine import GasParams
    from .geometry import build_grid
    from .profiles import admissibility_checks

    grid = build_grid(*cfg.grid_shape())
    N = cfg.i("norms", "weight_N")
    rows = []
    for g in cfg.floats("norms", "gammas"):
        rep = admissibility_checks(GasParams(g, cfg.f("gas", "delta")), N, grid)
        rows.append({"gamma": g, "gamma_class": rep.gamma_class, "physical_vacuum": rep.physical_vacuum,
                     "weight_sum": rep.weight_sums[0], "weight_sum_refined": rep.weight_sums[1],
                     "refinement_ratio": rep.refinement_ratio, "divergent": rep.divergent})
        summary.add("admissibility", N=N, warnings=rep.warnings, **rows[-1])
        summary.check(f"physical vacuum (gamma = {g:.6g})", rep.physical_vacuum,
                      rep.max_radial_derivative, "< 0 on r >= 3/4")
    with open(out / "norms.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else _fmt(r[c]) for c in cols])


def _sweep(cfg, out, summary):
    from .affine import AffineIVP, GasParams, TrajectoryTooShortError, decompose_linear_part, integrate
    from .dynamics import run_radial, trajectory_to_tau

    p = cfg.params()
    A0, A1 = cfg.matrix("affine", "A0"), cfg.matrix("affine", "A1")
    rows = []
    for d in cfg.floats("sweep", "deltas"):
        t_end = 1e5
        for _ in range(4):
            traj = integrate(AffineIVP(GasParams(p.gamma, d, p.field_sign), A0, A1, t_end))
            try:
                rep = decompose_linear_part(traj)
                break
            except TrajectoryTooShortError as exc:
                t_end = 1.5 * exc.required_t_end
        else:
            raise RuntimeError("settling horizon not reached")
        rows.append({"delta": d, "b_minus_A1_over_delta": rep.b_minus_A1 / d, "mu1": rep.rates.mu1,
                     "slope": rep.slope if rep.slope is not None else float("nan"), "t_end": t_end})
    write_csv(out / "sweep_affine.csv", list(rows[0]), rows)
    ratios = [r["b_minus_A1_over_delta"] for r in rows]
    spread = max(ratios) / min(ratios)
    summary.check("|b - A1|/delta spread across delta", spread < 2.0, spread, "< 2")

    resp = []
    tau_max = cfg.f("sweep", "response_tau")
    iso = np.eye(3) * A0[0, 0], np.eye(3) * A1[0, 0]
    for d in cfg.floats("sweep", "response_deltas"):
        pd = GasParams(p.gamma, d, p.field_sign)
        traj = trajectory_to_tau(pd, *iso, tau_max)
        res = run_radial(None, pd, lambda r: 0 * r, lambda r: 0 * r, tau_max, cfg.stepper(),
                         n_r=cfg.i("grid", "n_radial"), N=cfg.i("monitors", "N"), record_every=2,
                         traj=traj)
        resp.append({"delta": d, "S_sup": res.rows[-1]["S_norm"]})
    write_csv(out / "sweep_response.csv", ["delta", "S_sup"], resp)
    slope = float(np.polyfit(np.log([r["delta"] for r in resp]), np.log([r["S_sup"] for r in resp]), 1)[0])
    target = 2.0 * p.alpha - 1.0
    summary.add("sweep", affine=rows, response=resp, response_slope=slope, response_target=target)
    summary.check("zero-data response log-slope", abs(slope - target) <= 0.3, slope,
                  f"{target:.3f} +/- 0.3")


def _criteria_selection(cfg):
    from .acceptance import CRITERIA

    sel = cfg.get("acceptance", "criteria").strip()
    if sel == "all":
        return sorted(CRITERIA)
    nums = [int(v) for v in _floats(sel, what="[acceptance] criteria")]
    for n in nums:
        if n not in CRITERIA:
            raise ConfigError(f"unknown acceptance criterion {n}")
    return nums


def _acceptance(cfg, out, summary):
    from .acceptance import run_criterion

    for n in _criteria_selection(cfg):
        r = run_criterion(n)
        print(r.line(), flush=True)
        summary.add("criterion", number=n, name=r.name, passed=r.passed, values=r.values)
        summary.check(f"criterion {n}: {r.name}", r.passed, r.detail.split("; runtime")[0].split(", runtime")[0],
                      "see criterion")


RUNNERS = {
    "affine": _affine,
    "field_validation": _field_validation,
    "radial": _radial,
    "full3d": _full3d,
    "norms": _norms,
    "sweep": _sweep,
    "acceptance": _acceptance,
}


def run_scenario(cfg):
    """Run the configured scenario; returns the exit status."""
    from .affine import IntegrationError, NonContractionError
    from .dynamics import AprioriViolation, VacuumDegeneracyError
    from .field import NonInjectiveMapError
    from .geometry import DegenerateMapError

    try:
        import numba

        numba.set_num_threads(max(1, min(cfg.threads, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:  # pragma: no cover
        pass
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.resolved_text())
    summary = Summary()
    summary.add("run", scenario=cfg.scenario)
    try:
        RUNNERS[cfg.scenario](cfg, out, summary)
    except (VacuumDegeneracyError, AprioriViolation, DegenerateMapError, NonInjectiveMapError,
            IntegrationError, NonContractionError) as exc:
        summary.add("abort", error=type(exc).__name__, message=str(exc))
        summary.write(out)
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    summary.write(out)
    for inv in summary.invariants:
        print(f"{'PASS' if inv['passed'] else 'FAIL'}  {inv['invariant']}: {inv['value']}")
    if cfg.scenario == "acceptance" and not summary.all_passed:
        return EXIT_ACCEPT
    return EXIT_OK


# -- report --------------------------------------------------------------------

def emit_report(run_dir):
    """Markdown summary of a finished run; raises FileNotFoundError listing missing files."""
    run_dir = Path(run_dir)
    need = ["summary.jsonl", "config.ini", "invariants.txt"]
    missing = [f for f in need if not (run_dir / f).exists()]
    if missing:
        raise FileNotFoundError("missing artifacts: " + ", ".join(missing))
    recs = [json.loads(line) for line in (run_dir / "summary.jsonl").read_text().splitlines() if line]
    scen = next((r["scenario"] for r in recs if r["kind"] == "run"), "?")
    lines = [f"# Run report: {scen}", "", f"Directory: `{run_dir}`", ""]
    lines += ["## Invariants", "", "| status | invariant | value | target |", "|---|---|---|---|"]
    for r in recs:
        if r["kind"] == "invariant":
            lines.append(f"| {'PASS' if r['passed'] else 'FAIL'} | {r['invariant']} | {_short(r['value'])} "
                         f"| {r['target']} |")
    lines.append("")
    for r in recs:
        kind = r["kind"]
        if kind == "affine":
            lines += ["## Affine motion", "", f"- energy drift: {r['energy_drift']:.3e}",
                      f"- max |det Lambda - 1|: {r['det_lambda_dev']:.3e}", ""]
        elif kind == "exact_linear":
            lines += [f"- sup |A - (A0 + t A1)| (delta = 0): {r['sup_error']:.3e}", ""]
        elif kind == "decomposition" and "slope" in r:
            lines += ["## Linear part", "", f"- mu1 = {r['mu1']:.6f}, mu0 = {r['mu0']:.6f}",
                      f"- |b - A1|/delta = {r['b_minus_A1_over_delta']:.6f}",
                      f"- fitted slope of |A''|: {_short(r['slope'])} (target {r['slope_target']:.4f})", ""]
        elif kind == "radial":
            lines += ["## Radial run", "", f"- steps: {r['steps']}, tau_max = {r['tau_max']}, "
                      f"t_end = {r['t_end']:.6g}", f"- sup S^N: {r['S_sup']:.3e} (bootstrap size "
                      f"delta^(2 alpha - 1) = {r['bootstrap_size']:.3e})",
                      f"- mass deviation: {r['mass_deviation']:.3e}"]
            lines.append(f"- epsilon (S^N at tau = 0): {r['epsilon']:.3e}")
            if r.get("combined_growth") is not None:
                lines.append(f"- max (S + e^(2 mu0 tau) B) / initial: {r['combined_growth']:.4f}")
            if "expansion_slope" in r:
                lines += [f"- linear expansion: slope {r['expansion_slope']:.6f} (target mu1 (1 + q(1)) = "
                          f"{r['expansion_target']:.6f}), R^2 {r['expansion_r2']:.8f}",
                          f"- t^3 rho(centre) tail: {r['t3rho_tail']:.6e} (drift {r['t3rho_drift']:.3%} "
                          f"over t in [{r['last_decade'][0]:.4g}, {r['last_decade'][1]:.4g}])"]
            lines += _flag_lines(r) + [""]
        elif kind == "full3d":
            lines += ["## Full 3-D run", "", f"- steps: {r['steps']}, dt = {r['dt']}, grid {r['grid']}, "
                      f"force refresh every {r['refresh']} steps ({r['force_evaluations']} evaluations)",
                      f"- epsilon (S^N at tau = 0): {r['epsilon']:.3e}"]
            if r.get("combined_growth") is not None:
                lines.append(f"- max (S + e^(2 mu0 tau) B) / initial: {r['combined_growth']:.4f}")
            if "curl_residual" in r:
                lines.append(f"- curl residual under snapshot halving: {_short(r['curl_residual'])}")
                lines.append(f"- momentum residual (max): {r['momentum_residual_max']:.3e}")
            if "B_exponent" in r:
                lines.append(f"- fitted B^N exponent: {r['B_exponent']:.4f} (target -2 mu0 = {r['B_target']:.4f})")
            lines += _flag_lines(r) + [""]
        elif kind == "admissibility":
            if not any(line.startswith("## Weight condition") for line in lines):
                lines += ["## Weight condition", "", "| gamma | class | ratio | divergent |", "|---|---|---|---|"]
            lines.append(f"| {r['gamma']:.6g} | {r['gamma_class']} | {r['refinement_ratio']:.4g} | {r['divergent']} |")
        elif kind == "sweep":
            lines += ["", "## Sweep", "", "| delta | abs(b - A1)/delta | slope |", "|---|---|---|"]
            for a in r["affine"]:
                lines.append(f"| {a['delta']:.3g} | {a['b_minus_A1_over_delta']:.6f} | {_short(a['slope'])} |")
            lines += ["", f"- zero-data response slope: {r['response_slope']:.4f} "
                      f"(target delta^(2 alpha - 1) exponent {r['response_target']:.3f})", ""]
        elif kind == "field_validation":
            lines += ["## Field validation", "", "| grid | Psi-bar(0) | div residual | curl residual |",
                      "|---|---|---|---|"]
            for lv in r["levels"]:
                lines.append(f"| {lv['n_radial']}x{lv['n_polar']}x{lv['n_azimuthal']} | "
                             f"{lv['psi_bar_center']:.12f} | {lv['div_norm']:.3e} | {lv['curl_norm']:.3e} |")
            lines.append("")
        elif kind == "criterion":
            pass
        elif kind == "abort":
            lines += ["## Numerical abort", "", f"- {r['error']}: {r['message']}", ""]
    text = "\n".join(lines).rstrip() + "\n"
    return text


def _flag_lines(r):
    log_ = r.get("log") or []
    if not log_:
        return ["- a priori flags: never tripped"]
    return ["- a priori flag history:"] + [f"  - {m}" for m in log_]


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="epflow", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    rp = sub.add_parser("run", help="run the scenario described by a config file")
    rp.add_argument("config")
    rp.add_argument("--out", help="output directory (overrides [run] out)")
    rp.add_argument("--threads", type=int, help="threads for the force convolution")
    pp = sub.add_parser("report", help="summarize a finished run directory")
    pp.add_argument("run_dir")
    sub.add_parser("defaults", help="print the reference configuration")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "defaults":
        print(default_config_text(), end="")
        return EXIT_OK
    if args.command == "report":
        try:
            text = emit_report(args.run_dir)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        (Path(args.run_dir) / "report.md").write_text(text)
        print(text, end="")
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.out, args.threads)
        return run_scenario(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
