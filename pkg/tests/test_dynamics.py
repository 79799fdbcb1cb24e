import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from epflow.affine import GasParams, frame_at, frame_from_matrices
from epflow.dynamics import (AprioriViolation, PerturbationState, RadialGrid, StepperConfig,
                             VacuumDegeneracyError, apriori_flags, embed_radial, eulerian_reconstruct,
                             full3d_short_run, momentum_residual, perturbation_rhs, radial_eulerian_mass,
                             radial_rhs, run_radial, sound_speed, step, trajectory_to_tau)
from epflow.field import KernelSpec, force_field
from epflow.geometry import build_grid, flow_map_derivatives
from epflow.profiles import affine_density_velocity, radial_mass

P = GasParams(1.5, 0.01)


def q_profile(amp):
    return lambda r: amp * r * (1.0 - r * r / 3.0)


def zero(r):
    return 0.0 * r


def test_stepper_config_validation():
    for bad in (dict(cfl=0.0), dict(cfl=1.5), dict(order=3), dict(refresh=0), dict(mode="2d"),
                dict(max_dt=0.0)):
        with pytest.raises(ValueError):
            StepperConfig(**bad)


def test_sound_speed():
    fr = frame_from_matrices(2.0 * np.eye(3), np.eye(3))
    # c^2 = (1 + alpha) delta mu^(3 - 3 gamma) (gamma - 1)/(2 gamma)
    assert sound_speed(fr, P) == pytest.approx(np.sqrt(3 * 0.01 * 2.0**-1.5 / 6))


def test_zero_perturbation_is_fixed_without_field():
    rg = RadialGrid.build(8)
    fr = frame_from_matrices(1.7 * np.eye(3), 0.9 * np.eye(3))
    z = np.zeros(8)
    assert np.array_equal(radial_rhs(rg, z, z, fr, P, field_on=False), z)
    g = build_grid(6, 4, 8)
    th = np.zeros(g.shape + (3,))
    st = PerturbationState(0.0, th, th, g, flow_map_derivatives(g, theta=th))
    fr3 = frame_from_matrices(np.diag([1.2, 1.0, 0.8]), np.diag([1.0, 0.9, 1.1]))
    assert np.abs(perturbation_rhs(st, fr3, None, P, field_on=False)).max() == 0.0


def test_radial_rhs_matches_3d_rhs():
    # the same isotropic data stepped by the two discretizations
    rg = RadialGrid.build(8)
    q, V = q_profile(0.02)(rg.r), 0.01 * rg.r**3
    fr = frame_from_matrices(1.5 * np.eye(3), 1.1 * np.eye(3))
    st = PerturbationState(0.0, q, V, rg)
    g, th, v = embed_radial(st, n_theta=4, n_phi=8)
    fmd = flow_map_derivatives(g, theta=th)
    gf = force_field(g, th, fmd, KernelSpec.identity(), P)
    acc3 = perturbation_rhs(PerturbationState(0.0, th, v, g, fmd), fr, gf, P)
    acc1 = radial_rhs(rg, q, V, fr, P)
    e = g.Y / g.radius[..., None]
    assert np.abs(acc3 - acc1[:, None, None, None] * e).max() < 1e-8


def test_vacuum_degeneracy_detected():
    rg = RadialGrid.build(8)
    fr = frame_from_matrices(np.eye(3), np.eye(3))
    with pytest.raises(VacuumDegeneracyError):
        radial_rhs(rg, -rg.r, np.zeros(8), fr, P)


def test_radial_interpolation_parity():
    rg = RadialGrid.build(10)
    f = rg.r**3 - 0.5 * rg.r
    s = np.array([-0.9, -0.2, 0.0, 0.35, 1.0])
    assert_allclose(rg.interpolate(f, s, -1.0), s**3 - 0.5 * s, atol=1e-13)
    assert_allclose(rg.d_odd(f), 3 * rg.r**2 - 0.5, atol=1e-12)
    assert_allclose(rg.d_even(rg.r**2), 2 * rg.r, atol=1e-12)


def _final_q(order, dt, tau_max=1.0):
    traj = trajectory_to_tau(P, np.eye(3), np.eye(3), tau_max)
    cfg = StepperConfig(max_dt=dt, order=order, cfl=1.0)
    res = run_radial(None, P, q_profile(0.02), zero, tau_max, cfg, n_r=8, traj=traj, monitor=False,
                     record_every=10**6)
    return res.states[-1].theta


@pytest.mark.parametrize("order", [2, 4])
def test_time_convergence_order(order):
    ref = _final_q(order, 0.0125)
    e1 = np.abs(_final_q(order, 0.1) - ref).max()
    e2 = np.abs(_final_q(order, 0.05) - ref).max()
    assert np.log2(e1 / e2) == pytest.approx(order, abs=0.5)


def test_cfl_reduction_logged(caplog):
    traj = trajectory_to_tau(P, np.eye(3), np.eye(3), 1.0)
    rg = RadialGrid.build(8)
    st = PerturbationState(0.0, np.zeros(8), np.zeros(8), rg)
    with caplog.at_level(logging.WARNING, logger="epflow"):
        nxt = step(st, traj, StepperConfig(cfl=0.01), P, dt=0.5)
    assert "CFL" in caplog.text
    assert nxt.tau < 0.5


def test_radial_mass_conserved():
    tau_max = 2.0
    traj = trajectory_to_tau(P, np.eye(3), np.eye(3), tau_max)
    res = run_radial(None, P, q_profile(0.02), lambda r: 0.01 * r, tau_max, StepperConfig(), n_r=10,
                     traj=traj, monitor=False)
    m = np.array([row["mass"] for row in res.rows])
    assert_allclose(m, P.delta**P.alpha * radial_mass(1.0, P.gamma), rtol=1e-12)
    # and the mass is computed from the moving boundary, not the labels
    fr = frame_at(traj, res.rows[-1]["t"])
    assert radial_eulerian_mass(res.states[-1], fr, P) == pytest.approx(m[0], rel=1e-12)


def test_eulerian_reconstruction_of_affine_motion():
    A, Ad = np.diag([1.3, 1.0, 0.9]), np.diag([0.4, 0.5, 0.6])
    fr = frame_from_matrices(A, Ad)
    g = build_grid(6, 4, 8)
    th = np.zeros(g.shape + (3,))
    st = PerturbationState(0.0, th, th, g, flow_map_derivatives(g, theta=th))
    smp = eulerian_reconstruct(st, fr, P)
    ref = affine_density_velocity(fr, smp.x, P)
    assert_allclose(smp.rho, ref.rho, rtol=1e-12)
    assert_allclose(smp.u, ref.u, atol=1e-13)
    with pytest.raises(ValueError):
        eulerian_reconstruct(st, fr, P, labels=[0.0])


def test_apriori_violation_aborts():
    traj = trajectory_to_tau(P, np.eye(3), np.eye(3), 0.5)
    with pytest.raises(AprioriViolation):
        run_radial(None, P, lambda r: 0.5 * r, zero, 0.5, StepperConfig(), n_r=8, traj=traj,
                   monitor=False)
    res = run_radial(None, P, lambda r: 0.5 * r, zero, 0.2, StepperConfig(abort_on_apriori=False),
                     n_r=8, traj=traj, monitor=False)
    assert res.log and "a priori" in res.log[0]


def test_apriori_flags_zero():
    g = build_grid(6, 4, 8)
    th = np.zeros(g.shape + (3,))
    f = apriori_flags(g, th, flow_map_derivatives(g, theta=th))
    assert f.ok and f.theta_w2inf == 0.0 and f.jac_w1inf == 0.0


def test_radial_mode_requires_isotropy():
    traj = trajectory_to_tau(P, np.diag([1.1, 1.0, 0.9]), np.eye(3), 0.2)
    with pytest.raises(ValueError):
        run_radial(None, P, zero, zero, 0.2, StepperConfig(), n_r=8, traj=traj, monitor=False)


def test_dynamics_parameter_range():
    with pytest.raises(ValueError):
        run_radial(None, GasParams(5.0 / 3.0, 0.01), zero, zero, 0.2, StepperConfig())


def test_3d_run_against_radial():
    n_steps, dt = 4, 0.05
    traj = trajectory_to_tau(P, np.eye(3), np.eye(3), n_steps * dt)
    g = build_grid(8, 4, 8)
    qf = q_profile(0.02)

    def th0(Y):
        r = np.linalg.norm(Y, axis=-1, keepdims=True)
        return qf(r) * Y / r

    res3 = full3d_short_run(traj, P, th0, lambda Y: 0 * Y, n_steps, StepperConfig(mode="full_3d", refresh=1),
                            grid=g, dt=dt, traj=traj, monitor=False)
    res1 = run_radial(None, P, qf, zero, n_steps * dt, StepperConfig(max_dt=dt), n_r=8, traj=traj,
                      monitor=False)
    e = g.Y / g.radius[..., None]
    q1 = res1.states[-1].theta[:, None, None, None] * e
    assert np.abs(res3.states[-1].theta - q1).max() < 1e-8
    assert res3.force_evaluations == 4 * n_steps


def test_force_refresh_cadence():
    n_steps, dt = 6, 0.05
    traj = trajectory_to_tau(P, np.eye(3), np.eye(3), n_steps * dt)
    kw = dict(grid=build_grid(6, 4, 8), dt=dt, traj=traj, monitor=False)
    th0 = lambda Y: 0.01 * Y * Y[..., :1]  # noqa: E731
    a = full3d_short_run(traj, P, th0, lambda Y: 0 * Y, n_steps, StepperConfig(mode="full_3d", refresh=1), **kw)
    b = full3d_short_run(traj, P, th0, lambda Y: 0 * Y, n_steps,
                         StepperConfig(mode="full_3d", refresh=3), **kw)
    assert b.force_evaluations == 2
    # extrapolated forces stay close to the exact ones on this slow motion
    assert np.abs(a.states[-1].theta - b.states[-1].theta).max() < 1e-6


def test_momentum_residual_small():
    n_steps, dt = 6, 0.02
    traj = trajectory_to_tau(P, np.eye(3), np.diag([1.1, 1.0, 0.9]), n_steps * dt)
    V0 = lambda Y: 1e-3 * np.stack([-Y[..., 1], Y[..., 0], 0 * Y[..., 0]], -1)  # noqa: E731
    res = full3d_short_run(traj, P, lambda Y: 0 * Y, V0, n_steps, StepperConfig(mode="full_3d", refresh=1),
                           grid=build_grid(6, 4, 8), dt=dt, traj=traj, monitor=False)
    r = momentum_residual(res.states, traj, P)
    scale = np.sqrt(np.sum(res.states[-1].V ** 2))
    assert r.max() < 1e-3 * scale


def test_momentum_residual_decreases_under_step_halving():
    V0 = lambda Y: 1e-3 * np.stack([-Y[..., 1], Y[..., 0], 0 * Y[..., 0]], -1) * (1 + Y[..., 2:3])  # noqa: E731
    traj = trajectory_to_tau(P, np.eye(3), np.diag([1.2, 1.0, 0.8]), 0.4)
    res = []
    for dt, n in ((0.1, 4), (0.05, 8)):
        cfg = StepperConfig(mode="full_3d", refresh=1, max_dt=0.1)
        run = full3d_short_run(traj, P, lambda Y: 0 * Y, V0, n, cfg,
                               grid=build_grid(6, 4, 8), dt=dt, traj=traj, monitor=False)
        # compare at the common snapshot tau = 0.2
        res.append(momentum_residual(run.states, traj, P)[n // 2 - 1])
    # the centred V_tau stencil makes the residual second order
    assert res[0] / res[1] > 3.0


def test_anisotropic_zero_data_force_is_not_radial():
    from epflow.field import divcurl_residual

    g = build_grid(12, 6, 12)
    traj = trajectory_to_tau(P, np.eye(3), np.diag([1.2, 1.0, 0.8]), 1.0)
    Lam = frame_at(traj, traj.t_of_tau(1.0)).Lambda
    spec = KernelSpec(Lam)
    z = np.zeros(g.shape + (3,))
    fmd = flow_map_derivatives(g, theta=z)
    gf = force_field(g, None, fmd, spec, P)
    e = g.Y / g.radius[..., None]
    tangential = gf.G - np.sum(gf.G * e, -1, keepdims=True) * e
    assert np.abs(tangential).max() > 1e-3 * np.abs(gf.G).max()
    # the force is a gradient: its curl vanishes to quadrature accuracy
    assert divcurl_residual(g, gf, None, fmd, spec, P).curl_norm < 1e-6 * np.abs(gf.G).max()


def test_radial_force_sign():
    rg = RadialGrid.build(8)
    fr = frame_from_matrices(np.eye(3), np.eye(3))
    z = np.zeros(8)
    plus = radial_rhs(rg, z, z, fr, GasParams(1.5, 0.01, 1))
    minus = radial_rhs(rg, z, z, fr, GasParams(1.5, 0.01, -1))
    assert np.array_equal(plus, -minus)
