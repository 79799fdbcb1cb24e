import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.linalg import sqrtm

from epflow.affine import GasParams
from epflow.field import (KernelSpec, NonInjectiveMapError, SingularEvaluationError,
                          background_potential, ball_kernel_integral, divcurl_residual, force_field,
                          green_gradient, green_kernel, normal_reconstruction)
from epflow.geometry import build_grid, flow_map_derivatives
from oracles import enclosed_mass, ferrers_gradient, ferrers_potential, uniform_ellipsoid_integral

LAM = np.diag([1.3, 1.0, 1.0 / 1.3])
M = np.array([[0.3, 0.5, -0.2], [0.1, -0.4, 0.6], [0.2, 0.3, 0.1]])
GRID = build_grid(8, 4, 8)


def spd_det1():
    def make(v):
        B = np.array(v).reshape(3, 3)
        Q = np.eye(3) + 0.5 * (B + B.T)
        return Q / np.cbrt(np.linalg.det(Q))
    return st.lists(st.floats(-0.4, 0.4), min_size=9, max_size=9).map(make)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(np.diag([2.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        KernelSpec(np.array([[1.0, 0.5, 0], [0, 1.0, 0], [0, 0, 1.0]]))
    assert_allclose(KernelSpec(LAM).Lambda_inv, np.linalg.inv(LAM))


def test_kernel_and_gradient():
    spec = KernelSpec(LAM)
    y = np.array([0.3, -0.2, 0.4])
    assert green_kernel(spec, y) == pytest.approx(1.0 / np.sqrt(y @ np.linalg.inv(LAM) @ y))
    h = 1e-6
    fd = [(green_kernel(spec, y + h * e) - green_kernel(spec, y - h * e)) / (2 * h) for e in np.eye(3)]
    assert_allclose(green_gradient(spec, y), fd, rtol=1e-8)
    with pytest.raises(SingularEvaluationError):
        green_kernel(spec, np.zeros(3))
    with pytest.raises(SingularEvaluationError):
        green_gradient(spec, np.zeros((2, 3)))


@settings(max_examples=20, deadline=None)
@given(spd_det1(), st.lists(st.floats(-0.55, 0.55), min_size=3, max_size=3))
def test_ball_integral_against_ellipsoid_formula(Q, y):
    y = np.array(y)
    val, grad = ball_kernel_integral(Q, y)
    assert val == pytest.approx(uniform_ellipsoid_integral(Q, y), rel=1e-10)
    h = 1e-5
    fd = [(ball_kernel_integral(Q, y + h * e)[0] - ball_kernel_integral(Q, y - h * e)[0]) / (2 * h)
          for e in np.eye(3)]
    assert_allclose(grad, fd, atol=1e-7)


def test_background_centre_value():
    # Psi-bar(0) = int (1/4)(1 - r^2)/r = pi/4 at gamma = 2
    p = GasParams(2.0, 1.0)
    val = background_potential(GRID, p, KernelSpec.identity(), np.zeros((1, 3)))
    assert val[0] == pytest.approx(np.pi / 4, abs=1e-13)


@pytest.mark.parametrize("gamma", [2.0, 1.5, 4.0 / 3.0])
def test_isotropic_force_is_newtonian(gamma):
    # Lambda = I, no displacement: G = c M(r)/r^2 y/|y|
    g = build_grid(10, 4, 8)
    p = GasParams(gamma, 1.0)
    gf = force_field(g, None, None, KernelSpec.identity(), p)
    r = g.r
    Mr = np.array([enclosed_mass(ri, gamma) for ri in r])
    expect = (Mr / r**3)[:, None, None, None] * g.Y
    assert_allclose(gf.G, expect, atol=1e-13)
    assert not gf.displaced


def test_anisotropic_background_against_ferrers():
    g = build_grid(12, 6, 12)
    p = GasParams(2.0, 1.0)
    S = np.real(sqrtm(np.linalg.inv(LAM)))
    gf = force_field(g, None, None, KernelSpec(LAM), p)
    for idx in [(0, 0, 0), (5, 2, 3), (11, 5, 11)]:
        y = g.Y[idx]
        assert_allclose(gf.G[idx], -S.T @ ferrers_gradient(S @ y, S, 0.25), atol=2e-6)
        assert gf.Psi[idx] == pytest.approx(-ferrers_potential(S @ y, S, 0.25), abs=1e-6)


def test_displaced_force_converges_to_ferrers():
    # theta = eps M y moves the body onto the ellipsoid (I + eps M) B, whose
    # gamma = 2 potential is known in closed form
    p = GasParams(2.0, 1.0)
    spec = KernelSpec(LAM)
    S = np.real(sqrtm(np.linalg.inv(LAM)))
    eps = 0.05
    F = S @ (np.eye(3) + eps * M)
    errs = []
    for shape in [(8, 4, 8), (16, 8, 16)]:
        g = build_grid(*shape)
        th = eps * g.Y @ M.T
        gf = force_field(g, th, flow_map_derivatives(g, theta=th), spec, p)
        idx = [(0, 0, 0), (shape[0] // 2, 1, 3), (shape[0] - 1, shape[1] - 1, shape[2] - 1)]
        errs.append(max(np.abs(gf.G[i] + S.T @ ferrers_gradient(F @ g.Y[i], F, 0.25)).max() for i in idx))
        assert gf.displaced
    assert errs[1] < 3e-4
    assert errs[1] < 0.5 * errs[0]


def test_sign_flips_force():
    p, q = GasParams(1.5, 1.0, 1), GasParams(1.5, 1.0, -1)
    th = 0.03 * GRID.Y @ M.T
    fmd = flow_map_derivatives(GRID, theta=th)
    a = force_field(GRID, th, fmd, KernelSpec(LAM), p)
    b = force_field(GRID, th, fmd, KernelSpec(LAM), q)
    assert np.array_equal(a.G, -b.G)


def test_backends_and_threads_agree():
    p = GasParams(1.5, 1.0)
    th = 0.04 * np.sin(GRID.Y) @ M.T
    fmd = flow_map_derivatives(GRID, theta=th)
    spec = KernelSpec(LAM)
    ref = force_field(GRID, th, fmd, spec, p, backend="numpy")
    a = force_field(GRID, th, fmd, spec, p, threads=1)
    b = force_field(GRID, th, fmd, spec, p, threads=4)
    assert np.array_equal(a.G, b.G) and np.array_equal(a.Psi, b.Psi)
    assert_allclose(a.G, ref.G, atol=1e-12)
    assert_allclose(a.Psi, ref.Psi, atol=1e-12)


def test_precomputed_background_reused():
    p = GasParams(1.5, 1.0)
    spec = KernelSpec(LAM)
    bg = background_potential(GRID, p, spec, GRID.Y.reshape(-1, 3), gradient=True)
    a = force_field(GRID, None, None, spec, p)
    b = force_field(GRID, None, None, spec, p, background=(bg[0], bg[1]))
    assert_allclose(a.G, b.G, atol=1e-15)


def test_non_injective_map_rejected():
    th = np.zeros(GRID.shape + (3,))
    th[0, 0, 0] = GRID.Y[0, 0, 1] - GRID.Y[0, 0, 0]
    fmd = flow_map_derivatives(GRID, theta=np.zeros_like(th))
    with pytest.raises(NonInjectiveMapError):
        force_field(GRID, th, fmd, KernelSpec.identity(), GasParams(1.5, 1.0))


def test_divcurl_identities_isotropic():
    p = GasParams(1.5, 1.0)
    g = build_grid(12, 6, 12)
    gf = force_field(g, None, None, KernelSpec.identity(), p, want_psi=False)
    fmd = flow_map_derivatives(g, theta=np.zeros(g.shape + (3,)))
    r = divcurl_residual(g, gf, None, fmd, KernelSpec.identity(), p)
    assert r.div_norm < 1e-11 and r.curl_norm < 1e-11


def test_normal_reconstruction_polynomial():
    Y = GRID.Y
    G = np.stack([Y[..., 0] * Y[..., 1], Y[..., 2] ** 2, Y[..., 0] ** 3 - Y[..., 1]], axis=-1)
    rep = normal_reconstruction(GRID, G, KernelSpec(LAM))
    assert rep.max_error < 1e-11
