"""Independent reference computations used by the tests.

Nothing here imports epflow.  Each oracle is a direct quadrature or a closed
form, written without the package's discretizations.
"""

import numpy as np
from scipy.integrate import quad, solve_ivp


def isotropic_scale(gamma, delta, a0, a1, t):
    """Scalar a(t) for A = a I: a'' = delta a^(2 - 3 gamma), integrated with Radau."""
    sol = solve_ivp(lambda s, u: [u[1], delta * u[0] ** (2.0 - 3.0 * gamma)], (0.0, max(t)),
                    [a0, a1], method="Radau", rtol=1e-12, atol=1e-14, t_eval=t)
    return sol.y[0]


def monatomic_trace(A0, A1, delta, t):
    """tr(A^T A)(t) at gamma = 5/3: the virial identity makes it an exact quadratic."""
    E = 0.5 * np.sum(A1 * A1) + 1.5 * delta * np.linalg.det(A0) ** (-2.0 / 3.0)
    return np.sum(A0 * A0) + 2.0 * np.sum(A0 * A1) * t + 2.0 * E * t * t


def _ellipsoid_axes(F, x):
    U, s, _ = np.linalg.svd(F)
    return U, U.T @ x, s * s


def uniform_ellipsoid_integral(Q, y):
    """int_B <Q(y - z), y - z>^(-1/2) dz for |y| <= 1 via the classical ellipsoid formula."""
    F = np.linalg.cholesky(Q).T  # F^T F = Q
    _, xp, a2 = _ellipsoid_axes(F, F @ y)

    def f(u):
        return (1.0 - np.sum(xp**2 / (a2 + u))) / np.sqrt(np.prod(a2 + u))

    return np.pi * quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]


def ferrers_gradient(x, F, k):
    """Gradient of int_{F B} k (1 - m^2) / det F / |x - x'| dx' for x inside F B.

    This is the potential of the parabolic (Ferrers n = 1) density; m is the
    ellipsoidal radius.  It corresponds to w^alpha with gamma = 2.
    """
    U, xp, a2 = _ellipsoid_axes(F, x)

    def m2(u):
        return np.sum(xp**2 / (a2 + u))

    def D(u):
        return np.sqrt(np.prod(a2 + u))

    g = np.array([quad(lambda u: (1.0 - m2(u)) * xp[i] / (a2[i] + u) / D(u), 0.0, np.inf,
                       epsabs=1e-13, epsrel=1e-12)[0] for i in range(3)])
    return U @ (-2.0 * np.pi * k * g)


def ferrers_potential(x, F, k):
    U, xp, a2 = _ellipsoid_axes(F, x)

    def f(u):
        return (1.0 - np.sum(xp**2 / (a2 + u))) ** 2 / np.sqrt(np.prod(a2 + u))

    return 0.5 * np.pi * k * quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]


def enclosed_mass(r, gamma):
    """4 pi int_0^r w^alpha s^2 ds by adaptive quadrature."""
    alpha = 1.0 / (gamma - 1.0)
    k = (gamma - 1.0) / (2.0 * gamma)
    return 4.0 * np.pi * quad(lambda s: (k * (1.0 - s * s)) ** alpha * s * s, 0.0, r,
                              epsabs=1e-14, epsrel=1e-13)[0]
