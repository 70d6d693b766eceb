"""Independent reference computations used by the tests.

Nothing here imports the engine's numerical routines: each oracle takes a
different route to the same quantity.
"""
import numpy as np
from scipy.special import pbdv


def kron_sylvester(K0, K1, Y):
    """Solve ``K0 X - X K1 = Y`` through the ``(pq) x (pq)`` Kronecker system."""
    p, q = Y.shape
    A = np.kron(np.eye(q), K0) - np.kron(K1.T, np.eye(p))
    x = np.linalg.solve(A, Y.flatten(order="F"))
    return x.reshape((p, q), order="F")


def random_unitary(rng, n):
    Z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def random_hermitian(rng, eigenvalues):
    U = random_unitary(rng, len(eigenvalues))
    return U @ np.diag(eigenvalues) @ U.conj().T


def random_gapped_problem(rng, max_dim=16, min_delta=0.1):
    """Hermitian ``K0``, ``K1`` with ``max spec K0 + delta <= min spec K1`` and a random ``Y``."""
    p, q = rng.integers(1, max_dim + 1, size=2)
    delta = float(rng.uniform(min_delta, 1.0))
    lo = float(rng.uniform(-2, 2))
    lam = lo + rng.uniform(0, 1.5, size=p)
    start = lam.max() + delta
    mu = start + rng.uniform(0, 1.5, size=q)
    mu[0] = start
    K0 = random_hermitian(rng, lam)
    K1 = random_hermitian(rng, mu)
    Y = rng.normal(size=(p, q)) + 1j * rng.normal(size=(p, q))
    return K0, K1, Y, delta


def two_by_two_lower_projector(a, b, t):
    """Projector onto the lower eigenvector of ``[[a, t], [t, b]]`` (real ``t``), closed form."""
    theta = 0.5 * np.arctan2(2 * t, b - a)
    v = np.array([np.cos(theta), -np.sin(theta)])
    return np.outer(v, v)


def hermitian_2x2_lower_projector(a, b, c):
    """Node-wise projector onto the lower eigenvalue of ``[[a, c], [conj c, b]]``."""
    m = (a + b) / 2
    r = np.sqrt(((a - b) / 2) ** 2 + np.abs(c) ** 2)
    lo = m - r
    # (H - hi) / (lo - hi) is the lower projector
    hi = m + r
    P = np.empty(np.shape(a) + (2, 2), dtype=complex)
    P[..., 0, 0] = (a - hi) / (lo - hi)
    P[..., 1, 1] = (b - hi) / (lo - hi)
    P[..., 0, 1] = c / (lo - hi)
    P[..., 1, 0] = np.conj(c) / (lo - hi)
    return P


def parabolic_cylinder_levels(gamma, sigma, n, step=0.005):
    """Half-line levels by bracketing the boundary condition on ``D_nu``."""
    from scipy.optimize import brentq
    z = -np.sqrt(2) * sigma

    def f(mu):
        d, dp = pbdv((mu - 1) / 2, z)
        return d if np.isinf(gamma) else np.sqrt(2) * dp - gamma * d

    grid = np.arange(-3 + 0.0371 * step, 4 * n + 6 + sigma ** 2, step)
    vals = [f(m) for m in grid]
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa * fb < 0:
            roots.append(brentq(f, a, b, xtol=1e-14))
            if len(roots) == n:
                break
    return np.array(roots)
