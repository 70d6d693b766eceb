"""Concrete Hamiltonians: magnetic-well fiber symbols, the De Gennes operator, test families."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import comb, factorial
from typing import Callable

import numpy as np
import sympy
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq, minimize, minimize_scalar
from scipy.special import pbdv

from .errors import (BracketError, ConvergenceError, FlatCurveError, GapError, WindowError)
from .projector import GapSpec
from .quantize import FockLadder
from .symbols import FormalSymbol, PhaseSpaceGrid, symbol_from_functions

Q1, Q2 = sympy.symbols("q1 q2", real=True)
X1, XI1, S = sympy.symbols("x1 xi1 s", real=True)
MAX_TAYLOR = 4


# --- magnetic well ------------------------------------------------------

def _parse(expr: str | float | sympy.Expr) -> sympy.Expr:
    if isinstance(expr, sympy.Expr):
        return expr
    return sympy.sympify(str(expr), locals={"q1": Q1, "q2": Q2})


def _vectorize(fn: Callable, expr: sympy.Expr) -> Callable:
    def wrapped(x2, xi2):
        x2 = np.asarray(x2, dtype=float)
        xi2 = np.asarray(xi2, dtype=float)
        out = np.asarray(fn(x2, xi2), dtype=float)
        return np.broadcast_to(out, np.broadcast(x2, xi2).shape).copy()
    wrapped.expr = expr
    return wrapped


@dataclass(frozen=True)
class MagneticWellSpec:
    """Field data of the normal-form magnetic operator.

    ``B``, ``V`` and ``alpha`` are expressions in ``q1, q2``; on the base phase
    space they are evaluated at ``q1 = xi2``, ``q2 = x2``.  ``J`` is the Taylor
    order in ``sqrt(h)``.
    """

    B: str = "1 + (q1**2 + q2**2)/4"
    V: str = "0"
    alpha: str = "0"
    J: int = 2
    b0: float | None = None

    def __post_init__(self):
        if not 0 <= self.J <= MAX_TAYLOR:
            raise ValueError(f"Taylor order J={self.J} outside 0..{MAX_TAYLOR}")

    @cached_property
    def exprs(self) -> dict:
        return {"B": _parse(self.B), "V": _parse(self.V), "alpha": _parse(self.alpha)}

    def function(self, name: str) -> Callable:
        """Vectorized ``f(x2, xi2)`` for ``B``, ``V``, ``alpha`` or ``mu1 = B + V``."""
        e = self.exprs
        expr = e["B"] + e["V"] if name == "mu1" else e[name]
        fn = sympy.lambdify((Q2, Q1), expr, "numpy")
        return _vectorize(fn, expr)

    def check(self, grid: PhaseSpaceGrid) -> dict:
        """Validate positivity of ``B`` and a unique interior minimum of ``B + V``."""
        X, XI = grid.mesh()
        B = self.function("B")(X, XI)
        b0 = float(B.min()) if self.b0 is None else self.b0
        if b0 <= 0 or B.min() < b0 - 1e-12:
            raise ValueError(f"field bound violated: min B = {B.min():.4g}, b0 = {b0}")
        mu = self.function("mu1")(X, XI)
        i = np.unravel_index(np.argmin(mu), mu.shape)
        if i[0] in (0, grid.n_x - 1) or i[1] in (0, grid.n_xi - 1):
            raise ValueError("minimum of B + V sits on the grid boundary")
        flat = np.sum(mu <= mu[i] + 1e-12)
        if flat > 1:
            raise ValueError("minimum of B + V is not unique on the grid")
        return {"b0": b0, "mu0": float(mu[i]), "argmin": (float(X[i]), float(XI[i]))}


def _taylor(expr: sympy.Expr, order: int) -> sympy.Expr:
    """``f(q1 + s x1, q2 + s xi1)`` expanded to ``s**order``."""
    out = sympy.Integer(0)
    for k in range(order + 1):
        term = sympy.Integer(0)
        for i in range(k + 1):
            d = sympy.diff(expr, Q1, i, Q2, k - i) if k else expr
            term += comb(k, i) * X1 ** i * XI1 ** (k - i) * d
        out += S ** k * term / factorial(k)
    return out


@dataclass(frozen=True)
class FiberPolynomialSymbol:
    """``sum h**(n/2) c_{n,a,b}(x2, xi2) x1**a xi1**b`` with vectorized coefficients.

    ``terms`` is a list of ``(n, a, b, c)``.
    """

    terms: list
    J: int
    q0: int = 2

    def degree(self, n: int | None = None) -> int:
        return max((a + b for n_, a, b, _ in self.terms if n is None or n_ == n), default=0)

    def orders(self) -> list[int]:
        return sorted({n for n, *_ in self.terms})

    def fiber_matrices(self, x2, xi2, ladder: FockLadder, n: int) -> np.ndarray:
        """Ladder matrix of the ``h**(n/2)`` coefficient at the given base points."""
        x2 = np.asarray(x2, float)
        xi2 = np.asarray(xi2, float)
        shape = np.broadcast(x2, xi2).shape
        out = np.zeros(shape + (ladder.m, ladder.m), dtype=complex)
        for n_, a, b, fn in self.terms:
            if n_ == n:
                out += fn(x2, xi2)[..., None, None] * ladder.monomial(a, b)
        return out

    def to_formal(self, grid: PhaseSpaceGrid, ladder: FockLadder, K=None) -> FormalSymbol:
        """Formal symbol on the base grid with Fock-matrix coefficients (lattice 1/2)."""
        K = Fraction(self.J, 2) if K is None else Fraction(K)
        X, XI = grid.mesh()
        terms = {}
        for n in self.orders():
            e = Fraction(n, 2)
            if e <= K:
                terms[e] = self.fiber_matrices(X, XI, ladder, n)
        return FormalSymbol(grid, terms, K, 2, (ladder.m, ladder.m))


def magnetic_well_symbol(spec: MagneticWellSpec) -> FiberPolynomialSymbol:
    """Taylor expansion in ``sqrt(h)`` of the normal-form symbol.

    The symbol is ``B(z)**2 xi1**2 + (x1 + alpha(z) xi1)**2 + V(z) + h W(z)``
    with ``z = (xi2 + sqrt(h) x1, x2 + sqrt(h) xi1)`` and
    ``W = (d_q1 B)**2 / 4 + (d_q1 alpha)**2 / 4``.  The ``h**(n/2)`` coefficient
    is a polynomial of degree ``<= n + 2`` in ``(x1, xi1)``.
    """
    e = spec.exprs
    J = spec.J
    B, V, al = e["B"], e["V"], e["alpha"]
    W = (sympy.diff(B, Q1) ** 2 + sympy.diff(al, Q1) ** 2) / 4
    full = (_taylor(B ** 2, J) * XI1 ** 2 + X1 ** 2 + 2 * X1 * XI1 * _taylor(al, J)
            + _taylor(al ** 2, J) * XI1 ** 2 + _taylor(V, J))
    if J >= 2:
        full += S ** 2 * _taylor(W, J - 2)
    poly = sympy.Poly(sympy.expand(full), S, X1, XI1)
    terms = []
    for (n, a, b), coef in sorted(poly.terms()):
        if n > J:
            continue
        coef = sympy.simplify(coef)
        if coef == 0:
            continue
        fn = sympy.lambdify((Q2, Q1), coef, "numpy")
        terms.append((int(n), int(a), int(b), _vectorize(fn, coef)))
    return FiberPolynomialSymbol(terms, J)


@dataclass(frozen=True)
class HarmonicPrediction:
    """Two-term expansion ``lambda_j = mu0 h + ((2j - 1) c0 + c1) h**2``."""

    z_star: tuple
    mu0: float
    c0: float
    c1: float

    def eigenvalue(self, j: int, h: float) -> float:
        return self.mu0 * h + ((2 * j - 1) * self.c0 + self.c1) * h ** 2


def harmonic_oracle(spec: MagneticWellSpec, fock_m: int = 40,
                    start: tuple[float, float] = (0.0, 0.0)) -> HarmonicPrediction:
    """Independent prediction of the low eigenvalues from data at the well bottom.

    ``c0 = sqrt(det Hess mu1) / 2`` is the harmonic frequency of the lowest
    band ``mu1 = B + V``; ``c1`` is the ground-state energy shift of the fiber
    problem at order ``h``: first order in the ``h`` coefficient plus second
    order in the ``sqrt(h)`` coefficient.
    """
    e = spec.exprs
    mu = e["B"] + e["V"]
    f = sympy.lambdify(((Q2, Q1),), mu, "numpy")
    grad = sympy.lambdify(((Q2, Q1),), [sympy.diff(mu, Q2), sympy.diff(mu, Q1)], "numpy")
    res = minimize(lambda z: float(f(z)), np.asarray(start, float),
                   jac=lambda z: np.asarray(grad(z), float), method="BFGS",
                   options={"gtol": 1e-12})
    x2, xi2 = (float(v) for v in res.x)
    hess = sympy.hessian(mu, (Q2, Q1)).subs({Q2: x2, Q1: xi2})
    Hm = np.array(hess.evalf(), dtype=float)
    det = float(np.linalg.det(Hm))
    if det <= 0 or Hm[0, 0] <= 0:
        raise FlatCurveError("minimum of B + V is degenerate")
    c0 = np.sqrt(det) / 2
    sym = magnetic_well_symbol(MagneticWellSpec(spec.B, spec.V, spec.alpha, J=max(spec.J, 2)))
    lad = FockLadder(fock_m)
    P0 = sym.fiber_matrices(x2, xi2, lad, 0)
    P1 = sym.fiber_matrices(x2, xi2, lad, 1)
    P2 = sym.fiber_matrices(x2, xi2, lad, 2)
    E, U = np.linalg.eigh(P0)
    u0 = U[:, 0]
    first = np.real(np.vdot(u0, P2 @ u0))
    amps = U[:, 1:].conj().T @ (P1 @ u0)
    second = float(np.sum(np.abs(amps) ** 2 / (E[1:] - E[0])))
    return HarmonicPrediction((x2, xi2), float(res.fun), float(c0), float(first - second))


# --- De Gennes ----------------------------------------------------------

DIRICHLET = float("inf")


@dataclass(frozen=True)
class DeGennesModel:
    """``-u'' + (t - sigma)**2 u`` on the half line with ``u'(0) = gamma u(0)``.

    ``gamma = inf`` selects the Dirichlet condition.  ``t_max`` defaults to
    ``max(sigma, 0) + 10``.
    """

    gamma: float
    sigma: float
    t_max: float | None = None
    n_t: int = 400

    def __post_init__(self):
        if self.n_t < 400:
            raise ValueError("n_t must be at least 400")
        if self.t_max is not None and self.t_max < self.sigma + 8:
            raise ValueError("t_max must exceed sigma + 8")

    @property
    def length(self) -> float:
        return self.t_max if self.t_max is not None else max(self.sigma, 0.0) + 10.0

    @property
    def dirichlet(self) -> bool:
        return np.isinf(self.gamma)


def _fd_levels(model: DeGennesModel, n: int, n_levels: int, vectors: bool = False):
    L = model.length
    dt = L / n
    if model.dirichlet:
        t = dt * np.arange(1, n)
        d = 2 / dt ** 2 + (t - model.sigma) ** 2
        e = -np.ones(n - 2) / dt ** 2
        scale = None
    else:
        t = dt * np.arange(n)
        d = 2 / dt ** 2 + (t - model.sigma) ** 2
        d[0] += 2 * model.gamma / dt
        e = -np.ones(n - 1) / dt ** 2
        # ghost node u_{-1} = u_1 - 2 dt gamma u_0, symmetrized by scaling u_0
        e[0] = -np.sqrt(2) / dt ** 2
        scale = np.ones(n)
        scale[0] = np.sqrt(2)
    out = eigh_tridiagonal(d, e, select="i", select_range=(0, n_levels - 1),
                           eigvals_only=not vectors)
    if not vectors:
        return out, None, t
    w, V = out
    if scale is not None:
        V = V * scale[:, None]
    V = V / np.sqrt(np.sum(np.abs(V) ** 2, axis=0) * dt)
    return w, V, t


@dataclass(frozen=True)
class DeGennesLevels:
    mu: np.ndarray
    t: np.ndarray | None
    modes: np.ndarray | None
    n_t: int
    change: float


def degennes_eigen(model: DeGennesModel, n_levels: int = 2, *, tol: float = 1e-8,
                   max_refine: int = 10, vectors: bool = False) -> DeGennesLevels:
    """Lowest eigenvalues by second-order finite differences and Richardson extrapolation.

    The grid is doubled from ``model.n_t`` until two successive extrapolated
    values differ by less than ``tol``.
    """
    n = model.n_t
    prev_raw, _, _ = _fd_levels(model, n, n_levels)
    prev_ext = None
    for _ in range(max_refine):
        n *= 2
        raw, _, _ = _fd_levels(model, n, n_levels)
        ext = (4 * raw - prev_raw) / 3
        if prev_ext is not None:
            change = float(np.max(np.abs(ext - prev_ext)))
            if change < tol:
                t = modes = None
                if vectors:
                    _, modes, t = _fd_levels(model, n, n_levels, vectors=True)
                return DeGennesLevels(ext, t, modes, n, change)
        prev_raw, prev_ext = raw, ext
    raise ConvergenceError(f"De Gennes levels not converged to {tol} after {max_refine} refinements")


def degennes_shooting(gamma: float, sigma: float, n_levels: int = 2, mu_max: float | None = None,
                      step: float = 0.01) -> np.ndarray:
    """Eigenvalues from the boundary condition on the decaying parabolic-cylinder solution.

    ``u(t) = D_nu(sqrt 2 (t - sigma))`` with ``nu = (mu - 1)/2``; roots of
    ``sqrt 2 D_nu'(-sqrt 2 sigma) - gamma D_nu(-sqrt 2 sigma)`` (or of ``D_nu``
    for Dirichlet) are bracketed on a mu scan and refined with Brent's method.
    """
    z = -np.sqrt(2) * sigma

    def f(mu):
        d, dp = pbdv((mu - 1) / 2, z)
        if np.isinf(gamma):
            return d
        return np.sqrt(2) * dp - gamma * d

    mu_max = mu_max if mu_max is not None else 4 * n_levels + 4 + sigma ** 2
    lo = min(-1.0 - abs(gamma) ** 2, -1.0) if not np.isinf(gamma) else 0.0
    # offset the scan so that no node lands on a root by accident
    grid = np.arange(lo + 0.123 * step, mu_max, step)
    vals = np.array([f(m) for m in grid])
    roots = []
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if np.isfinite(fa) and np.isfinite(fb) and fa * fb < 0:
            roots.append(brentq(f, a, b, xtol=1e-14, rtol=1e-14))
            if len(roots) == n_levels:
                return np.array(roots)
    raise BracketError(f"found only {len(roots)} roots below mu={mu_max}")


FLAT_DEPTH = 1e-6


@dataclass(frozen=True)
class DispersionMinimum:
    theta: float
    sigma: float
    curvature: float


def _mu_n(gamma, n, tol):
    def g(sigma):
        return float(degennes_eigen(DeGennesModel(gamma, sigma), n, tol=tol).mu[n - 1])
    return g


def dispersion_minimum(gamma: float, n: int = 1, *, sigma_range=(-1.0, 6.0), n_scan: int = 36,
                       tol: float = 1e-9) -> DispersionMinimum:
    """Minimum of ``sigma -> mu_n(gamma, sigma)``.

    A coarse scan brackets the minimum and a golden-section search refines it.

    Raises
    ------
    FlatCurveError
        if the scan minimum sits at the end of the range (monotone curve, no
        minimum) or the curvature estimate is not positive.
    BracketError
        if the critical value falls outside ``(2n - 3, 2n - 1)``.
    """
    g = _mu_n(gamma, n, 1e-7)
    sig = np.linspace(*sigma_range, n_scan)
    vals = np.array([g(s) for s in sig])
    k = int(np.argmin(vals))
    depth = min(vals[0], vals[-1]) - vals[k]
    if k == 0 or k == len(sig) - 1 or depth < FLAT_DEPTH:
        raise FlatCurveError(f"mu_{n}(gamma={gamma}, .) has no resolvable interior minimum on "
                             f"{sigma_range} (depth {depth:.2g})")
    g_fine = _mu_n(gamma, n, tol)
    try:
        res = minimize_scalar(g_fine, bracket=(sig[k - 1], sig[k], sig[k + 1]), method="golden",
                              tol=1e-8)
    except ValueError as exc:
        raise BracketError(str(exc)) from exc
    s0, th = float(res.x), float(res.fun)
    ds = 1e-2
    curv = (g_fine(s0 + ds) - 2 * th + g_fine(s0 - ds)) / ds ** 2
    if not curv > 0:
        raise FlatCurveError(f"non-positive curvature {curv:.3g} at the minimum")
    if not 2 * n - 3 < th < 2 * n - 1:
        raise BracketError(f"critical value {th:.6g} outside ({2 * n - 3}, {2 * n - 1})")
    return DispersionMinimum(th, s0, float(curv))


def band_threshold(gamma: float, n: int, **kw) -> float:
    """``Theta^[n-1](gamma)`` or, for a monotone curve, its infimum ``2n - 1``."""
    try:
        return dispersion_minimum(gamma, n, **kw).theta
    except FlatCurveError:
        return float(2 * n - 1)


def count_bands(gamma: float, a: float, b: float, threshold: Callable | None = None) -> int:
    """Number of dispersion curves whose range meets ``[a, b]``.

    ``[a, b]`` must sit inside ``(2n - 3, 2n - 1)`` for some ``n >= 1``; the
    answer is ``n`` if ``b >= Theta^[n-1](gamma)`` and ``n - 1`` otherwise.
    """
    if not a <= b:
        raise ValueError("empty window")
    n = int(np.floor((a + 3) / 2))
    if n < 1 or not (2 * n - 3 < a and b < 2 * n - 1):
        raise WindowError(f"[{a}, {b}] straddles a threshold 2n - 1")
    th = (threshold or band_threshold)(gamma, n)
    return n if b >= th else n - 1


# --- small analytic test families ---------------------------------------

def smooth_two_level(grid: PhaseSpaceGrid, coupling: float = 0.2, K=2) -> tuple[FormalSymbol, GapSpec]:
    """``H0 = diag(1 + 0.3 sin x cos xi, -1)``, ``H1 = g sigma_x`` with a Gaussian ``g``; upper band."""
    def H0(x, k):
        z = np.zeros(x.shape + (2, 2))
        z[..., 0, 0] = 1 + 0.3 * np.sin(x) * np.cos(k)
        z[..., 1, 1] = -1
        return z

    def H1(x, k):
        g = coupling * np.exp(-x ** 2 - k ** 2)
        z = np.zeros(x.shape + (2, 2))
        z[..., 0, 1] = g
        z[..., 1, 0] = g
        return z

    return symbol_from_functions(grid, {0: H0, 1: H1}, K), GapSpec.from_window(0.0, 2.0, 0.5)


def rotating_two_level(grid: PhaseSpaceGrid, eps: float = 0.3, K=2) -> tuple[FormalSymbol, GapSpec]:
    """Periodic 2x2 family with a moving eigenbasis, complex coupling and a first-order term."""
    def H0(x, k):
        z = np.zeros(x.shape + (2, 2), dtype=complex)
        z[..., 0, 0] = np.sin(x)
        z[..., 1, 1] = 3 + np.cos(k)
        z[..., 0, 1] = eps + 0.2j * np.cos(x + k)
        z[..., 1, 0] = np.conj(z[..., 0, 1])
        return z

    def H1(x, k):
        z = np.zeros(x.shape + (2, 2))
        z[..., 0, 0] = np.sin(x + k)
        z[..., 0, 1] = np.cos(k)
        z[..., 1, 0] = np.cos(k)
        return z

    return symbol_from_functions(grid, {0: H0, 1: H1}, K), GapSpec.from_window(-1.5, 1.5, 0.3)


def gap_family(grid: PhaseSpaceGrid, delta: float, K=1) -> tuple[FormalSymbol, GapSpec]:
    """``H0 = xi Id + [[x, delta/2], [delta/2, -x]]``; gap ``>= delta`` at every node; upper band."""
    def H0(x, k):
        z = np.zeros(x.shape + (2, 2))
        z[..., 0, 0] = k + x
        z[..., 1, 1] = k - x
        z[..., 0, 1] = delta / 2
        z[..., 1, 0] = delta / 2
        return z

    return symbol_from_functions(grid, {0: H0}, K), GapSpec.from_bands(1, 1, 0.9 * delta)


def three_level(grid: PhaseSpaceGrid, K=1) -> FormalSymbol:
    """Smooth 3x3 symbol with levels near 0, 2, 4 and x, xi dependent couplings."""
    def H0(x, k):
        z = np.zeros(x.shape + (3, 3), dtype=complex)
        z[..., 0, 0] = 0.3 * np.sin(x)
        z[..., 1, 1] = 2 + 0.3 * np.cos(k)
        z[..., 2, 2] = 4 + 0.2 * np.sin(x + k)
        z[..., 0, 1] = 0.2 * np.cos(x - k) + 0.1j * np.sin(k)
        z[..., 1, 2] = 0.2 * np.sin(x) * np.cos(k)
        z[..., 0, 2] = 0.1
        return z + np.conj(np.swapaxes(_upper(z), -1, -2))

    def H1(x, k):
        z = np.zeros(x.shape + (3, 3))
        z[..., 0, 2] = z[..., 2, 0] = 0.5 * np.cos(x)
        z[..., 1, 1] = np.sin(k)
        return z

    return symbol_from_functions(grid, {0: H0, 1: H1}, K)


def _upper(z):
    u = np.zeros_like(z)
    n = z.shape[-1]
    for i in range(n):
        for j in range(i + 1, n):
            u[..., i, j] = z[..., i, j]
    return u


def x_independent_two_level(grid: PhaseSpaceGrid, K=1) -> tuple[FormalSymbol, GapSpec]:
    """``H0(xi) = [[cos xi, 0.3], [0.3, -cos xi]]`` with an x-dependent ``H1``; lower band."""
    def H0(x, k):
        z = np.zeros(x.shape + (2, 2))
        z[..., 0, 0] = np.cos(k)
        z[..., 1, 1] = -np.cos(k)
        z[..., 0, 1] = z[..., 1, 0] = 0.3
        return z

    def H1(x, k):
        z = np.zeros(x.shape + (2, 2), dtype=complex)
        z[..., 0, 0] = np.sin(x)
        z[..., 0, 1] = 0.4 * np.cos(x + k) + 0.2j
        z[..., 1, 0] = np.conj(z[..., 0, 1])
        z[..., 1, 1] = np.cos(x) * np.sin(k)
        return z

    return symbol_from_functions(grid, {0: H0, 1: H1}, K), GapSpec.from_bands(0, 0, 0.5)
