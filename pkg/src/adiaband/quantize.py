"""Dense matrix realizations of symbols.

Two backends: a grid kernel for scalar symbols on a 1-D base (semiclassical
Weyl quantization with midpoint rule and a discrete xi transform), and a
Hermite ladder for polynomial fiber symbols.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import RectBivariateSpline

from .errors import FiberDegreeError, ResolutionError, SizeCapError
from .symbols import PhaseSpaceGrid

SIZE_CAP = 8192
HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class QuantizedOperator:
    """Dense operator with a description of the basis it acts on."""

    matrix: np.ndarray
    basis: dict
    h: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def hermitian_defect(self) -> float:
        M = self.matrix
        return float(np.max(np.abs(M - M.conj().T), initial=0.0))

    def __add__(self, other: "QuantizedOperator") -> "QuantizedOperator":
        return QuantizedOperator(self.matrix + other.matrix, self.basis, self.h)

    def __matmul__(self, other: "QuantizedOperator") -> "QuantizedOperator":
        return QuantizedOperator(self.matrix @ other.matrix, self.basis, self.h)


# --- Fock ladder --------------------------------------------------------

class FockLadder:
    """Truncated Hermite basis with ``x = (a + a*)/sqrt 2`` and ``xi = i(a* - a)/sqrt 2``.

    Products are formed at size ``m + pad`` and cropped to ``m``.
    """

    def __init__(self, m: int, pad: int = 4):
        if m < 2:
            raise ValueError("fiber truncation must be at least 2")
        self.m = int(m)
        self.pad = int(pad)
        M = self.m + self.pad
        a = np.diag(np.sqrt(np.arange(1, M)), 1).astype(complex)
        self._a = a
        self._x = (a + a.conj().T) / np.sqrt(2)
        self._xi = 1j * (a.conj().T - a) / np.sqrt(2)
        self._cache: dict = {}

    @property
    def x(self) -> np.ndarray:
        return self._x[: self.m, : self.m]

    @property
    def xi(self) -> np.ndarray:
        return self._xi[: self.m, : self.m]

    @property
    def max_degree(self) -> int:
        return self.m // 2

    def monomial(self, a: int, b: int) -> np.ndarray:
        """Weyl quantization of ``x**a * xi**b``: average over all orderings."""
        if a < 0 or b < 0:
            raise ValueError("negative degree")
        if a + b > self.max_degree:
            raise FiberDegreeError(f"degree {a + b} exceeds m/2 = {self.max_degree}")
        key = (a, b)
        if key not in self._cache:
            n = a + b
            M = self._x.shape[0]
            acc = np.zeros((M, M), dtype=complex)
            for pos in combinations(range(n), a):
                word = np.eye(M, dtype=complex)
                ps = set(pos)
                for k in range(n):
                    word = word @ (self._x if k in ps else self._xi)
                acc += word
            acc /= comb(n, a)
            out = acc[: self.m, : self.m].copy()
            out.setflags(write=False)
            self._cache[key] = out
        return self._cache[key]


# --- scalar grid quantization -------------------------------------------

@dataclass(frozen=True)
class BaseGrid:
    """1-D base nodes ``x_min + j * dx``, ``j < n``; periodic of length ``n dx`` if requested."""

    x_min: float
    x_max: float
    n: int
    periodic: bool = False

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    def xi_nodes(self, h: float) -> np.ndarray:
        return 2 * np.pi * h * np.fft.fftfreq(self.n, self.dx)

    def xi_max(self, h: float) -> float:
        return np.pi * h / self.dx

    def to_dict(self) -> dict:
        return {"x_range": [self.x_min, self.x_max], "n": self.n, "periodic": self.periodic}


def _midpoint_index(n: int, periodic: bool) -> np.ndarray:
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    s = i + j
    if periodic:
        d = i - j
        s = np.where(d > n // 2, s - n, np.where(d < -(n // 2), s + n, s)) % (2 * n)
    return s


def weyl_quantize_scalar_1d(symbol: Callable, h: float, base: BaseGrid, *,
                            xi_extent: float | None = None) -> QuantizedOperator:
    """Semiclassical Weyl quantization of a scalar symbol on a uniform grid.

    ``symbol(x, xi)`` is evaluated at the midpoints ``(x_i + x_j)/2`` and the
    discrete frequencies ``xi_k = 2 pi h k / (n dx)``; the kernel entry is the
    inverse discrete transform in ``k`` at offset ``i - j``.  Multiplication
    symbols ``a(x)`` give exactly ``diag(a(x_i))``.

    ``xi_extent`` is the largest ``|xi|`` where the symbol matters; the grid
    must resolve it, ``pi h / dx >= xi_extent``, or :class:`ResolutionError`
    is raised.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    n = base.n
    if xi_extent is not None and base.xi_max(h) < xi_extent:
        raise ResolutionError(
            f"grid resolves |xi| <= {base.xi_max(h):.4g} but the symbol needs {xi_extent:.4g}; "
            f"refine dx below {np.pi * h / xi_extent:.4g}")
    mids = base.x_min + 0.5 * base.dx * np.arange(2 * n)
    xi = base.xi_nodes(h)
    on_mesh = getattr(symbol, "on_mesh", None)
    if on_mesh is not None:
        vals = np.asarray(on_mesh(mids, xi), dtype=complex)
    else:
        X, XI = np.meshgrid(mids, xi, indexing="ij")
        vals = np.asarray(symbol(X, XI), dtype=complex) * np.ones(X.shape)
    if n % 2 == 0:
        # split the Nyquist frequency symmetrically between +xi and -xi
        ny = n // 2
        vals[:, ny] = 0.5 * (vals[:, ny] + np.asarray(symbol(mids, -xi[ny]), dtype=complex))
    F = np.fft.ifft(vals, axis=1)
    s = _midpoint_index(n, base.periodic)
    r = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    K = F[s, r]
    return QuantizedOperator(K, {"kind": "scalar_1d", "base": base.to_dict()}, float(h))


class GridSymbolSampler:
    """Quintic spline through a scalar field on a :class:`PhaseSpaceGrid`.

    Calling it outside the sampled rectangle raises ``ValueError``.
    """

    def __init__(self, grid: PhaseSpaceGrid, values: np.ndarray, order: int = 5):
        values = np.asarray(values)
        self.grid = grid
        x, xi = grid.x, grid.xi
        self._re = RectBivariateSpline(x, xi, values.real, kx=order, ky=order)
        self._im = RectBivariateSpline(x, xi, values.imag, kx=order, ky=order)
        self._complex = bool(np.any(values.imag))
        self.bounds = (x[0], x[-1], xi[0], xi[-1])

    def _check(self, X, XI):
        x0, x1, k0, k1 = self.bounds
        tol = 1e-12 * max(1.0, abs(x1), abs(k1))
        if X.min() < x0 - tol or X.max() > x1 + tol or XI.min() < k0 - tol or XI.max() > k1 + tol:
            raise ValueError("sample points fall outside the symbol grid")

    def on_mesh(self, x, xi):
        """Values on the tensor mesh ``x (x) xi``; same as ``self(*meshgrid(x, xi, indexing='ij'))``."""
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        self._check(x, xi)
        ox, ok = np.argsort(x, kind="stable"), np.argsort(xi, kind="stable")
        ix, ik = np.argsort(ox), np.argsort(ok)
        out = self._re(x[ox], xi[ok])
        if self._complex:
            out = out + 1j * self._im(x[ox], xi[ok])
        return out[np.ix_(ix, ik)]

    def __call__(self, X, XI):
        X = np.asarray(X, float)
        XI = np.asarray(XI, float)
        X, XI = np.broadcast_arrays(X, XI)
        self._check(X, XI)
        out = self._re.ev(X.ravel(), XI.ravel())
        if self._complex:
            out = out + 1j * self._im.ev(X.ravel(), XI.ravel())
        return out.reshape(X.shape)


def quantize_grid_symbol(grid: PhaseSpaceGrid, values: np.ndarray, h: float, base: BaseGrid,
                         **kw) -> QuantizedOperator:
    """Quantize a scalar field sampled on a phase-space grid via spline interpolation."""
    return weyl_quantize_scalar_1d(GridSymbolSampler(grid, values), h, base, **kw)


def quantize_matrix_symbol(symbol: Callable, p: int, q: int, h: float, base: BaseGrid,
                           **kw) -> QuantizedOperator:
    """Entry-wise quantization of ``symbol(x, xi) -> (..., p, q)``.

    The result acts from ``base (x) C^q`` to ``base (x) C^p`` with the base
    index outermost.
    """
    n = base.n
    out = np.zeros((n, p, n, q), dtype=complex)
    for a in range(p):
        for b in range(q):
            op = weyl_quantize_scalar_1d(lambda X, XI, a=a, b=b: symbol(X, XI)[..., a, b], h, base, **kw)
            out[:, a, :, b] = op.matrix
    return QuantizedOperator(out.reshape(n * p, n * q),
                             {"kind": "matrix", "base": base.to_dict(), "p": p, "q": q}, float(h))


def quantize_fiber_model(sym, ladder: FockLadder, base: BaseGrid, h: float, **kw) -> QuantizedOperator:
    """Two-scale quantization of ``sum h**(n/2) c(x2, xi2) x1**a xi1**b``.

    ``sym.terms`` is a list of ``(n, a, b, c)`` with ``c`` a vectorized
    function; the base coefficient is quantized at scale ``h``, the fiber
    monomial at scale 1 in the ladder basis.  The tensor index is
    ``(base, fiber)`` with the base index outermost.
    """
    if not hasattr(sym, "terms"):
        raise TypeError("fiber model needs a list of polynomial terms")
    grouped: dict = {}
    for n_, a, b, fn in sym.terms:
        grouped.setdefault((a, b), []).append((n_, fn))
    N, m = base.n, ladder.m
    base_ops, fib_ops = [], []
    for (a, b), items in sorted(grouped.items()):
        fib = ladder.monomial(a, b)
        acc = np.zeros((N, N), dtype=complex)
        for n_, fn in items:
            weight = float(h) ** (n_ / 2)
            acc += weight * weyl_quantize_scalar_1d(fn, h, base, **kw).matrix
        base_ops.append(acc)
        fib_ops.append(fib)
    if not base_ops:
        raise ValueError("empty symbol")
    T = np.einsum("tab,tfg->afbg", np.array(base_ops), np.array(fib_ops))
    M = T.reshape(N * m, N * m)
    return QuantizedOperator(M, {"kind": "tensor", "base": base.to_dict(), "fock_m": m}, float(h))


# --- spectra ------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumResult:
    values: np.ndarray
    vectors: np.ndarray | None
    hermitian: bool


def spectrum(op, window=None, *, vectors: bool = False, n_lowest: int | None = None,
             size_cap: int = SIZE_CAP) -> SpectrumResult:
    """Sorted eigenvalues of a dense operator, optionally restricted to a window.

    Hermitian input (within ``1e-10``) goes through ``eigh``; ``n_lowest``
    limits the computation to the lowest eigenpairs.  Non-Hermitian input
    returns complex eigenvalues sorted by real part and ``hermitian=False``.
    """
    M = op.matrix if isinstance(op, QuantizedOperator) else np.asarray(op)
    n = M.shape[0]
    if M.ndim != 2 or M.shape[1] != n:
        raise ValueError("square matrix required")
    if n > size_cap:
        raise SizeCapError(f"matrix of size {n} above cap {size_cap}")
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    herm = float(np.max(np.abs(M - M.conj().T), initial=0.0)) <= HERMITIAN_TOL * scale
    if herm:
        Ms = (M + M.conj().T) / 2
        if not np.any(np.iscomplex(Ms)):
            Ms = Ms.real
        kw = {}
        if n_lowest is not None and n_lowest < n:
            kw["subset_by_index"] = [0, n_lowest - 1]
        if vectors:
            w, V = sla.eigh(Ms, **kw)
        else:
            w, V = sla.eigh(Ms, eigvals_only=True, **kw), None
    else:
        if vectors:
            w, V = np.linalg.eig(M)
        else:
            w, V = np.linalg.eigvals(M), None
        order = np.argsort(w.real, kind="stable")
        w = w[order]
        V = V[:, order] if V is not None else None
        if n_lowest is not None:
            w = w[:n_lowest]
            V = V[:, :n_lowest] if V is not None else None
    if window is not None:
        lo, hi = window
        sel = (np.real(w) >= lo) & (np.real(w) <= hi)
        w = w[sel]
        V = V[:, sel] if V is not None else None
    return SpectrumResult(np.asarray(w), V, herm)


def quantize_grid_matrix(grid: PhaseSpaceGrid, values: np.ndarray, h: float, base: BaseGrid,
                         **kw) -> QuantizedOperator:
    """Entry-wise spline quantization of a ``(n_x, n_xi, p, q)`` field (base index outermost)."""
    p, q = values.shape[-2:]
    n = base.n
    out = np.zeros((n, p, n, q), dtype=complex)
    for a in range(p):
        for b in range(q):
            entry = values[..., a, b]
            if not np.any(entry):
                continue
            out[:, a, :, b] = quantize_grid_symbol(grid, entry, h, base, **kw).matrix
    return QuantizedOperator(out.reshape(n * p, n * q),
                             {"kind": "matrix", "base": base.to_dict(), "p": p, "q": q}, float(h))
