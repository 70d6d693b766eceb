"""Matrix-valued phase-space symbols and their truncated Moyal calculus.

Symbols live on a uniform (x, xi) grid.  A :class:`MatrixField` stores one
``p x q`` complex matrix per node, and a :class:`FormalSymbol` is a finite
series ``sum_k h**alpha_k C_k`` with rational exponents on a lattice
``{n / q0}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial
from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from sympy.calculus.finite_diff import finite_diff_weights

from .errors import GridMismatchError, LatticeError, StencilError

MAX_DERIVATIVE_ORDER = 8
FD_ORDERS = (4, 6, 8)


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(1000)
    return Fraction(value)


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform grid on a rectangle of the (x, xi) plane.

    Nodes are ``x_min + i * h_x`` for ``i < n_x`` (same for xi), so the
    right endpoint is excluded.  ``margin_cells`` is ``None`` for a periodic
    grid; otherwise the grid is clamped and norms only look at nodes at least
    ``margin_cells`` away from the boundary.
    """

    x_min: float
    x_max: float
    xi_min: float
    xi_max: float
    n_x: int
    n_xi: int
    margin_cells: int | None = None
    fd_order: int = 6

    def __post_init__(self):
        if self.n_x < 8 or self.n_xi < 8:
            raise ValueError("n_x and n_xi must be at least 8")
        if not (self.x_max > self.x_min and self.xi_max > self.xi_min):
            raise ValueError("empty grid rectangle")
        if self.fd_order not in FD_ORDERS:
            raise ValueError(f"fd_order must be one of {FD_ORDERS}")
        if self.margin_cells is not None:
            if self.margin_cells < 0 or 2 * self.margin_cells >= min(self.n_x, self.n_xi):
                raise ValueError("margin leaves no interior")

    @classmethod
    def periodic(cls, x_range, xi_range, n_x, n_xi, fd_order=6):
        return cls(x_range[0], x_range[1], xi_range[0], xi_range[1], n_x, n_xi, None, fd_order)

    @classmethod
    def clamped(cls, x_range, xi_range, n_x, n_xi, margin_cells=8, fd_order=6):
        return cls(x_range[0], x_range[1], xi_range[0], xi_range[1], n_x, n_xi,
                   margin_cells, fd_order)

    @property
    def is_periodic(self) -> bool:
        return self.margin_cells is None

    @property
    def h_x(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def h_xi(self) -> float:
        return (self.xi_max - self.xi_min) / self.n_xi

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h_x * np.arange(self.n_x)

    @property
    def xi(self) -> np.ndarray:
        return self.xi_min + self.h_xi * np.arange(self.n_xi)

    def mesh(self):
        return np.meshgrid(self.x, self.xi, indexing="ij")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_xi)

    def interior(self) -> tuple[slice, slice]:
        if self.is_periodic:
            return (slice(None), slice(None))
        m = self.margin_cells
        return (slice(m, self.n_x - m), slice(m, self.n_xi - m))

    def to_dict(self) -> dict:
        return {
            "x_range": [self.x_min, self.x_max],
            "xi_range": [self.xi_min, self.xi_max],
            "n_x": self.n_x,
            "n_xi": self.n_xi,
            "boundary": "periodic" if self.is_periodic else "clamped",
            "margin_cells": self.margin_cells,
            "fd_order": self.fd_order,
        }


@lru_cache(maxsize=None)
def stencil_weights(order: int, offsets: tuple[int, ...]) -> tuple[float, ...]:
    """Exact finite-difference weights for ``d^order/dt^order`` at 0 (unit spacing)."""
    w = finite_diff_weights(order, list(offsets), 0)[order][-1]
    return tuple(float(c) for c in w)


def stencil_size(order: int, accuracy: int) -> int:
    return 2 * ((order + 1) // 2) - 1 + accuracy


@lru_cache(maxsize=None)
def _axis_operator(n: int, spacing: float, order: int, accuracy: int, periodic: bool):
    size = stencil_size(order, accuracy)
    if size > n:
        raise StencilError(f"stencil of {size} points does not fit {n} nodes")
    r = size // 2
    rows, cols, vals = [], [], []
    centered = stencil_weights(order, tuple(range(-r, r + 1)))
    scale = spacing ** order
    for i in range(n):
        if periodic or r <= i < n - r:
            offsets = range(-r, r + 1)
            w = centered
        else:
            start = -i if i < r else (n - 1 - i) - (size - 1)
            offsets = range(start, start + size)
            w = stencil_weights(order, tuple(offsets))
        for o, c in zip(offsets, w):
            if c != 0.0:
                rows.append(i)
                cols.append((i + o) % n)
                vals.append(c / scale)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _apply_axis(values: np.ndarray, op, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, 0)
    shp = moved.shape
    out = op @ moved.reshape(shp[0], -1)
    return np.moveaxis(np.asarray(out).reshape(shp), 0, axis)


def derivative_array(grid: PhaseSpaceGrid, values: np.ndarray, a_x: int, a_xi: int) -> np.ndarray:
    if a_x < 0 or a_xi < 0:
        raise ValueError("negative derivative order")
    if a_x + a_xi > MAX_DERIVATIVE_ORDER:
        raise StencilError(f"derivative order {a_x + a_xi} above {MAX_DERIVATIVE_ORDER}")
    out = values
    if a_x:
        op = _axis_operator(grid.n_x, grid.h_x, a_x, grid.fd_order, grid.is_periodic)
        out = _apply_axis(out, op, 0)
    if a_xi:
        op = _axis_operator(grid.n_xi, grid.h_xi, a_xi, grid.fd_order, grid.is_periodic)
        out = _apply_axis(out, op, 1)
    if out is values:
        out = values.copy()
    return out


class MatrixField:
    """One complex ``p x q`` matrix per grid node.

    ``values`` has shape ``(n_x, n_xi, p, q)``.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: PhaseSpaceGrid, values):
        values = np.asarray(values, dtype=complex)
        if values.ndim != 4 or values.shape[:2] != grid.shape:
            raise ValueError(f"values must have shape {grid.shape} + (p, q), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite entries in matrix field")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def from_function(cls, grid: PhaseSpaceGrid, fn: Callable, dim: int | None = None):
        """Sample ``fn(x, xi)``; a scalar-valued ``fn`` times Id(dim) if dim is given."""
        X, XI = grid.mesh()
        v = np.asarray(fn(X, XI), dtype=complex)
        if v.ndim == 2:
            v = v[..., None, None] * np.eye(dim or 1)
        return cls(grid, np.broadcast_to(v, grid.shape + v.shape[2:]).copy())

    @classmethod
    def constant(cls, grid: PhaseSpaceGrid, matrix):
        m = np.atleast_2d(np.asarray(matrix, dtype=complex))
        return cls(grid, np.broadcast_to(m, grid.shape + m.shape).copy())

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def fiber_shape(self) -> tuple[int, int]:
        return self.values.shape[-2:]

    def adjoint(self) -> "MatrixField":
        return MatrixField(self.grid, np.conj(np.swapaxes(self.values, -1, -2)))

    def __add__(self, other: "MatrixField") -> "MatrixField":
        _same_grid(self.grid, other.grid)
        return MatrixField(self.grid, self.values + other.values)

    def __sub__(self, other: "MatrixField") -> "MatrixField":
        _same_grid(self.grid, other.grid)
        return MatrixField(self.grid, self.values - other.values)

    def __matmul__(self, other: "MatrixField") -> "MatrixField":
        _same_grid(self.grid, other.grid)
        return MatrixField(self.grid, self.values @ other.values)

    def scale(self, c) -> "MatrixField":
        return MatrixField(self.grid, c * self.values)

    def norm(self) -> float:
        return sup_norm(self.grid, self.values)


def _same_grid(a: PhaseSpaceGrid, b: PhaseSpaceGrid):
    if a != b:
        raise GridMismatchError("fields live on different grids")


def node_norms(values: np.ndarray) -> np.ndarray:
    """Operator 2-norm of every node matrix."""
    p, q = values.shape[-2:]
    if p == 1 or q == 1:
        return np.sqrt(np.sum(np.abs(values) ** 2, axis=(-2, -1)))
    return np.linalg.norm(values, ord=2, axis=(-2, -1))


def sup_norm(grid: PhaseSpaceGrid, values: np.ndarray) -> float:
    """Sup over interior nodes of the matrix operator norm."""
    inner = values[grid.interior()]
    if inner.size == 0:
        return 0.0
    return float(np.max(node_norms(inner)))


def derive(fld: MatrixField, multi_index: tuple[int, int]) -> MatrixField:
    """Centered finite-difference ``d_x^a d_xi^b`` of a matrix field.

    Stencils are exact on polynomials of degree ``fd_order + order - 1`` along
    each axis; periodic grids wrap, clamped grids switch to shifted stencils
    of the same width near the edge (those nodes are excluded from norms).
    """
    a_x, a_xi = multi_index
    return MatrixField(fld.grid, derivative_array(fld.grid, fld.values, a_x, a_xi))


class FormalSymbol:
    """Truncated semiclassical series ``sum h**e C_e`` of matrix fields.

    Parameters
    ----------
    grid : PhaseSpaceGrid
    terms : mapping exponent -> array of shape ``(n_x, n_xi, p, q)``
    K : truncation order (rational); all exponents are ``<= K``.
    q0 : lattice denominator; every exponent is a multiple of ``1/q0``.
    """

    def __init__(self, grid: PhaseSpaceGrid, terms: Mapping, K, q0: int = 1,
                 fiber_shape: tuple[int, int] | None = None):
        self.grid = grid
        self.q0 = int(q0)
        self.K = as_fraction(K)
        if self.q0 < 1:
            raise ValueError("q0 must be positive")
        self._check_lattice(self.K)
        clean: dict[Fraction, np.ndarray] = {}
        for e, c in terms.items():
            e = as_fraction(e)
            if e < 0:
                raise LatticeError("negative exponent")
            self._check_lattice(e)
            if e > self.K:
                continue
            arr = c.values if isinstance(c, MatrixField) else np.asarray(c, dtype=complex)
            if arr.shape[:2] != grid.shape or arr.ndim != 4:
                raise ValueError("coefficient has wrong shape")
            if fiber_shape is None:
                fiber_shape = arr.shape[-2:]
            elif arr.shape[-2:] != tuple(fiber_shape):
                raise ValueError("coefficients with different fiber shapes")
            clean[e] = clean[e] + arr if e in clean else arr
        if fiber_shape is None:
            raise ValueError("fiber shape unknown for an empty symbol")
        self.fiber_shape = tuple(fiber_shape)
        self.terms = {e: clean[e] for e in sorted(clean)}

    def _check_lattice(self, e: Fraction):
        if (e * self.q0).denominator != 1:
            raise LatticeError(f"exponent {e} not on the lattice 1/{self.q0}")

    # construction helpers
    @classmethod
    def from_fields(cls, fields: Mapping, K, q0: int = 1):
        fields = dict(fields)
        grid = next(iter(fields.values())).grid
        for f in fields.values():
            _same_grid(grid, f.grid)
        return cls(grid, {e: f.values for e, f in fields.items()}, K, q0)

    @classmethod
    def zero(cls, grid: PhaseSpaceGrid, fiber_shape, K, q0: int = 1):
        return cls(grid, {}, K, q0, fiber_shape=fiber_shape)

    @classmethod
    def identity(cls, grid: PhaseSpaceGrid, dim: int, K, q0: int = 1):
        return cls(grid, {0: MatrixField.constant(grid, np.eye(dim)).values}, K, q0)

    @property
    def exponents(self) -> list[Fraction]:
        return list(self.terms)

    def lattice(self, K=None) -> list[Fraction]:
        K = self.K if K is None else as_fraction(K)
        n = int(K * self.q0)
        return [Fraction(k, self.q0) for k in range(n + 1)]

    def coef(self, e) -> np.ndarray:
        e = as_fraction(e)
        if e in self.terms:
            return self.terms[e]
        return np.zeros(self.grid.shape + self.fiber_shape, dtype=complex)

    def field(self, e) -> MatrixField:
        return MatrixField(self.grid, self.coef(e))

    def with_K(self, K) -> "FormalSymbol":
        return FormalSymbol(self.grid, self.terms, K, self.q0, self.fiber_shape)

    def truncate(self, K) -> "FormalSymbol":
        return self.with_K(min(as_fraction(K), self.K))

    def below(self, e) -> "FormalSymbol":
        """Terms with exponent strictly below ``e`` (keeps the truncation order)."""
        e = as_fraction(e)
        return FormalSymbol(self.grid, {k: v for k, v in self.terms.items() if k < e},
                            self.K, self.q0, self.fiber_shape)

    def _compatible(self, other: "FormalSymbol") -> int:
        _same_grid(self.grid, other.grid)
        q0 = np.lcm(self.q0, other.q0)
        return int(q0)

    def __add__(self, other: "FormalSymbol") -> "FormalSymbol":
        q0 = self._compatible(other)
        if self.fiber_shape != other.fiber_shape:
            raise ValueError("fiber shapes differ")
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms[e] + c if e in terms else c
        return FormalSymbol(self.grid, terms, min(self.K, other.K), q0, self.fiber_shape)

    def __sub__(self, other: "FormalSymbol") -> "FormalSymbol":
        return self + other.scale(-1)

    def __neg__(self) -> "FormalSymbol":
        return self.scale(-1)

    def scale(self, c) -> "FormalSymbol":
        return FormalSymbol(self.grid, {e: c * v for e, v in self.terms.items()},
                            self.K, self.q0, self.fiber_shape)

    def shift(self, e) -> "FormalSymbol":
        """Multiply by ``h**e``."""
        e = as_fraction(e)
        return FormalSymbol(self.grid, {k + e: v for k, v in self.terms.items()},
                            self.K, self.q0, self.fiber_shape)

    def adjoint(self) -> "FormalSymbol":
        return FormalSymbol(self.grid,
                            {e: np.conj(np.swapaxes(v, -1, -2)) for e, v in self.terms.items()},
                            self.K, self.q0, (self.fiber_shape[1], self.fiber_shape[0]))

    def map(self, fn: Callable[[np.ndarray], np.ndarray], fiber_shape=None) -> "FormalSymbol":
        terms = {e: fn(v) for e, v in self.terms.items()}
        if fiber_shape is None and terms:
            fiber_shape = next(iter(terms.values())).shape[-2:]
        return FormalSymbol(self.grid, terms, self.K, self.q0, fiber_shape or self.fiber_shape)

    def evaluate(self, h: float) -> np.ndarray:
        """Numerical value ``sum h**e C_e`` at every node."""
        out = np.zeros(self.grid.shape + self.fiber_shape, dtype=complex)
        for e, v in self.terms.items():
            out = out + float(h) ** float(e) * v
        return out

    def norms(self) -> dict[Fraction, float]:
        return {e: sup_norm(self.grid, v) for e, v in self.terms.items()}

    def max_norm(self) -> float:
        return max(self.norms().values(), default=0.0)

    def __repr__(self) -> str:
        ex = ", ".join(str(e) for e in self.terms)
        return f"FormalSymbol(K={self.K}, q0={self.q0}, fiber={self.fiber_shape}, exponents=[{ex}])"


class _DerivativeCache:
    def __init__(self, grid: PhaseSpaceGrid):
        self.grid = grid
        self._store: dict = {}

    def get(self, key, values: np.ndarray, a_x: int, a_xi: int) -> np.ndarray:
        k = (key, a_x, a_xi)
        if k not in self._store:
            if a_x == 0 and a_xi == 0:
                self._store[k] = values
            else:
                self._store[k] = derivative_array(self.grid, values, a_x, a_xi)
        return self._store[k]


def moyal_coefficient(A: FormalSymbol, B: FormalSymbol, e, cache: _DerivativeCache | None = None) -> np.ndarray:
    """Coefficient of ``h**e`` in the Weyl product ``A # B``.

    Uses ``sum (1/j!) (1/(2i))**j P^j(A_a, B_b)`` over ``a + b + j = e`` with
    ``P(f, g) = d_xi f d_x g - d_x f d_xi g`` applied as a bidifferential
    operator that keeps the matrix order.
    """
    _same_grid(A.grid, B.grid)
    if A.fiber_shape[1] != B.fiber_shape[0]:
        raise ValueError("fiber shapes do not compose")
    e = as_fraction(e)
    cache = cache or _DerivativeCache(A.grid)
    out = np.zeros(A.grid.shape + (A.fiber_shape[0], B.fiber_shape[1]), dtype=complex)
    for ea, va in A.terms.items():
        for eb, vb in B.terms.items():
            j = e - ea - eb
            if j < 0 or j.denominator != 1:
                continue
            j = int(j)
            pref = (1 / 2j) ** j / factorial(j)
            for k in range(j + 1):
                c = pref * comb(j, k) * (-1) ** k
                da = cache.get(("A", id(va)), va, k, j - k)
                db = cache.get(("B", id(vb)), vb, j - k, k)
                out += c * (da @ db)
    return out


def moyal_product(A: FormalSymbol, B: FormalSymbol, K=None) -> FormalSymbol:
    """Truncated Moyal product ``A # B`` keeping exponents ``<= K``."""
    q0 = A._compatible(B)
    K = min(A.K, B.K) if K is None else as_fraction(K)
    if (K * q0).denominator != 1:
        raise LatticeError(f"K={K} not on the lattice 1/{q0}")
    cache = _DerivativeCache(A.grid)
    terms = {}
    for n in range(int(K * q0) + 1):
        e = Fraction(n, q0)
        if any((e - ea - eb) >= 0 and (e - ea - eb).denominator == 1
               for ea in A.terms for eb in B.terms):
            terms[e] = moyal_coefficient(A, B, e, cache)
    return FormalSymbol(A.grid, terms, K, q0, (A.fiber_shape[0], B.fiber_shape[1]))


def moyal_commutator(A: FormalSymbol, B: FormalSymbol, K=None) -> FormalSymbol:
    return moyal_product(A, B, K) - moyal_product(B, A, K)


def symbol_from_functions(grid: PhaseSpaceGrid, fns: Mapping, K, q0: int = 1, dim: int | None = None) -> FormalSymbol:
    """Build a formal symbol from ``{exponent: fn(x, xi)}`` samples."""
    return FormalSymbol(grid, {e: MatrixField.from_function(grid, f, dim).values for e, f in fns.items()}, K, q0)


def hermitian_defect(values: np.ndarray) -> float:
    return float(np.max(np.abs(values - np.conj(np.swapaxes(values, -1, -2))), initial=0.0))
