"""Superadiabatic projector hierarchy ``Pi = sum h**e Pi_e`` and its diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CompatibilityError, GapError, WindowError
from .fitting import ABS_FLOOR, SlopeFit, power_fit, slope_fit
from .symbols import (FormalSymbol, MatrixField, PhaseSpaceGrid, as_fraction, derivative_array,
                      moyal_commutator, moyal_product, node_norms, sup_norm)
from .sylvester import (SylvesterProblem, riesz_projector, solve_sylvester_batch,
                        solve_sylvester_contour)

COMPAT_TOL = 1e-8
ALGEBRA_TOL = 1e-10


def _dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class GapSpec:
    """Selection of an isolated part of the fiber spectrum.

    Either a spectral ``window = (lo, hi)`` or ``bands = (first, last)``, the
    inclusive indices of the selected eigenvalues in ascending order (useful
    when the selected band sweeps across a fixed window).  ``delta`` is the
    required distance between selected and remaining eigenvalues.
    """

    delta: float
    window: tuple[float, float] | None = None
    bands: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if (self.window is None) == (self.bands is None):
            raise ValueError("give exactly one of window or bands")
        if self.window is not None:
            lo, hi = self.window
            if hi < lo:
                raise ValueError("empty window")
            object.__setattr__(self, "window", (float(lo), float(hi)))
        if self.bands is not None:
            a, b = self.bands
            if not 0 <= a <= b:
                raise ValueError("bands must satisfy 0 <= first <= last")
            object.__setattr__(self, "bands", (int(a), int(b)))

    @classmethod
    def from_window(cls, lo, hi, delta):
        return cls(delta=delta, window=(lo, hi))

    @classmethod
    def from_bands(cls, first, last, delta):
        return cls(delta=delta, bands=(first, last))

    def select(self, eigenvalues: np.ndarray) -> np.ndarray:
        """Boolean mask of selected eigenvalues (last axis sorted ascending)."""
        if self.window is not None:
            lo, hi = self.window
            return (eigenvalues >= lo) & (eigenvalues <= hi)
        idx = np.arange(eigenvalues.shape[-1])
        a, b = self.bands
        if b >= eigenvalues.shape[-1]:
            raise GapError(f"band index {b} beyond fiber dimension {eigenvalues.shape[-1]}")
        return np.broadcast_to((idx >= a) & (idx <= b), eigenvalues.shape)

    def overlaps(self, other: "GapSpec") -> bool:
        if self.window is not None and other.window is not None:
            return not (self.window[1] < other.window[0] or other.window[1] < self.window[0])
        if self.bands is not None and other.bands is not None:
            return not (self.bands[1] < other.bands[0] or other.bands[1] < self.bands[0])
        return False

    def to_dict(self) -> dict:
        return {"delta": self.delta, "window": self.window, "bands": self.bands}


@dataclass(frozen=True)
class Pi0Data:
    pi0: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mask: np.ndarray
    rank: int
    gap: float


def _decompose(grid: PhaseSpaceGrid, H0: np.ndarray, gap: GapSpec) -> Pi0Data:
    herm = np.max(np.abs(H0 - _dag(H0)), initial=0.0)
    if herm > ALGEBRA_TOL * max(1.0, float(np.max(np.abs(H0)))):
        raise ValueError(f"principal symbol is not Hermitian (defect {herm:.3g})")
    E, V = np.linalg.eigh((H0 + _dag(H0)) / 2)
    mask = gap.select(E)
    counts = mask.sum(axis=-1)
    if counts.min() != counts.max():
        i = np.unravel_index(np.argmax(counts != counts.flat[0]), counts.shape)
        raise GapError(f"selected rank varies across the grid (node x={grid.x[i[0]]:.4g}, "
                       f"xi={grid.xi[i[1]]:.4g})")
    rank = int(counts.flat[0])
    gap_val = np.inf
    if 0 < rank < E.shape[-1]:
        inside = np.where(mask, E, np.nan)
        outside = np.where(mask, np.nan, E)
        dist = np.abs(inside[..., :, None] - outside[..., None, :])
        node_gap = np.nanmin(dist, axis=(-2, -1))
        gap_val = float(node_gap.min())
        if gap_val <= gap.delta:
            i = np.unravel_index(np.argmin(node_gap), node_gap.shape)
            raise GapError(f"gap {gap_val:.4g} <= delta={gap.delta} at node "
                           f"x={grid.x[i[0]]:.4g}, xi={grid.xi[i[1]]:.4g}")
    Vs = V * mask[..., None, :]
    pi0 = Vs @ _dag(Vs)
    return Pi0Data(pi0, E, V, mask, rank, gap_val)


def build_pi0(H0: MatrixField, gap: GapSpec, method: str = "eigen", n_quad: int = 64) -> MatrixField:
    """Node-wise spectral projector of ``H0`` onto the selected eigenvalues.

    ``method="eigen"`` uses an eigendecomposition, ``method="riesz"`` the
    resolvent contour at every node (slow, for cross-checks on small grids).
    """
    data = _decompose(H0.grid, H0.values, gap)
    if method == "eigen":
        out = data.pi0
    elif method == "riesz":
        out = np.empty_like(data.pi0)
        for idx in np.ndindex(*H0.grid.shape):
            E = data.eigenvalues[idx][data.mask[idx]]
            if E.size == 0:
                out[idx] = 0
                continue
            out[idx] = riesz_projector(H0.values[idx], (E.min(), E.max()), gap.delta, n_quad)
    else:
        raise ValueError(f"unknown method {method!r}")
    fld = MatrixField(H0.grid, out)
    for ax in ((1, 0), (0, 1)):
        if not np.all(np.isfinite(derivative_array(H0.grid, fld.values, *ax))):
            raise GapError("projector field is not smooth on the grid")
    return fld


@dataclass
class OrderLog:
    """Diagnostics recorded while building one order of the hierarchy."""

    exponent: Fraction
    R: np.ndarray
    T: np.ndarray
    S: np.ndarray
    comp1: float
    comp2_range: float
    comp2_complement: float
    diag_residual: float
    sylvester_residual: float

    def summary(self) -> dict:
        return {
            "exponent": str(self.exponent),
            "comp1": self.comp1,
            "comp2_range": self.comp2_range,
            "comp2_complement": self.comp2_complement,
            "diag_residual": self.diag_residual,
            "sylvester_residual": self.sylvester_residual,
        }


@dataclass(frozen=True)
class ProjectorHierarchy:
    """Result of :func:`build_hierarchy`.

    Attributes
    ----------
    pi : FormalSymbol
        ``Pi_0 ... Pi_K`` on the exponent lattice of ``H``.
    H : FormalSymbol
        the input symbol.
    gap : GapSpec
    defect_log : list of OrderLog, one per built order above zero.
    eigenvalues, eigenvectors, mask : node-wise spectral data of ``H_0``.
    """

    pi: FormalSymbol
    H: FormalSymbol
    gap: GapSpec
    defect_log: list
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mask: np.ndarray
    rank: int
    method: str = "eigen"

    @property
    def grid(self) -> PhaseSpaceGrid:
        return self.pi.grid

    @property
    def K(self) -> Fraction:
        return self.pi.K

    @property
    def pi0(self) -> np.ndarray:
        return self.pi.coef(0)

    def max_compatibility(self) -> float:
        return max((max(l.comp1, l.comp2_range, l.comp2_complement) for l in self.defect_log),
                   default=0.0)


def _sylvester_offdiag(H0, P0, Q0, Y, delta, method):
    """Solve ``(H0 P0) X - X (H0 Q0) = Y`` for ``X = P0 X Q0`` at every node."""
    if method == "eigen":
        s = float(np.max(np.abs(np.linalg.eigvalsh((H0 + _dag(H0)) / 2)))) + 1.0
        K0 = H0 @ P0 + 3 * s * Q0
        K1 = H0 @ Q0 - 3 * s * P0
        K0 = (K0 + _dag(K0)) / 2
        K1 = (K1 + _dag(K1)) / 2
        X = solve_sylvester_batch(K0, K1, Y, delta)
        return P0 @ X @ Q0
    if method == "contour":
        out = np.zeros_like(Y)
        E, V = np.linalg.eigh(P0)
        for idx in np.ndindex(*H0.shape[:-2]):
            sel = E[idx] > 0.5
            Vin, Vout = V[idx][:, sel], V[idx][:, ~sel]
            if Vin.shape[1] == 0 or Vout.shape[1] == 0:
                continue
            K0 = Vin.conj().T @ H0[idx] @ Vin
            K1 = Vout.conj().T @ H0[idx] @ Vout
            prob = SylvesterProblem((K0 + K0.conj().T) / 2, (K1 + K1.conj().T) / 2,
                                    Vin.conj().T @ Y[idx] @ Vout, delta)
            out[idx] = Vin @ solve_sylvester_contour(prob) @ Vout.conj().T
        return out
    raise ValueError(f"unknown Sylvester method {method!r}")


def build_hierarchy(H: FormalSymbol, gap: GapSpec, K=None, *, method: str = "eigen",
                    compat_tol: float = COMPAT_TOL, on_incompatible: str = "raise") -> ProjectorHierarchy:
    """Construct ``Pi_0, ..., Pi_K`` order by order on the lattice of ``H``.

    At every exponent ``e`` above zero, with ``Pi_<e`` the partial sum built so far:

    * ``R = [Pi_<e # Pi_<e]_e`` and ``T = [H_<e # Pi_<e - Pi_<e # H_<e]_e``,
    * ``S = T + [H_e, Pi_0]``,
    * diagonal blocks ``P Pi_e P = -P R P`` and ``Q Pi_e Q = Q R Q``
      (``P = Pi_0``, ``Q = 1 - Pi_0``),
    * off-diagonal blocks from ``[H_0, Pi_e] = -S`` via two Sylvester solves.

    The compatibility identities ``[Pi_0, R] = 0``, ``P([H_0,R] - T)P = 0`` and
    ``Q([H_0,R] + T)Q = 0`` are checked at every order; a violation beyond
    ``compat_tol`` raises :class:`CompatibilityError` unless
    ``on_incompatible="record"``.
    """
    grid = H.grid
    K = H.K if K is None else as_fraction(K)
    q0 = H.q0
    if (K * q0).denominator != 1:
        raise ValueError(f"K={K} is not on the lattice 1/{q0}")
    source = H
    H = H.with_K(K)
    dim = H.fiber_shape[0]
    H0 = H.coef(0)
    data = _decompose(grid, H0, gap)
    P0 = data.pi0
    Q0 = np.eye(dim) - P0
    terms = {Fraction(0): P0}
    log = []
    inner = grid.interior()
    for n in range(1, int(K * q0) + 1):
        e = Fraction(n, q0)
        partial = FormalSymbol(grid, terms, e, q0, (dim, dim))
        R = moyal_product(partial, partial, e).coef(e)
        T = moyal_commutator(H.below(e).with_K(e), partial, e).coef(e)
        He = H.coef(e)
        S = T + He @ P0 - P0 @ He
        comp1 = sup_norm(grid, P0 @ R - R @ P0)
        HR = H0 @ R - R @ H0
        comp2a = sup_norm(grid, P0 @ (HR - T) @ P0)
        comp2b = sup_norm(grid, Q0 @ (HR + T) @ Q0)
        worst = max(comp1, comp2a, comp2b)
        if worst > compat_tol and on_incompatible == "raise":
            raise CompatibilityError(
                f"compatibility defect {worst:.3g} > {compat_tol:.1g} at order {e} "
                f"(comp1={comp1:.3g}, comp2={comp2a:.3g}/{comp2b:.3g})")
        diag = -P0 @ R @ P0 + Q0 @ R @ Q0
        X = _sylvester_offdiag(H0, P0, Q0, -P0 @ S @ Q0, gap.delta, method)
        Zadj = _sylvester_offdiag(H0, P0, Q0, P0 @ _dag(S) @ Q0, gap.delta, method)
        Pe = diag + X + _dag(Zadj)
        comm = H0 @ Pe - Pe @ H0
        off = P0 @ (comm + S) @ Q0 + Q0 @ (comm + S) @ P0
        log.append(OrderLog(e, R, T, S, comp1, comp2a, comp2b,
                            sup_norm(grid, P0 @ (Pe + R) @ P0),
                            sup_norm(grid, off)))
        terms[e] = Pe
    pi = FormalSymbol(grid, terms, K, q0, (dim, dim))
    return ProjectorHierarchy(pi, source, gap, log, data.eigenvalues, data.eigenvectors, data.mask,
                              data.rank, method)


# --- defect measurement -------------------------------------------------

def _series_norm(grid, sym: FormalSymbol, h: float, keep: Callable[[Fraction], bool]) -> float:
    val = np.zeros(grid.shape + sym.fiber_shape, dtype=complex)
    for e, v in sym.terms.items():
        if keep(e):
            val = val + float(h) ** float(e) * v
    return sup_norm(grid, val)


def _measure(sym: FormalSymbol, K: Fraction, h_values, label, **fit_kw) -> SlopeFit:
    """Defect ``||sum_{e > K} h**e D_e||`` with a floor from the orders ``<= K``."""
    grid = sym.grid
    defects, floors = [], []
    for h in h_values:
        defects.append(_series_norm(grid, sym, h, lambda e: e > K))
        floors.append(10 * _series_norm(grid, sym, h, lambda e: e <= K) + ABS_FLOOR)
    return slope_fit(h_values, defects, floors, label=label, **fit_kw)


def eval_order(K: Fraction, q0: int, extra: int = 2) -> Fraction:
    """Expansion order used when a defect is measured at truncation ``K``."""
    return K + extra


def idempotency_symbol(hier: ProjectorHierarchy, K_eval=None) -> FormalSymbol:
    K_eval = eval_order(hier.K, hier.pi.q0) if K_eval is None else as_fraction(K_eval)
    P = hier.pi.with_K(K_eval)
    return moyal_product(P, P, K_eval) - P


def commutator_symbol(hier: ProjectorHierarchy, K_eval=None) -> FormalSymbol:
    K_eval = eval_order(hier.K, hier.pi.q0) if K_eval is None else as_fraction(K_eval)
    return moyal_commutator(hier.H.with_K(K_eval), hier.pi.with_K(K_eval), K_eval)


def defect_orders(hier: ProjectorHierarchy, h_values: Sequence[float], K_eval=None,
                  **fit_kw) -> tuple[SlopeFit, SlopeFit]:
    """Slopes of the idempotency and commutator defects over an h sweep.

    The defect symbols are expanded to ``K_eval`` (default ``K + 2``); only
    orders above ``K`` survive in exact arithmetic, the size of the lower
    orders sets the numerical floor.
    """
    idem = idempotency_symbol(hier, K_eval)
    comm = commutator_symbol(hier, K_eval)
    return (_measure(idem, hier.K, h_values, "idempotency", **fit_kw),
            _measure(comm, hier.K, h_values, "commutator", **fit_kw))


def orthogonality_defect(h1: ProjectorHierarchy, h2: ProjectorHierarchy, h_values, K_eval=None,
                         **fit_kw) -> SlopeFit:
    """Decay of ``||Pi^1 # Pi^2||`` for hierarchies with disjoint windows."""
    if h1.H is not h2.H and h1.H.terms.keys() != h2.H.terms.keys():
        raise ValueError("hierarchies are built from different symbols")
    if h1.gap.overlaps(h2.gap) or np.any(h1.mask & h2.mask):
        raise WindowError("spectral windows overlap")
    K = min(h1.K, h2.K)
    K_eval = eval_order(K, h1.pi.q0) if K_eval is None else as_fraction(K_eval)
    prod = moyal_product(h1.pi.with_K(K_eval), h2.pi.with_K(K_eval), K_eval)
    return _measure(prod, K, h_values, "orthogonality", **fit_kw)


@dataclass(frozen=True)
class GapScalingRow:
    order: Fraction
    derivative_order: int
    deltas: tuple
    norms: tuple
    exponent: float
    bound: float

    def within_bound(self, slack: float = 0.3) -> bool:
        return self.exponent >= self.bound - slack


def gap_scaling_probe(family: Callable[[float], tuple[FormalSymbol, GapSpec]],
                      orders: Iterable, derivative_orders: Iterable[int],
                      delta_values: Sequence[float]) -> list[GapScalingRow]:
    """Sup norms of ``d^alpha Pi_j`` against the gap parameter.

    ``family(delta)`` returns a symbol and its gap selection.  For each
    ``(j, |alpha|)`` the largest sup norm over all multi-indices of that
    length is fitted to ``C delta**p``; the bound exponent is ``-|alpha| - 2j``.
    """
    orders = [as_fraction(j) for j in orders]
    derivative_orders = list(derivative_orders)
    table = {(j, a): [] for j in orders for a in derivative_orders}
    Kmax = max(orders)
    for d in delta_values:
        H, gap = family(d)
        hier = build_hierarchy(H, gap, Kmax, on_incompatible="record")
        for j in orders:
            vals = hier.pi.coef(j)
            for a in derivative_orders:
                best = 0.0
                for ax in range(a + 1):
                    best = max(best, sup_norm(hier.grid, derivative_array(hier.grid, vals, ax, a - ax)))
                table[(j, a)].append(best)
    rows = []
    for (j, a), norms in table.items():
        p, _ = power_fit(delta_values, norms)
        rows.append(GapScalingRow(j, a, tuple(delta_values), tuple(norms), p, float(-a - 2 * j)))
    return rows
