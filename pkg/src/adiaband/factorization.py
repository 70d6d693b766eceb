"""Rank-one factorization ``L # l* = 1``, ``l* # L = Pi`` and the effective scalar symbol."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import CompatibilityError, GaugeObstructionError, RankError
from .fitting import SlopeFit
from .projector import COMPAT_TOL, ProjectorHierarchy, _measure, eval_order
from .symbols import (FormalSymbol, MatrixField, PhaseSpaceGrid, as_fraction, moyal_product,
                      sup_norm)

RANK_TOL = 1e-8


def _dag(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _reference_node(grid: PhaseSpaceGrid) -> tuple[int, int]:
    return (grid.n_x // 2, grid.n_xi // 2)


def _align(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Rotate ``cur`` so that its overlap with ``prev`` is real positive."""
    ov = np.sum(np.conj(prev) * cur, axis=-1)
    ph = np.where(np.abs(ov) > 0, ov / np.maximum(np.abs(ov), 1e-300), 1.0)
    return cur * np.conj(ph)[..., None]


def _phase(z):
    return np.angle(z)


def build_u0(pi0: MatrixField, H0: MatrixField | None = None) -> MatrixField:
    """Unit section ``u0`` of the range of a rank-one projector field.

    The phase is fixed by making the largest component real positive at the
    central node, then transporting along the central xi row and from there
    along every xi column so that neighbouring overlaps are real positive.  On
    periodic grids the holonomy of each loop is spread linearly along it; a
    net winding of the xi holonomies around the x loop means no smooth global
    section exists and raises :class:`GaugeObstructionError`.

    Returns a field of shape ``(n_x, n_xi, p, 1)``.
    """
    grid = pi0.grid
    P = pi0.values
    tr = np.real(np.trace(P, axis1=-2, axis2=-1))
    if np.max(np.abs(tr - 1)) > RANK_TOL:
        raise RankError(f"projector trace ranges over [{tr.min():.6g}, {tr.max():.6g}], expected 1")
    _, V = np.linalg.eigh((P + _dag(P)) / 2)
    u = V[..., :, -1].copy()                      # (nx, nxi, p)
    if H0 is not None:
        Hu = np.einsum("...ij,...j->...i", H0.values, u)
        lam = np.sum(np.conj(u) * Hu, axis=-1)
        if np.max(np.linalg.norm(Hu - lam[..., None] * u, axis=-1)) > 1e-6 * max(1.0, np.max(np.abs(lam))):
            raise RankError("range of the projector is not an eigenvector of H0")
    ix, ik = _reference_node(grid)
    nx, nk = grid.shape
    ref = u[ix, ik]
    j = int(np.argmax(np.abs(ref)))
    u[ix, ik] = ref * np.conj(ref[j]) / abs(ref[j])

    # transport along the reference row
    for i in range(ix + 1, nx):
        u[i, ik] = _align(u[i - 1, ik], u[i, ik])
    for i in range(ix - 1, -1, -1):
        u[i, ik] = _align(u[i + 1, ik], u[i, ik])
    if grid.is_periodic:
        # spread the x-loop holonomy linearly along the cycle that starts at ix
        hol = _phase(np.vdot(u[nx - 1, ik], u[0, ik]))
        u[:, ik] *= np.exp(1j * hol * _cycle_coordinate(nx, ix))[:, None]
    # transport every column along xi
    for k in range(ik + 1, nk):
        u[:, k] = _align(u[:, k - 1], u[:, k])
    for k in range(ik - 1, -1, -1):
        u[:, k] = _align(u[:, k + 1], u[:, k])
    if grid.is_periodic:
        raw = _phase(np.sum(np.conj(u[:, nk - 1]) * u[:, 0], axis=-1))
        closed = np.unwrap(np.append(raw, raw[0]))
        winding = (closed[-1] - closed[0]) / (2 * np.pi)
        if abs(winding) >= 0.5:
            raise GaugeObstructionError(f"xi holonomy winds {winding:.2f} times around the x loop")
        hol = closed[:-1]
        u *= np.exp(1j * hol[:, None] * _cycle_coordinate(nk, ik)[None, :])[..., None]
    return MatrixField(grid, u[..., None])


def _cycle_coordinate(n: int, start: int) -> np.ndarray:
    """Position along a cycle of ``n`` nodes starting at ``start``, minus 1 past the seam."""
    k = np.arange(n)
    return ((k - start) % n) / n - (k < start)


def _u_to_row(u: MatrixField) -> np.ndarray:
    return _dag(u.values)


@dataclass(frozen=True)
class FactorPair:
    """Covector series ``L``, ``l`` with ``L_k = (u_k, .)`` and ``l_k = (v_k, .)``.

    Attributes
    ----------
    L, ell : FormalSymbol with fiber shape ``(1, p)``.
    gauge : name of the rule that fixed the range components.
    gauge_log : per exponent, the scalar fields ``(a, b)`` with
        ``L_e = a L_0 + ...`` and ``l_e = b l_0 + ...``.
    compat_log : per exponent, the residual of the solvability condition.
    """

    L: FormalSymbol
    ell: FormalSymbol
    gauge: str
    gauge_log: dict
    compat_log: dict

    @property
    def u_terms(self) -> dict:
        return {e: _dag(v) for e, v in self.L.terms.items()}

    @property
    def v_terms(self) -> dict:
        return {e: _dag(v) for e, v in self.ell.terms.items()}

    @property
    def K(self) -> Fraction:
        return self.L.K

    def max_difference(self) -> float:
        """``max_k ||L_k - l_k||``."""
        return max(sup_norm(self.L.grid, self.L.coef(e) - self.ell.coef(e))
                   for e in set(self.L.terms) | set(self.ell.terms))


GAUGES = ("equal", "left")


def build_factors(hier: ProjectorHierarchy, u0: MatrixField | None = None, K=None, *,
                  gauge: str = "equal", compat_tol: float = COMPAT_TOL,
                  on_incompatible: str = "raise") -> FactorPair:
    """Order-by-order construction of ``L`` and ``l`` from a rank-one hierarchy.

    At exponent ``e``, with partial sums ``L_<e``, ``l_<e``, ``Pi_<e``:

    * ``W = [L_<e # l_<e*]_e``, ``U = -[L_<e # Pi_<e]_e``, ``V = -[l_<e # Pi_<e*]_e``;
    * off-range parts ``L_e Q = L_0 Pi_e - U`` and ``l_e Q = l_0 Pi_e* - V``, which
      requires ``(L_0 Pi_e - U) P = 0`` (and the same for ``l``);
    * range parts ``L_e u_0 = a``, ``l_e u_0 = b`` with ``a + conj(b) = -W``.

    ``gauge="equal"`` takes ``a = -W/2`` and ``b = -conj(W)/2``, which gives
    ``L = l`` for selfadjoint ``H``.  ``gauge="left"`` puts everything on ``L``.
    """
    if hier.rank != 1:
        raise RankError(f"factorization needs a rank-one projector, got rank {hier.rank}")
    if gauge not in GAUGES:
        raise ValueError(f"gauge must be one of {GAUGES}")
    grid = hier.grid
    K = hier.K if K is None else as_fraction(K)
    if K > hier.K:
        raise ValueError("hierarchy not built to the requested order")
    q0 = hier.pi.q0
    P0 = hier.pi0
    dim = P0.shape[-1]
    Q0 = np.eye(dim) - P0
    if u0 is None:
        u0 = build_u0(MatrixField(grid, P0))
    L0 = _u_to_row(u0)
    Pi = hier.pi.truncate(K)
    Pi_adj = Pi.adjoint()
    Lt = {Fraction(0): L0}
    lt = {Fraction(0): L0.copy()}
    glog, clog = {}, {}
    for n in range(1, int(K * q0) + 1):
        e = Fraction(n, q0)
        Lp = FormalSymbol(grid, Lt, e, q0, (1, dim))
        lp = FormalSymbol(grid, lt, e, q0, (1, dim))
        W = moyal_product(Lp, lp.adjoint(), e).coef(e)[..., 0, 0]
        U = -moyal_product(Lp, Pi.below(e).with_K(e), e).coef(e)
        V = -moyal_product(lp, Pi_adj.below(e).with_K(e), e).coef(e)
        Pe = Pi.coef(e)
        offL = L0 @ Pe - U
        offl = L0 @ _dag(Pe) - V
        res = max(sup_norm(grid, offL @ P0), sup_norm(grid, offl @ P0))
        clog[e] = res
        if res > compat_tol and on_incompatible == "raise":
            raise CompatibilityError(f"factor solvability defect {res:.3g} at order {e}")
        if gauge == "equal":
            a = -W / 2
            b = -np.conj(W) / 2
        else:
            a = -W
            b = np.zeros_like(W)
        Lt[e] = a[..., None, None] * L0 + offL @ Q0
        lt[e] = b[..., None, None] * L0 + offl @ Q0
        glog[e] = (a, b)
    L = FormalSymbol(grid, Lt, K, q0, (1, dim))
    ell = FormalSymbol(grid, lt, K, q0, (1, dim))
    return FactorPair(L, ell, gauge, glog, clog)


def factor_defects(pair: FactorPair, hier: ProjectorHierarchy, K_eval=None):
    """Symbols ``L # l* - 1`` and ``l* # L - Pi`` expanded to ``K_eval``."""
    K_eval = eval_order(pair.K, pair.L.q0) if K_eval is None else as_fraction(K_eval)
    L = pair.L.with_K(K_eval)
    ell = pair.ell.with_K(K_eval)
    one = FormalSymbol.identity(L.grid, 1, K_eval, L.q0)
    left = moyal_product(L, ell.adjoint(), K_eval) - one
    right = moyal_product(ell.adjoint(), L, K_eval) - hier.pi.truncate(pair.K).with_K(K_eval)
    return left, right


def verify_factorization(pair: FactorPair, hier: ProjectorHierarchy, h_values: Sequence[float],
                         K_eval=None, **fit_kw) -> tuple[SlopeFit, SlopeFit]:
    """Decay slopes of ``||L # l* - 1||`` and ``||l* # L - Pi||``."""
    left, right = factor_defects(pair, hier, K_eval)
    return (_measure(left, pair.K, h_values, "L#l*-1", **fit_kw),
            _measure(right, pair.K, h_values, "l*#L-Pi", **fit_kw))


@dataclass(frozen=True)
class EffectiveSymbol:
    """Scalar symbol ``m = L # H # l*`` truncated at ``K``."""

    symbol: FormalSymbol
    gauge: str
    source: str = ""

    @property
    def grid(self) -> PhaseSpaceGrid:
        return self.symbol.grid

    def coef(self, e) -> np.ndarray:
        return self.symbol.coef(e)[..., 0, 0]

    def evaluate(self, h: float) -> np.ndarray:
        return self.symbol.evaluate(h)[..., 0, 0]


def build_effective(H: FormalSymbol, pair: FactorPair, K=None, source: str = "") -> EffectiveSymbol:
    """Effective scalar symbol ``L # H # l*`` keeping exponents ``<= K``."""
    K = pair.K if K is None else as_fraction(K)
    if K > pair.K:
        raise ValueError("factors not built to the requested order")
    Ht = H.with_K(K)
    m = moyal_product(moyal_product(pair.L.truncate(K), Ht, K), pair.ell.truncate(K).adjoint(), K)
    return EffectiveSymbol(m, pair.gauge, source)
