"""End-to-end magnetic-well pipeline: full two-scale operator versus effective scalar operator.

Eigenvalues are reported in physical units, ``lambda = h * eig(M_h)``, where
``M_h`` is the two-scale quantization of the normal-form symbol.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, eigsh

from .factorization import build_effective, build_factors, build_u0
from .harness import (FunctionalCalculusDefects, functional_calculus_defects, quasimode_residual,
                      smooth_bump)
from .models import MagneticWellSpec, magnetic_well_symbol
from .projector import GapSpec, build_hierarchy
from .quantize import (BaseGrid, FockLadder, quantize_fiber_model, quantize_grid_matrix,
                       quantize_grid_symbol, spectrum)
from .symbols import MatrixField, PhaseSpaceGrid


@dataclass(frozen=True)
class WellSettings:
    """Discretization of one magnetic-well run.

    ``n_base`` base nodes on ``[-L, L)`` with ``L = sqrt(pi h n_base / 2)``, so
    the resolved frequency range equals the spatial range.  The symbol grid
    has ``symbol_nodes**2`` nodes on ``[-grid_scale L, grid_scale L]**2``.
    """

    fock_m: int = 12
    n_base: int = 256
    symbol_nodes: int = 64
    grid_scale: float = 1.25
    margin_cells: int = 6
    fd_order: int = 6
    K: Fraction = Fraction(1)
    window_C: float = 2.5
    chi_eps: float = 0.1

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["K"] = str(self.K)
        return d


@dataclass
class WellResult:
    h: float
    full_eigs: np.ndarray
    eff_eigs: np.ndarray
    eff_imag: float
    full_to_eff: list
    eff_to_full: list
    transfer_condition: list
    fc: FunctionalCalculusDefects | None
    compat: dict
    mu0: float = 1.0
    b0: float = 1.0
    hierarchy_log: list = field(default_factory=list)


def base_for(h: float, n_base: int) -> BaseGrid:
    L = float(np.sqrt(np.pi * h * n_base / 2))
    return BaseGrid(-L, L, n_base)


def symbol_grid_for(base: BaseGrid, s: WellSettings) -> PhaseSpaceGrid:
    R = s.grid_scale * base.x_max
    return PhaseSpaceGrid.clamped((-R, R), (-R, R), s.symbol_nodes, s.symbol_nodes,
                                  margin_cells=s.margin_cells, fd_order=s.fd_order)


def lowest_eigenpairs(M: np.ndarray, k: int, shift: float) -> tuple[np.ndarray, np.ndarray]:
    """The ``k`` eigenpairs of Hermitian ``M`` closest to ``shift`` (shift-invert Lanczos).

    With ``shift`` below the spectrum these are the ``k`` lowest.
    """
    lu = sla.lu_factor(M - shift * np.eye(len(M)))
    op = LinearOperator(M.shape, matvec=lambda v: sla.lu_solve(lu, v), dtype=M.dtype)
    mu, V = eigsh(op, k=k, which="LM", v0=np.ones(len(M), dtype=M.dtype))
    w = shift + 1 / mu
    order = np.argsort(w)
    return w[order], V[:, order]


def run_well(spec: MagneticWellSpec, h: float, settings: WellSettings = WellSettings(), *,
             n_pairs: int = 4, functional_calculus: bool = True,
             quasimodes: bool = True) -> WellResult:
    """Build and diagonalize both operators at one value of ``h``."""
    s = settings
    sym = magnetic_well_symbol(spec)
    ladder = FockLadder(s.fock_m)
    base = base_for(h, s.n_base)
    grid = symbol_grid_for(base, s)
    info = spec.check(grid)
    mu0, b0 = info["mu0"], info["b0"]

    full = quantize_fiber_model(sym, ladder, base, h)
    Mf = (full.matrix + full.matrix.conj().T) / 2
    if functional_calculus:
        # chi(H) needs every eigenpair in the support of the bump
        wf, Vf = sla.eigh(Mf, subset_by_value=(-np.inf, mu0 + b0 / 2 + 1e-9))
    else:
        wf, Vf = lowest_eigenpairs(Mf, n_pairs + 4, mu0 - b0 / 4)

    H = sym.to_formal(grid, ladder, K=s.K)
    hier = build_hierarchy(H, GapSpec.from_bands(0, 0, b0), s.K, on_incompatible="record")
    u0 = build_u0(MatrixField(grid, hier.pi0))
    pair = build_factors(hier, u0, on_incompatible="record")
    m = build_effective(H, pair)
    mvals = m.evaluate(h)
    eff = quantize_grid_symbol(grid, mvals, h, base)
    Me = eff.matrix
    he = (Me + Me.conj().T) / 2
    we, Ve = sla.eigh(he, subset_by_index=[0, n_pairs + 3])
    # the effective operator is selfadjoint only up to discretization error
    ev_all = sla.eigvals(Me)
    ev_all = ev_all[np.argsort(ev_all.real)][: n_pairs + 4]
    eff_imag = float(np.max(np.abs(ev_all.imag)) * h)

    f2e, e2f, cond = [], [], []
    if quasimodes:
        Lw = quantize_grid_matrix(grid, pair.L.evaluate(h), h, base).matrix
        lw = quantize_grid_matrix(grid, pair.ell.evaluate(h), h, base).matrix
        for j in range(n_pairs):
            psi = Vf[:, j]
            Psi = Lw @ psi
            f2e.append(h * quasimode_residual(Me, Psi, wf[j]))
            Phi = Ve[:, j]
            phi = lw.conj().T @ Phi
            e2f.append(h * quasimode_residual(full.matrix, phi, we[j]))
            cond.append(float(np.linalg.norm(Phi) / np.linalg.norm(phi)))

    fc = None
    if functional_calculus:
        Piw = quantize_grid_matrix(grid, hier.pi.evaluate(h), h, base).matrix
        chi = smooth_bump(mu0 - s.chi_eps, mu0 + b0 / 2)
        fc = functional_calculus_defects(wf, Vf, Piw, chi)

    return WellResult(
        h=float(h),
        full_eigs=h * wf[: n_pairs + 4],
        eff_eigs=h * ev_all.real,
        eff_imag=eff_imag,
        full_to_eff=f2e,
        eff_to_full=e2f,
        transfer_condition=cond,
        fc=fc,
        compat={"hierarchy": hier.max_compatibility(),
                "factors": max(pair.compat_log.values(), default=0.0)},
        mu0=float(mu0),
        b0=float(b0),
        hierarchy_log=[l.summary() for l in hier.defect_log],
    )


def well_window(mu0: float, C: float):
    """Protected window ``(mu0 h, mu0 h + C h**2)`` in physical units."""
    return lambda h: (mu0 * h, mu0 * h + C * h ** 2)
