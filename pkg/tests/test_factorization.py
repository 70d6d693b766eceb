from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg as sla

from adiaband.errors import GaugeObstructionError, RankError
from adiaband.factorization import (GAUGES, build_effective, build_factors, build_u0,
                                    factor_defects, verify_factorization)
from adiaband.models import (MagneticWellSpec, magnetic_well_symbol, rotating_two_level,
                             three_level, x_independent_two_level)
from adiaband.projector import GapSpec, build_hierarchy
from adiaband.quantize import FockLadder, quantize_grid_symbol
from adiaband.symbols import FormalSymbol, MatrixField, PhaseSpaceGrid, symbol_from_functions
from adiaband.wells import WellSettings, base_for, symbol_grid_for

TWO_PI = 2 * np.pi
H_SWEEP = [2.0 ** -k for k in range(3, 10)]


def _dag(a):
    return np.conj(np.swapaxes(a, -1, -2))


@pytest.fixture(scope="module")
def periodic_grid():
    return PhaseSpaceGrid.periodic((0, TWO_PI), (0, TWO_PI), 128, 128, fd_order=8)


@pytest.fixture(scope="module")
def magnetic():
    spec = MagneticWellSpec()
    g = PhaseSpaceGrid.clamped((-2.5, 2.5), (-2.5, 2.5), 40, 40, margin_cells=6, fd_order=6)
    H = magnetic_well_symbol(spec).to_formal(g, FockLadder(12), K=1)
    hier = build_hierarchy(H, GapSpec.from_bands(0, 0, 1.0), 1, on_incompatible="record")
    pair = build_factors(hier, on_incompatible="record")
    return spec, H, hier, pair


# --- leading section ----------------------------------------------------

def test_constant_projector_gives_first_basis_vector():
    g = PhaseSpaceGrid.periodic((0, 1), (0, 1), 16, 16)
    u = build_u0(MatrixField.constant(g, np.diag([1.0, 0.0, 0.0]))).values[..., 0]
    assert np.max(np.abs(u - np.array([1, 0, 0]))) <= 1e-14


def test_rotating_eigenvector_closed_form():
    g = PhaseSpaceGrid.clamped((-3, 3), (-3, 3), 64, 64, margin_cells=4, fd_order=8)
    X, XI = g.mesh()
    theta = 0.3 * np.sin(X) * np.cos(XI)

    def H0(x, k):
        t = 0.3 * np.sin(x) * np.cos(k)
        z = np.zeros(x.shape + (2, 2))
        z[..., 0, 0], z[..., 1, 1] = np.cos(t), -np.cos(t)
        z[..., 0, 1] = z[..., 1, 0] = np.sin(t)
        return z

    H = symbol_from_functions(g, {0: H0}, 0)
    hier = build_hierarchy(H, GapSpec.from_bands(1, 1, 1.0))
    u = build_u0(MatrixField(g, hier.pi0), MatrixField(g, H.coef(0))).values[..., 0]
    ref = np.stack([np.cos(theta / 2), np.sin(theta / 2)], axis=-1)
    assert np.max(np.abs(u - ref)) <= 1e-9


def test_u0_is_unit_and_spans_range(periodic_grid):
    H, gap = rotating_two_level(periodic_grid, K=0)
    hier = build_hierarchy(H, gap)
    u = build_u0(MatrixField(periodic_grid, hier.pi0)).values
    assert np.max(np.abs(np.linalg.norm(u[..., 0], axis=-1) - 1)) <= 1e-13
    assert np.max(np.abs(u @ _dag(u) - hier.pi0)) <= 1e-12


def test_u0_smooth_across_periodic_seam(periodic_grid):
    H, gap = rotating_two_level(periodic_grid, K=0)
    hier = build_hierarchy(H, gap)
    u = build_u0(MatrixField(periodic_grid, hier.pi0)).values[..., 0]
    step = max(np.max(np.abs(np.roll(u, -1, axis=0) - u)), np.max(np.abs(np.roll(u, -1, axis=1) - u)))
    # neighbouring values differ by O(grid spacing), including across the seam
    assert step <= 0.2


def test_fiber_ground_state_at_flat_node(magnetic):
    _, H, hier, pair = magnetic
    g = hier.grid
    i, j = g.n_x // 2, g.n_xi // 2
    assert g.x[i] == pytest.approx(0, abs=1e-14) and g.xi[j] == pytest.approx(0, abs=1e-14)
    u = pair.u_terms[Fraction(0)][i, j, :, 0]
    e1 = np.zeros(12)
    e1[0] = 1
    assert np.max(np.abs(u - e1)) <= 1e-10


def _chern_model(mass):
    g = PhaseSpaceGrid.periodic((0, TWO_PI), (0, TWO_PI), 48, 48, fd_order=4)

    def H0(x, k):
        d1, d2, d3 = np.sin(x), np.sin(k), mass + np.cos(x) + np.cos(k)
        z = np.zeros(x.shape + (2, 2), dtype=complex)
        z[..., 0, 0], z[..., 1, 1] = d3, -d3
        z[..., 0, 1] = d1 - 1j * d2
        z[..., 1, 0] = d1 + 1j * d2
        return z

    return g, symbol_from_functions(g, {0: H0}, 0)


def test_winding_band_has_no_global_section():
    g, H = _chern_model(1.0)
    hier = build_hierarchy(H, GapSpec.from_bands(0, 0, 0.5))
    with pytest.raises(GaugeObstructionError):
        build_u0(MatrixField(g, hier.pi0))


def test_trivial_band_has_global_section():
    g, H = _chern_model(3.0)
    hier = build_hierarchy(H, GapSpec.from_bands(0, 0, 0.5))
    u = build_u0(MatrixField(g, hier.pi0)).values
    assert np.max(np.abs(u @ _dag(u) - hier.pi0)) <= 1e-12


def test_rank_two_projector_rejected(periodic_grid):
    hier = build_hierarchy(three_level(periodic_grid, K=0), GapSpec.from_bands(0, 1, 0.5))
    with pytest.raises(RankError):
        build_u0(MatrixField(periodic_grid, hier.pi0))
    with pytest.raises(RankError):
        build_factors(hier)


# --- factors ------------------------------------------------------------

def test_constant_symbol_factors_vanish():
    g = PhaseSpaceGrid.clamped((-2, 2), (-2, 2), 32, 32, margin_cells=4, fd_order=8)
    A = np.array([[0.0, 0.3], [0.3, 2.0]])
    H = FormalSymbol(g, {0: MatrixField.constant(g, A).values}, 3)
    hier = build_hierarchy(H, GapSpec.from_bands(0, 0, 0.5))
    pair = build_factors(hier)
    for e in (1, 2, 3):
        assert np.max(np.abs(pair.L.coef(e))) <= 1e-12
        assert np.max(np.abs(pair.ell.coef(e))) <= 1e-12
    m = build_effective(H, pair)
    mu = np.linalg.eigvalsh(A)[0]
    assert np.max(np.abs(m.coef(0) - mu)) <= 1e-12
    for e in (1, 2, 3):
        assert np.max(np.abs(m.coef(e))) <= 1e-12


def test_order_zero_relations_exact(periodic_grid):
    H, gap = rotating_two_level(periodic_grid, K=1)
    hier = build_hierarchy(H, gap)
    pair = build_factors(hier)
    L0, l0 = pair.L.coef(0), pair.ell.coef(0)
    assert np.max(np.abs(L0 @ _dag(l0) - 1)) <= 1e-14
    assert np.max(np.abs(_dag(l0) @ L0 - hier.pi0)) <= 1e-14


def test_selfadjoint_gives_equal_factors(magnetic):
    _, _, _, pair = magnetic
    assert pair.max_difference() <= 1e-9


def test_selfadjoint_rotating_gives_equal_factors(periodic_grid):
    H, gap = rotating_two_level(periodic_grid, K=2)
    pair = build_factors(build_hierarchy(H, gap))
    assert pair.max_difference() <= 1e-9


def test_factor_compatibility_small(periodic_grid):
    H, gap = rotating_two_level(periodic_grid, K=2)
    pair = build_factors(build_hierarchy(H, gap))
    assert max(pair.compat_log.values()) <= 1e-8


def test_x_independent_first_order_identity(periodic_grid):
    H, gap = x_independent_two_level(periodic_grid, K=1)
    pair = build_factors(build_hierarchy(H, gap))
    L0, L1 = pair.L.coef(0), pair.L.coef(1)
    l0, l1 = pair.ell.coef(0), pair.ell.coef(1)
    assert np.max(np.abs(L1 @ _dag(l0) + L0 @ _dag(l1))) <= 1e-8


def test_x_independent_effective_first_order_is_quadratic_form(periodic_grid):
    H, gap = x_independent_two_level(periodic_grid, K=1)
    pair = build_factors(build_hierarchy(H, gap))
    m = build_effective(H, pair)
    # direct oracle: lower eigenvector of H0 by eigh, then (H1 u, u)
    _, V = np.linalg.eigh(H.coef(0))
    u = V[..., :, 0]
    form = np.einsum("...i,...ij,...j->...", np.conj(u), H.coef(1), u)
    assert np.max(np.abs(m.coef(1) - form)) <= 1e-8
    assert np.max(np.abs(m.coef(0) - np.linalg.eigvalsh(H.coef(0))[..., 0])) <= 1e-12


def test_unknown_gauge_rejected(periodic_grid):
    H, gap = rotating_two_level(periodic_grid, K=1)
    with pytest.raises(ValueError):
        build_factors(build_hierarchy(H, gap), gauge="middle")


def test_factor_slopes_K2(periodic_grid):
    H, gap = rotating_two_level(periodic_grid, K=2)
    hier = build_hierarchy(H, gap)
    left, right = verify_factorization(build_factors(hier), hier, H_SWEEP)
    assert left.passes(2.8), left.to_dict()
    assert right.passes(2.8), right.to_dict()


# --- effective symbol ---------------------------------------------------

def test_magnetic_effective_leading_order_is_field(magnetic):
    spec, H, _, pair = magnetic
    m = build_effective(H, pair)
    X, XI = pair.L.grid.mesh()
    mu = spec.function("mu1")(X, XI)
    # twelve Fock states resolve the squeezed fiber ground state where the field is moderate
    near = spec.function("B")(X, XI) <= 1.5
    assert np.max(np.abs(m.coef(0) - mu)[near]) <= 1e-6
    assert np.max(np.abs(m.coef(0).imag)) <= 1e-12


def test_magnetic_half_order_vanishes_by_parity(magnetic):
    _, H, _, pair = magnetic
    m = build_effective(H, pair)
    L0 = pair.L.coef(0)
    direct = (L0 @ H.coef(Fraction(1, 2)) @ _dag(pair.ell.coef(0)))[..., 0, 0]
    assert np.max(np.abs(direct)) <= 1e-10
    assert np.max(np.abs(m.coef(Fraction(1, 2)))) <= 1e-10


def test_gauge_choice_leaves_observables_invariant():
    spec = MagneticWellSpec()
    h = 0.02
    s = WellSettings(K=Fraction(1), n_base=128)
    base = base_for(h, s.n_base)
    g = symbol_grid_for(base, s)
    H = magnetic_well_symbol(spec).to_formal(g, FockLadder(12), K=1)
    hier = build_hierarchy(H, GapSpec.from_bands(0, 0, 1.0), 1, on_incompatible="record")
    u0 = build_u0(MatrixField(g, hier.pi0))
    recon, eigs = [], []
    for gauge in GAUGES:
        pair = build_factors(hier, u0, gauge=gauge, on_incompatible="record")
        _, right = factor_defects(pair, hier)
        recon.append({e: right.coef(e) for e in right.exponents if e <= pair.K})
        m = build_effective(H, pair)
        M = quantize_grid_symbol(g, m.evaluate(h), h, base).matrix
        eigs.append(np.sort(sla.eigvals(M).real)[:4])
    for e in recon[0]:
        assert np.max(np.abs(recon[0][e] - recon[1][e])) <= 1e-8
    assert np.max(np.abs(eigs[0] - eigs[1])) <= 1e-8
