from fractions import Fraction

import numpy as np
import pytest

from adiaband.factorization import build_effective, build_factors
from adiaband.fitting import power_fit, require_unsaturated, slope_fit
from adiaband.errors import FloorError
from adiaband.harness import (compare_spectra, exact_projector_check, functional_calculus_check,
                              functional_calculus_defects, quasimode_residual, smooth_bump)
from adiaband.models import MagneticWellSpec, magnetic_well_symbol, smooth_two_level
from adiaband.projector import GapSpec, build_hierarchy, defect_orders
from adiaband.quantize import (BaseGrid, FockLadder, quantize_fiber_model, quantize_grid_symbol,
                               spectrum)
from adiaband.symbols import PhaseSpaceGrid
from adiaband.wells import WellSettings, run_well, well_window
from oracles import random_hermitian

H_SWEEP = [2.0 ** -k for k in range(3, 10)]
WELL_H = [0.04, 0.03, 0.02, 0.015, 0.01, 0.0075, 0.005]


# --- slope fitting ------------------------------------------------------

def test_linear_defects_slope_one():
    fit = slope_fit(H_SWEEP, [3.0 * h for h in H_SWEEP])
    assert fit.slope == pytest.approx(1.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_cubic_defects_slope_three():
    assert slope_fit(H_SWEEP, [0.5 * h ** 3 for h in H_SWEEP]).slope == pytest.approx(3.0, abs=1e-12)


def test_floor_points_excluded():
    d = [h ** 2 for h in H_SWEEP[:5]] + [1e-20, 1e-20]
    fit = slope_fit(H_SWEEP, d)
    assert fit.used == (True,) * 5 + (False, False)
    assert fit.floor_flag
    assert fit.slope == pytest.approx(2.0, abs=1e-12)


def test_all_floor_is_saturated():
    fit = slope_fit(H_SWEEP, [0.0] * len(H_SWEEP))
    assert fit.saturated and fit.passes(100)
    with pytest.raises(FloorError):
        require_unsaturated(fit)


def test_sweep_requirements():
    with pytest.raises(ValueError, match="points"):
        slope_fit([0.1, 0.05, 0.01], [1, 2, 3])
    with pytest.raises(ValueError, match="decades"):
        slope_fit([0.1, 0.09, 0.08, 0.07, 0.06], [1, 1, 1, 1, 1])
    with pytest.raises(ValueError):
        slope_fit(H_SWEEP, [-1.0] * len(H_SWEEP))


def test_power_fit_exponent():
    p, c = power_fit([0.4, 0.2, 0.1], [2 * 0.4 ** -2, 2 * 0.2 ** -2, 2 * 0.1 ** -2])
    assert p == pytest.approx(-2) and c == pytest.approx(2)


def test_projector_K1_slope_window():
    g = PhaseSpaceGrid.clamped((-4, 4), (-4, 4), 160, 160, margin_cells=8, fd_order=8)
    H, gap = smooth_two_level(g, K=1)
    for fit in defect_orders(build_hierarchy(H, gap), H_SWEEP):
        assert 1.8 <= fit.slope <= 2.4, fit.to_dict()


# --- spectral comparison ------------------------------------------------

def test_compare_spectra_pairs_and_fits():
    hs = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001]
    full = [[h, 3 * h, 10.0] for h in hs]
    eff = [[h + h ** 3, 3 * h + 2 * h ** 3] for h in hs]
    rep = compare_spectra(hs, full, eff, lambda h: (0, 5 * h))
    assert not any(rep.count_mismatch)
    assert rep.fits["eigenvalue_difference"].slope == pytest.approx(3, abs=1e-10)
    assert rep.monotone_below() == pytest.approx(0.1)


def test_compare_spectra_records_count_mismatch():
    hs = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001]
    full = [[h, 3 * h] for h in hs]
    eff = [[h + h ** 2] for h in hs]
    rep = compare_spectra(hs, full, eff, lambda h: (0, 5 * h))
    assert all(rep.count_mismatch)
    assert all(len(f) == 1 for f in rep.full)


def test_quasimode_of_exact_eigenpair():
    rng = np.random.default_rng(0)
    M = random_hermitian(rng, np.linspace(0, 3, 12))
    w, V = np.linalg.eigh(M)
    for j in range(12):
        assert quasimode_residual(M, V[:, j], w[j]) <= 1e-10
    with pytest.raises(ValueError):
        quasimode_residual(M, np.zeros(12), 0.0)


# --- functional calculus ------------------------------------------------

def test_bump_profile():
    chi = smooth_bump(0.0, 2.0)
    assert chi(np.array([1.0]))[0] == pytest.approx(1.0)
    assert np.all(chi(np.array([-0.1, 0.0, 2.0, 3.0])) == 0)
    with pytest.raises(ValueError):
        smooth_bump(1.0, 1.0)


def test_exact_projector_commutes():
    rng = np.random.default_rng(1)
    H = random_hermitian(rng, np.concatenate([rng.uniform(0, 1, 4), rng.uniform(3, 4, 6)]))
    d = exact_projector_check(H, (-0.5, 1.5), smooth_bump(-0.5, 1.2))
    assert d.commutator <= 1e-12 and d.range_inclusion <= 1e-12
    assert d.rank == 4


def test_unit_cutoff_gives_zero_commutator():
    rng = np.random.default_rng(2)
    H = random_hermitian(rng, rng.uniform(0, 1, 8))
    w, V = np.linalg.eigh(H)
    P = np.eye(8)[:, :3] @ np.eye(8)[:3]
    d = functional_calculus_defects(w, V, P, lambda t: np.ones_like(t), range_check=False)
    assert d.commutator <= 1e-12 and d.range_inclusion is None


def test_lowrank_commutator_matches_dense():
    rng = np.random.default_rng(3)
    H = random_hermitian(rng, rng.uniform(0, 4, 10))
    w, V = np.linalg.eigh(H)
    P = random_hermitian(rng, [1, 1, 0, 0, 0, 0, 0, 0, 0, 0])
    chi = smooth_bump(0.5, 3.0)
    d = functional_calculus_defects(w, V, P, chi)
    C = V @ np.diag(chi(w)) @ V.conj().T
    assert d.commutator == pytest.approx(np.linalg.norm(C @ P - P @ C, 2), rel=1e-10)
    assert d.range_inclusion == pytest.approx(np.linalg.norm(P @ C - C, 2), rel=1e-10)


def test_functional_calculus_check_slopes():
    class D:
        def __init__(self, h):
            self.commutator, self.range_inclusion = h ** 2, 2 * h ** 2

    comm, rng = functional_calculus_check(H_SWEEP, [D(h) for h in H_SWEEP])
    assert comm.slope == pytest.approx(2) and rng.slope == pytest.approx(2)


# --- magnetic well ------------------------------------------------------

def test_flat_field_effective_symbol_is_constant():
    spec = MagneticWellSpec(B="1")
    h = 0.05
    g = PhaseSpaceGrid.clamped((-1.5, 1.5), (-1.5, 1.5), 24, 24, margin_cells=4, fd_order=6)
    lad = FockLadder(8)
    sym = magnetic_well_symbol(spec)
    H = sym.to_formal(g, lad, K=1)
    hier = build_hierarchy(H, GapSpec.from_bands(0, 0, 1.0), 1)
    m = build_effective(H, build_factors(hier))
    assert np.max(np.abs(m.evaluate(h) - 1)) <= 1e-12
    base = BaseGrid(-1, 1, 16)
    full = spectrum(quantize_fiber_model(sym, lad, base, h), (0, 2)).values
    eff = spectrum(quantize_grid_symbol(g, m.evaluate(h), h, base)).values
    assert np.max(np.abs(full - eff)) <= 1e-10


@pytest.fixture(scope="module")
def well_runs():
    s = WellSettings(n_base=128, K=Fraction(1))
    return [run_well(MagneticWellSpec(), h, s, n_pairs=2, functional_calculus=False) for h in WELL_H]


def test_ground_level_over_h_tends_to_field_minimum(well_runs):
    ratio = np.array([r.full_eigs[0] / r.h for r in well_runs])
    assert np.all(np.diff(ratio) < 0)
    assert abs(ratio[-1] - 1) <= 0.01


def test_paired_spectra_in_protected_window(well_runs):
    rep = compare_spectra(WELL_H, [r.full_eigs for r in well_runs], [r.eff_eigs for r in well_runs],
                          well_window(1.0, 2.5), min_decades=0.9)
    assert not any(rep.count_mismatch)
    assert all(len(f) >= 2 for f in rep.full)


def test_effective_operator_nearly_selfadjoint(well_runs):
    # imaginary parts of the quantized effective spectrum, physical units
    imag = np.array([r.eff_imag for r in well_runs])
    assert np.all(imag <= 1e-6 * np.array(WELL_H))


@pytest.mark.parametrize("direction", ["full_to_eff", "eff_to_full"])
def test_ground_state_transfer_residual_slope(well_runs, direction):
    # stored residuals are in physical units (times h); the matrix residual is that over h
    res = [getattr(r, direction)[0] / r.h for r in well_runs]
    fit = slope_fit(WELL_H, res, min_decades=0.9)
    assert fit.slope >= 1.8, fit.to_dict()


def test_transfer_condition_bounded(well_runs):
    cond = np.array([r.transfer_condition for r in well_runs])
    assert np.all(cond < 10) and np.all(cond > 0.1)
