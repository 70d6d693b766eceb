import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adiaband.errors import BracketError, FlatCurveError, WindowError
from adiaband.models import (DIRICHLET, DeGennesModel, MagneticWellSpec, band_threshold,
                             count_bands, degennes_eigen, degennes_shooting, dispersion_minimum,
                             harmonic_oracle, magnetic_well_symbol)
from adiaband.quantize import FockLadder
from oracles import parabolic_cylinder_levels

# minima of sigma -> mu_n(gamma, sigma) from the parabolic-cylinder oracle
# (tests/oracles.py) refined with Brent's method
THETA = {
    (0.0, 1): (0.590106125, 0.7681837),
    (0.0, 2): (2.634859402, 1.6232250),
    (1.0, 1): (0.961468386, 1.4005243),
    (1.0, 2): (2.948356664, 1.9870471),
    (-0.5, 1): (0.058375052, 0.5553153),
}


# --- magnetic-well symbol -----------------------------------------------

def test_flat_field_symbol_is_fiber_oscillator():
    sym = magnetic_well_symbol(MagneticWellSpec(B="1"))
    assert sym.orders() == [0]
    monos = {(a, b): fn(np.array(0.3), np.array(-0.2)) for _, a, b, fn in sym.terms}
    assert set(monos) == {(2, 0), (0, 2)}
    assert all(np.isclose(v, 1) for v in monos.values())


def test_symbol_degrees_and_parity():
    sym = magnetic_well_symbol(MagneticWellSpec(B="1 + (q1**2 + q2**2)/4 + q1**3/10", J=3))
    for n, a, b, _ in sym.terms:
        assert a + b <= n + 2
        assert (a + b - n) % 2 == 0


def test_fiber_branches_are_odd_multiples_of_field():
    spec = MagneticWellSpec()
    sym = magnetic_well_symbol(spec)
    lad = FockLadder(40)
    pts = np.array([[0.0, 0.0], [0.5, -0.3], [1.0, 1.0]])
    for x2, xi2 in pts:
        E = np.linalg.eigvalsh(sym.fiber_matrices(np.array(x2), np.array(xi2), lad, 0))
        B = spec.function("B")(np.array(x2), np.array(xi2))
        assert np.allclose(E[:3], [B, 3 * B, 5 * B], atol=1e-8)
        # neighbouring branches are separated by at least 2 b0 with b0 = 1
        assert np.min(np.diff(E[:3])) >= 2.0 - 1e-10


def test_half_order_term_is_odd_so_ground_expectation_vanishes():
    spec = MagneticWellSpec()
    sym = magnetic_well_symbol(spec)
    lad = FockLadder(20)
    x2, xi2 = np.array(0.7), np.array(-0.4)
    P0 = sym.fiber_matrices(x2, xi2, lad, 0)
    P1 = sym.fiber_matrices(x2, xi2, lad, 1)
    _, U = np.linalg.eigh(P0)
    u0 = U[:, 0]
    assert abs(np.vdot(u0, P1 @ u0)) <= 1e-12


def test_taylor_order_cap():
    with pytest.raises(ValueError):
        MagneticWellSpec(J=5)


def test_field_check_rejects_boundary_minimum():
    from adiaband.symbols import PhaseSpaceGrid
    g = PhaseSpaceGrid.clamped((0, 2), (0, 2), 16, 16, margin_cells=2, fd_order=4)
    with pytest.raises(ValueError):
        MagneticWellSpec().check(g)


def test_harmonic_oracle_quadratic_well():
    pred = harmonic_oracle(MagneticWellSpec())
    assert pred.mu0 == pytest.approx(1.0, abs=1e-12)
    assert pred.z_star == pytest.approx((0.0, 0.0), abs=1e-8)
    # Hess (B + V) = diag(1/2, 1/2)
    assert pred.c0 == pytest.approx(0.25, abs=1e-10)
    assert pred.c1 == pytest.approx(0.5, abs=1e-8)
    assert pred.eigenvalue(1, 0.1) == pytest.approx(0.1 + 0.75 * 0.01)


# --- De Gennes levels ---------------------------------------------------

def test_neumann_parity_levels():
    mu = degennes_eigen(DeGennesModel(0.0, 0.0), 2).mu
    assert np.allclose(mu, [1, 5], atol=1e-7)


def test_dirichlet_parity_levels():
    mu = degennes_eigen(DeGennesModel(DIRICHLET, 0.0), 2).mu
    assert np.allclose(mu, [3, 7], atol=1e-7)


def test_shooting_matches_parity_levels():
    assert np.allclose(degennes_shooting(0.0, 0.0, 2), [1, 5], atol=1e-10)
    assert np.allclose(degennes_shooting(DIRICHLET, 0.0, 2), [3, 7], atol=1e-10)


def test_model_validation():
    with pytest.raises(ValueError):
        DeGennesModel(0.0, 0.0, n_t=100)
    with pytest.raises(ValueError):
        DeGennesModel(0.0, 3.0, t_max=5.0)


def test_eigenvectors_normalized():
    lev = degennes_eigen(DeGennesModel(1.0, 0.5), 2, vectors=True)
    dt = lev.t[1] - lev.t[0]
    assert np.allclose(np.sum(lev.modes ** 2, axis=0) * dt, 1, atol=1e-10)


@settings(max_examples=8, deadline=None)
@given(st.sampled_from([0.0, 0.5, 1.0, 2.0, DIRICHLET]), st.floats(-1.0, 3.0))
def test_fd_levels_match_parabolic_cylinder(gamma, sigma):
    mu = degennes_eigen(DeGennesModel(gamma, sigma), 2).mu
    ref = parabolic_cylinder_levels(gamma, sigma, 2, step=0.01)
    assert np.allclose(mu, ref, atol=1e-6)
    assert mu[0] < mu[1]


# --- dispersion minima --------------------------------------------------

@pytest.mark.parametrize("gamma, n", list(THETA))
def test_dispersion_minimum_values(gamma, n):
    theta, sigma = THETA[(gamma, n)]
    res = dispersion_minimum(gamma, n)
    assert res.theta == pytest.approx(theta, abs=1e-6)
    assert res.sigma == pytest.approx(sigma, abs=1e-3)
    assert 2 * n - 3 < res.theta < 2 * n - 1
    assert res.curvature > 0


def test_neumann_ground_minimum_reference():
    res = dispersion_minimum(0.0, 1)
    assert res.theta == pytest.approx(0.590106, abs=1e-6)
    assert res.sigma == pytest.approx(0.7681, abs=1e-3)


def test_dirichlet_ground_threshold_inside_interval():
    theta = band_threshold(DIRICHLET, 1)
    assert -1 < theta < 1
    assert theta > THETA[(0.0, 1)][0]


def test_dirichlet_curve_is_monotone_without_minimum():
    with pytest.raises(FlatCurveError):
        dispersion_minimum(DIRICHLET, 1)
    vals = [degennes_eigen(DeGennesModel(DIRICHLET, s), 1).mu[0] for s in (0.0, 2.0, 4.0, 6.0)]
    assert np.all(np.diff(vals) < 0) and vals[-1] > 1


def test_minimum_outside_interval_raises():
    with pytest.raises((BracketError, FlatCurveError)):
        dispersion_minimum(0.0, 1, sigma_range=(2.0, 6.0))


# --- band counting ------------------------------------------------------

def test_count_above_threshold():
    assert count_bands(0.0, 0.8, 0.95) == 1


def test_count_below_threshold():
    assert count_bands(0.0, 0.1, 0.3) == 0


def test_count_second_interval():
    # Theta^[1](0) = 2.6349
    assert count_bands(0.0, 2.2, 2.8) == 2
    assert count_bands(0.0, 2.2, 2.5) == 1


def test_count_uses_supplied_threshold():
    assert count_bands(0.0, 2.2, 2.8, threshold=lambda g, n: 2.9) == 1


def test_straddling_window_rejected():
    with pytest.raises(WindowError):
        count_bands(0.0, 0.5, 1.5)
    with pytest.raises(ValueError):
        count_bands(0.0, 0.5, 0.4)
