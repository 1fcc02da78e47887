import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bhsignal.numkit import (NumericalError, OdeSpec, QuadratureSpec, cauchy_pv, cin, cosint,
                             gauss_legendre, integrate_1d, integrate_panels, legendre_p,
                             legendre_table, ode_solve, panel_edges, sinc, sinint)


def test_legendre_trivial_values():
    assert legendre_p(0, 0.3) == 1.0
    assert legendre_p(1, 0.3) == 0.3
    assert legendre_p(100, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_legendre_rejects_bad_arguments():
    with pytest.raises(ValueError):
        legendre_p(2, 1.5)
    with pytest.raises(ValueError):
        legendre_p(-1, 0.2)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-1, 1), ell=st.integers(1, 149))
def test_legendre_recurrence(x, ell):
    lhs = (ell + 1) * legendre_p(ell + 1, x)
    rhs = (2 * ell + 1) * x * legendre_p(ell, x) - ell * legendre_p(ell - 1, x)
    assert abs(lhs - rhs) < 1e-12


def test_legendre_table_matches_scalar():
    tab = legendre_table(40, 0.37)
    assert np.allclose(tab, [legendre_p(l, 0.37) for l in range(41)], atol=1e-14)


def test_sine_and_cosine_integrals():
    assert sinint(0.0) == 0.0
    assert abs(sinint(1e3) - math.pi / 2) < 1e-3
    # independent arbitrary-precision oracle
    assert cosint(1.0) == pytest.approx(float(mpmath.ci(1)), abs=1e-14)
    assert cosint(1.0) == pytest.approx(0.3374039229, abs=1e-10)
    with pytest.raises(ValueError):
        cosint(0.0)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(1e-6, 200))
def test_sinint_odd_and_oracle(x):
    assert sinint(-x) == -sinint(x)
    assert sinint(x) == pytest.approx(float(mpmath.si(x)), abs=1e-13)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-60, 60))
def test_cin_matches_definition(x):
    # Cin(x) = int_0^x (1 - cos t)/t dt, via arbitrary precision
    ref = float(mpmath.quad(lambda t: (1 - mpmath.cos(t)) / t, [0, x])) if x else 0.0
    assert cin(x) == pytest.approx(ref, abs=1e-12, rel=1e-12)


def test_sinc_limits():
    assert sinc(0.0) == 1.0
    assert abs(sinc(math.pi)) < 1e-16
    assert sinc(1e-9) == 1.0


def test_integrate_1d_examples():
    assert integrate_1d(np.sin, 0, math.pi) == pytest.approx(2.0, abs=1e-12)
    assert integrate_1d(lambda s: 1.0, 0, 1) == pytest.approx(1.0)
    val = integrate_1d(lambda s: np.exp(10j * s), 0, 1)
    assert abs(val - (np.exp(10j) - 1) / 10j) < 1e-10
    assert integrate_1d(np.sin, 1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        integrate_1d(np.sin, 1.0, 0.0)


def test_integrate_1d_splits_at_points():
    val = integrate_1d(lambda s: abs(s - 0.3), 0, 1, points=[0.3])
    assert val == pytest.approx(0.5 * (0.09 + 0.49), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), k=st.floats(0.1, 5))
def test_integrate_1d_linear(a, b, k):
    f = lambda s: np.cos(k * s)
    g = lambda s: s**2 * np.exp(-s)
    lhs = integrate_1d(lambda s: a * f(s) + b * g(s), 0, 2)
    rhs = a * integrate_1d(f, 0, 2) + b * integrate_1d(g, 0, 2)
    assert abs(lhs - rhs) < 1e-9 * (1 + abs(a) + abs(b))


def test_quadrature_failure_is_loud():
    with pytest.raises(NumericalError):
        integrate_1d(lambda s: np.sin(1 / s) / s, 1e-4, 1,
                     QuadratureSpec(rtol=1e-12, atol=1e-14, max_subdivisions=3))


def test_ode_examples():
    sol = ode_solve(lambda t, y: [0.0], [2.5], (0, 3))
    assert sol(3.0)[0] == pytest.approx(2.5)
    sol = ode_solve(lambda t, y: y, [1.0], (0, 1))
    assert sol(1.0)[0] == pytest.approx(math.e, rel=1e-9)
    sol = ode_solve(lambda t, y: -t * y, [1.0, 2.0], (0, 2))
    assert np.allclose(sol(2.0), np.array([1.0, 2.0]) * math.exp(-2.0), rtol=1e-9)
    fixed = ode_solve(lambda t, y: y, [1.0], (0, 1), OdeSpec(controller="fixed", initial_step=1e-2))
    assert fixed(1.0)[0] == pytest.approx(math.e, rel=1e-8)


def test_gauss_legendre_and_panels():
    x, w = gauss_legendre(8, 0, 2)
    assert np.sum(w * x**7) == pytest.approx(2**8 / 8)
    edges = panel_edges(0, 1, [0.25, 0.5, 2.0], 0.1)
    assert edges[0] == 0 and edges[-1] == 1 and 0.25 in edges and 0.5 in edges
    val, err = integrate_panels(lambda s: np.exp(s), edges)
    assert val == pytest.approx(math.e - 1, rel=1e-14) and err < 1e-12


def test_cauchy_pv_against_closed_form():
    # PV int_0^2 1/(s-1) ds = 0 and PV int_0^3 s/(s-1) ds = 3 + ln 2
    assert abs(cauchy_pv(lambda s: 1.0, 0, 2, 1.0)) < 1e-12
    assert cauchy_pv(lambda s: s, 0, 3, 1.0) == pytest.approx(3 + math.log(2), abs=1e-10)
    with pytest.raises(ValueError):
        cauchy_pv(lambda s: 1.0, 0, 1, 1.0)
