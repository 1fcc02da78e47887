import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bhsignal import channel as ch
from bhsignal.geometry import BlackHole, GeometryError, lapse, static_distance
from bhsignal.hadamard import tail_coefficients
from bhsignal.numkit import NumericalError
from bhsignal.pvmodel import PvGreen, PvScenario, pv_c2


def _radial_oracle(bh, r_A, r_B, wA, wB, A, B, sign=+1):
    """Direct part of C2 (sign=+1) or D2 (sign=-1) by quadrature over the sender time.

    Radial pair: U = 1 and the delta weight is N_B/|r_A - r_B|; Bob's aligned clock
    gives tau_B = tau_A / nu for the ray emitted at tau_A.
    """
    N_A, N_B = lapse(bh, r_A), lapse(bh, r_B)
    nu = N_A / N_B
    lo, hi = max(A[0], nu * B[0]), min(A[1], nu * B[1])
    w = N_B / abs(r_A - r_B)
    ph = lambda ta: sign * wB * ta / nu - wA * ta
    re = integrate.quad(lambda t: math.cos(ph(t)), lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
    im = integrate.quad(lambda t: math.sin(ph(t)), lo, hi, epsabs=1e-14, epsrel=1e-13)[0]
    return -sign * 1j / (4 * math.pi) * w * complex(re, im)


def test_d2_from_c2_identities(ref_scenario):
    c2 = lambda a, b: ch.c2_direct(ref_scenario, a, b)
    assert ch.d2_from_c2(c2, 1.0, 0.0) == -c2(1.0, 0.0)
    # the map is an involution
    d2 = lambda a, b: ch.d2_from_c2(c2, a, b)
    assert ch.d2_from_c2(d2, 1.0, 0.7) == c2(1.0, 0.7)


@pytest.mark.parametrize("r_A,r_B,wA,wB", [(6.0, 3.0, 1.0, 1.0), (4.0, 9.0, 0.6, 1.7),
                                           (2.5, 5.0, 2.0, 0.3)])
def test_direct_part_against_sender_time_quadrature(bh, r_A, r_B, wA, wB):
    A = (0.2, 1.4)
    scn = ch.static_scenario(bh, r_A, r_B, 0.0, wA, wB, A, (0.1, 0.9))
    c2 = ch.c2_direct(scn)
    d2 = ch.d2_from_c2(lambda a, b: ch.c2_direct(scn, a, b), wA, wB)
    assert abs(c2 - _radial_oracle(bh, r_A, r_B, wA, wB, A, (0.1, 0.9))) < 1e-8
    assert abs(d2 - _radial_oracle(bh, r_A, r_B, wA, wB, A, (0.1, 0.9), -1)) < 1e-8
    # D2 by its own quadrature in the receiver time
    flat = ch.Scenario(bh, scn.sender, scn.receiver, 0.0, ch.FlatGreen())
    assert abs(ch.d2_general(flat) - d2) < 1e-8


def test_general_route_matches_closed_form_off_axis(bh, ref_scenario):
    val, err = ch.c2_direct_general(ref_scenario)
    assert abs(val - ch.c2_direct(ref_scenario)) < 1e-12


def test_retarded_support(bh):
    scn = ch.static_scenario(bh, 6.0, 4.0, 0.0, 1.0, 1.0, (0.0, 1.0), (-5.0, -1.0),
                             ch.FlatGreen())
    assert ch.c2_direct(scn) == 0
    assert ch.c2_general(scn) == 0
    assert ch.c2_nondirect(scn) == 0


def test_minkowski_general_route(flat):
    for w, T, L in ((1.3, 2.0, 1.0), (0.4, 1.0, 3.0)):
        scn = ch.static_scenario(flat, 5.0, 5.0 + L, 0.0, w, w, (0.0, T))
        t = ch.signal_terms(scn, "general")
        assert t.strength == pytest.approx(ch.minkowski_strength(w, T, L), abs=1e-6)


def test_empty_window_gives_zero(bh):
    scn = ch.static_scenario(bh, 6.0, 4.0, 0.0, 1.0, 1.0, (0.0, 1.0), (0.5, 0.5),
                             ch.FlatGreen())
    assert ch.c2_static(scn) == 0


def test_receiver_duration_of_redshifted_window(ref_scenario):
    assert ref_scenario.receiver.duration == pytest.approx(0.71, abs=1e-2)


def test_radial_resonant_closed_form(bh):
    r_A, r_B, w = 6.0, 3.0, 1.0
    nu = lapse(bh, r_A) / lapse(bh, r_B)
    for T in (0.5, 1.0, 2.0):
        scn = ch.static_scenario(bh, r_A, r_B, 0.0, w, nu * w, (0.0, T))
        ref = -1j * lapse(bh, r_A) * T / (4 * math.pi * (r_A - r_B) * nu)
        assert abs(ch.c2_direct(scn) - ref) < 1e-14


def test_resonant_linearity(bh):
    nu = lapse(bh, 6.0) / lapse(bh, 3.5)
    one = ch.static_scenario(bh, 6.0, 3.5, 0.0, 1.0, nu, (0.0, 0.7))
    two = ch.static_scenario(bh, 6.0, 3.5, 0.0, 1.0, nu, (0.0, 1.4))
    assert abs(ch.c2_direct(two)) / abs(ch.c2_direct(one)) == pytest.approx(2.0, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(r_B=st.floats(2.2, 12.0), wB=st.floats(0.0, 3.0), T=st.floats(0.05, 50.0))
def test_off_resonance_cap(r_B, wB, T):
    bh = BlackHole(1.0)
    r_A, wA = 6.0, 1.0
    if abs(r_B - r_A) < 0.05:
        return
    nu = lapse(bh, r_A) / lapse(bh, r_B)
    if abs(wB - nu * wA) < 1e-3:
        return
    scn = ch.static_scenario(bh, r_A, r_B, 0.0, wA, wB, (0.0, T))
    cap = lapse(bh, r_A) / (2 * math.pi * abs(r_A - r_B) * abs(wB - nu * wA))
    assert abs(ch.c2_direct(scn)) <= cap * (1 + 1e-12)


def test_receiver_near_horizon_becomes_transparent(bh):
    vals = []
    for r_B in (3.0, 2.1, 2.01, 2.001):
        nu = lapse(bh, 6.0) / lapse(bh, r_B)
        vals.append(abs(ch.c2_direct(ch.static_scenario(bh, 6.0, r_B, 0.0, 1.0, nu, (0.0, 1.0)))))
    assert vals == sorted(vals, reverse=True) and vals[-1] < 0.05 * vals[0]


def test_caustic_and_coincidence_are_loud(bh):
    with pytest.raises(GeometryError):
        ch.c2_direct(ch.static_scenario(bh, 6.0, 4.0, math.pi - 1e-3, 1.0, 1.0, (0.0, 1.0)))
    same = ch.static_scenario(bh, 6.0, 6.0, 0.0, 1.0, 1.0, (0.0, 1.0), (0.0, 1.0))
    with pytest.raises(GeometryError):
        ch.c2_direct(same)
    with pytest.raises(ch.CoverageError):
        ch.c2_nondirect(same)


def test_detector_validation(bh):
    with pytest.raises(ValueError):
        ch.static_detector(bh, 6.0, 1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        ch.static_detector(bh, 6.0, -1.0, 0.0, 0.5)


def test_bit_probability(ref_scenario):
    zero = ch.SignalTerms.from_parts((0j, 0j), (0j, 0j))
    assert ch.bit_probability(zero, 0.1, 0.1) == 0.5
    t = ch.SignalTerms.from_parts((0.0121551j, 0.0107647), (0j, 0j))
    assert ch.bit_probability(t, 0.0, 0.3) == 0.5
    assert ch.bit_probability(t, 0.1, 0.1) == pytest.approx(0.500229, abs=1e-6)
    with pytest.raises(NumericalError):
        ch.bit_probability(t, 10.0, 10.0)


def test_time_mirror(bh, ref_scenario):
    scn = ch.static_scenario(bh, 6.0, 3.01, math.pi / 4, 1.0, 0.7, (0.0, 1.0), (0.1, 0.8))
    assert ch.time_mirror(ch.time_mirror(scn)) == scn
    m = ch.time_mirror(scn)
    c, cm = ch.c2_direct(scn), ch.c2_direct(m)
    d = ch.d2_from_c2(lambda a, b: ch.c2_direct(scn, a, b), 1.0, 0.7)
    dm = ch.d2_from_c2(lambda a, b: ch.c2_direct(m, a, b), 0.7, 1.0)
    assert abs(c - cm) < 1e-12 and abs(dm + np.conj(d)) < 1e-12
    s0 = abs(ch.c2_direct(ref_scenario)) + abs(ch.c2_direct(ref_scenario, 1.0, -1.0))
    rm = ch.time_mirror(ref_scenario)
    assert abs(ch.c2_direct(rm)) + abs(ch.c2_direct(rm, 1.0, -1.0)) == pytest.approx(s0, abs=1e-8)


def test_minkowski_bound(flat):
    rng = np.random.default_rng(11)
    for _ in range(5):
        w, T, L = rng.uniform(0.1, 3), rng.uniform(0.2, 3), rng.uniform(0.5, 5)
        scn = ch.static_scenario(flat, 5.0, 5.0 + L, 0.0, w, w, (0.0, T))
        rep = ch.proper_time_bound(scn, n_samples=101)
        assert rep.holds and rep.strength <= T / (2 * math.pi * L) * (1 + 1e-12)
    empty = ch.static_scenario(flat, 5.0, 6.0, 0.0, 1.0, 1.0, (0.0, 1.0), (0.4, 0.4))
    rep = ch.proper_time_bound(empty)
    assert rep.strength == 0.0 and rep.holds


def test_mimicking_distance(bh):
    assert ch.mimicking_distance(bh, 6.0, 6.0) == 0.0
    assert ch.mimicking_distance(bh, 6.0, 2.0 + 1e-10) > 1e4
    for r_B in (7.0, 10.0, 20.0):
        assert ch.mimicking_distance(bh, 6.0, r_B) < static_distance(bh, 6.0, r_B)
    # the mimicking distance reproduces the resonant strength in flat space
    nu = lapse(bh, 6.0) / lapse(bh, 4.0)
    scn = ch.static_scenario(bh, 6.0, 4.0, 0.0, 1.0, nu, (0.0, 1.0))
    L = ch.mimicking_distance(bh, 6.0, 4.0)
    assert abs(ch.c2_direct(scn)) == pytest.approx(1.0 / (4 * math.pi * L))


def test_half_return_times_flat(flat):
    assert ch.half_return_times(flat, 3.0, 7.0) == (4.0, 4.0)


# --------------------------------------------------------------------------- non-direct part


@pytest.fixture(scope="module")
def ql_pair(bh):
    tail = tail_coefficients(bh, 6.0, 8)
    green = ch.QLTailGreen(tail, 5.0, 0.3)
    return ch.static_scenario(bh, 6.0, 5.0, 0.3, 1.0, 0.8, (0.0, 0.6), None, green)


def test_ql_coverage_window(ql_pair):
    lo, hi = ql_pair.provider.coverage()
    assert lo == pytest.approx(ql_pair.pair.dt_direct)
    assert 3.5 < hi < 4.5


def test_static_and_general_routes_agree(ql_pair):
    d, nd, _ = ch.c2_general(ql_pair, parts=True)
    assert abs(d - ch.c2_direct(ql_pair)) < 1e-12
    assert abs(nd - ch.c2_nondirect(ql_pair)) < 1e-10 * max(1.0, abs(nd))
    assert abs(ch.c2_general(ql_pair) - ch.c2_static(ql_pair)) < 1e-10


def test_nondirect_against_brute_double_quadrature(ql_pair):
    p = ql_pair.pair
    prov = ql_pair.provider
    A1, A2 = ql_pair.sender.start, ql_pair.sender.stop
    B1, B2 = ql_pair.receiver.start, ql_pair.receiver.stop
    wA, wB = ql_pair.sender.omega, ql_pair.receiver.omega

    def f(ta, tb, part):
        dt = tb / p.N_B - (ta / p.N_A - p.dt_direct)
        v = np.exp(1j * (wB * tb - wA * ta)) * float(prov(dt, 6.0))
        return v.real if part == 0 else v.imag

    top = lambda tb: min(A2, p.nu * tb)
    vals = [integrate.dblquad(lambda ta, tb: f(ta, tb, k), B1, B2, lambda tb: A1, top,
                              epsabs=1e-16, epsrel=1e-11)[0] for k in (0, 1)]
    ref = -1j / (4 * math.pi) * complex(*vals)
    assert abs(ch.c2_nondirect(ql_pair) - ref) < 1e-8 * abs(ref) + 1e-18


def test_decomposition_closure(ql_pair):
    t = ch.signal_terms(ql_pair)
    assert abs(t.C2 - (t.direct[0] + t.nondirect[0])) < 1e-15
    assert abs(t.C2 - ch.c2_static(ql_pair)) < 1e-15
    g = ch.signal_terms(ql_pair, "general")
    assert abs(g.C2 - t.C2) < 1e-10 and abs(g.D2 - t.D2) < 1e-10


def test_coverage_gap_names_region(bh):
    tail = tail_coefficients(bh, 6.0, 8)
    green = ch.QLTailGreen(tail, 5.0, 0.3)
    scn = ch.static_scenario(bh, 6.0, 5.0, 0.3, 1.0, 1.0, (0.0, 3.0), None, green)
    with pytest.raises(ch.CoverageError, match=r"uncovered dt in .*receiver tau_B in"):
        ch.c2_nondirect(scn)


def test_dp_quiet_window_is_small(bh, ref_scenario, ref_dp_green):
    """Receiver active after every direct ray and before any orbiting one."""
    scn = ch.static_scenario(bh, 6.0, 3.01, math.pi / 4, 1.0, 1.0, (0.0, 1.0), (4.5, 5.2),
                             ref_dp_green)
    assert abs(ch.c2_nondirect(scn)) < 0.05 * abs(ch.c2_direct(ref_scenario))


def test_pv_provider_matches_closed_form_model(bh, ref_scenario):
    p = ref_scenario.pair
    s2 = 5.0
    green = PvGreen(p.dt_direct, p.dt_direct + s2 / p.N_A, p.N_A)
    model = PvScenario(p.nu, 0.0, 1.0, s2, 1.0, 0.8)
    for B in ((3.0, 3.71), (3.55, 4.26), (2.0, 6.0)):
        scn = ch.static_scenario(bh, 6.0, 3.01, math.pi / 4, 1.0, 0.8, (0.0, 1.0), B, green)
        ref = pv_c2(model, *B)
        assert abs(ch.c2_nondirect(scn) - ref) < 1e-8 * abs(ref)


def test_pv_boundary_alignment_stays_finite(bh, ref_scenario):
    """Switch-off exactly on the arrival of the singular ray, and just either side of it."""
    p = ref_scenario.pair
    s2 = 5.0
    green = PvGreen(p.dt_direct, p.dt_direct + s2 / p.N_A, p.N_A)
    arrive = s2 / p.nu
    vals = []
    for eps in (-1e-5, 0.0, 1e-5):
        scn = ch.static_scenario(bh, 6.0, 3.01, math.pi / 4, 1.0, 1.0, (0.0, 1.0),
                                 (2.0, arrive + eps), green)
        vals.append(ch.c2_nondirect(scn))
    assert all(np.isfinite(v) for v in vals)
    assert abs(vals[0] - vals[1]) < 1e-3 * abs(vals[1])
    assert abs(vals[2] - vals[1]) < 1e-3 * abs(vals[1])


def test_infall_direct_part(bh):
    wl = ch.infall_worldline(bh, 6.0)
    scn = ch.infall_scenario(bh, 4.0, 0.25, 1.0, 6.0, None, wl)
    val, _ = ch.c2_direct_general(scn)
    # oracle: sender-time integral with weight N_B/(r_B - r_A(tau)) and radial arrival map
    rb = scn.receiver.worldline
    from bhsignal.geometry import tortoise

    def arrival(ta):
        return float(rb.tau_of_t(float(wl.t_of_tau(ta)) + tortoise(bh, 6.0)
                                 - tortoise(bh, float(wl.r_of_tau(ta)))))

    def f(ta, part):
        v = np.exp(1j * (arrival(ta) - ta)) * rb.N / (6.0 - float(wl.r_of_tau(ta)))
        return v.real if part == 0 else v.imag

    ref = -1j / (4 * math.pi) * complex(*[integrate.quad(lambda t: f(t, k), scn.sender.start,
                                                         scn.sender.stop, epsabs=1e-14)[0]
                                          for k in (0, 1)])
    assert abs(val - ref) < 1e-10
    assert scn.receiver.start == 0.0
