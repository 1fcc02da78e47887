"""Leading-order signal terms C2 and D2 between two Unruh-DeWitt detectors.

Conventions.  Detectors couple through sharp switchings on proper-time windows.
For a static pair the clocks are ``tau_B = N_B t`` and
``tau_A = N_A (t + dt_dir)`` where ``dt_dir`` is the coordinate flight time of
the direct null ray, so that the ray leaving the sender at ``tau_A`` reaches the
receiver at ``tau_A / nu`` with ``nu = N_A / N_B``.

The retarded Green function is split as ``G = U delta(sigma) + G_nd``.  The
delta part is always integrated analytically; ``G_nd`` comes from a provider
(quasi-local tail, distant-past mode sum, flat space, or the principal-value
model) that declares the coordinate-time window it covers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import optimize

from .geometry import (CAUSTIC_BAND, BlackHole, GeometryError, InfallWorldline, NullRay,
                       StaticWorldline, connecting_ray, infall_worldline, lapse, tortoise)
from .hadamard import TailSeries, direct_contraction, transport_solve
from .numkit import NumericalError, QuadratureSpec, cauchy_pv, integrate_panels, panel_edges, sinc

RESONANCE_TOL = 1e-8
PANEL = 0.05


class CoverageError(NumericalError):
    """No Green-function provider covers part of the integration support."""


# --------------------------------------------------------------------------- detectors


@dataclass(frozen=True)
class DetectorSpec:
    """Energy gap, sharp proper-time window [start, stop] and worldline."""

    omega: float
    start: float
    stop: float
    worldline: object
    coupling: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega >= 0):
            raise ValueError("energy gap must be finite and non-negative")
        if not (math.isfinite(self.start) and math.isfinite(self.stop)):
            raise ValueError("switching times must be finite")
        if self.stop < self.start:
            raise ValueError("switch-off must not precede switch-on")

    @property
    def duration(self) -> float:
        return self.stop - self.start

    @property
    def is_static(self) -> bool:
        return isinstance(self.worldline, StaticWorldline)

    @property
    def r(self) -> float:
        if not self.is_static:
            raise ValueError("radius is only fixed for static detectors")
        return self.worldline.r


def static_detector(bh: BlackHole, r: float, omega: float, start: float, stop: float,
                    coupling: float = 0.1) -> DetectorSpec:
    return DetectorSpec(omega, start, stop, StaticWorldline(bh, r), coupling)


# --------------------------------------------------------------------------- providers


class FlatGreen:
    """Minkowski space: the retarded Green function has no non-direct part."""

    name = "flat"
    cauchy = None

    def coverage(self, r_field: float | None = None):
        return -math.inf, math.inf

    def breaks(self, r_field=None):
        return ()

    def knots(self, r_field=None):
        return None

    def __call__(self, dt, r_field=None):
        return np.zeros_like(np.asarray(dt, dtype=float))


@dataclass
class QLTailGreen:
    """Non-direct part -V from the Hadamard tail series, inside its validity region.

    The series is based at ``tail.r``; by the symmetry of G under exchange of
    its static endpoints either detector may sit at the base radius.
    """

    tail: TailSeries
    r_field: float
    gamma: float = 0.0
    validity: float = 1e-3
    name: str = "ql"
    cauchy: object = None
    _window: tuple | None = field(default=None, repr=False)

    def _check(self, r):
        if r is not None and not (math.isclose(r, self.r_field) or math.isclose(r, self.tail.r)):
            raise ValueError(f"tail provider built for radii {self.tail.r}, {self.r_field}")

    def coverage(self, r_field=None):
        self._check(r_field)
        if self._window is None:
            bh = BlackHole(self.tail.M)
            if self.gamma == 0.0 and self.r_field == self.tail.r:
                t0 = 0.0
            else:
                t0 = connecting_ray(bh, self.tail.r, self.r_field, self.gamma).dt
            ratio = lambda dt: float(self.tail.last_term_ratio(dt, self.gamma, self.r_field))
            dt, step = max(t0, 1e-3), 0.05
            while ratio(dt + step) <= self.validity and dt < 1e3:
                dt += step
            hi = optimize.brentq(lambda x: ratio(x) - self.validity, dt, dt + step, xtol=1e-10)
            self._window = (t0, hi)
        return self._window

    def breaks(self, r_field=None):
        return ()

    def knots(self, r_field=None):
        return None

    def __call__(self, dt, r_sender=None):
        """-V between the base radius and the other endpoint.

        A sender radius that matches neither static radius (a moving sender)
        is used as the field radius.
        """
        r = self.r_field
        if r_sender is not None:
            rs = np.asarray(r_sender, dtype=float)
            r = np.where(np.isclose(rs, self.tail.r), self.r_field, rs)
        return -self.tail.value(np.asarray(dt, dtype=float), self.gamma, r)


@dataclass
class DPGreen:
    """Smoothed mode sum, trusted from ``margin`` past the direct ray onwards.

    Near the direct ray the truncated sum still carries the smeared delta
    function, so that region is declared uncovered.
    """

    table: object
    t_direct: float
    margin: float = 3.5
    crossings: tuple = ()
    name: str = "dp"
    cauchy: object = None

    def _check(self, r):
        if r is not None and not (math.isclose(r, self.table.r) or math.isclose(r, self.table.rp)):
            raise ValueError(f"mode-sum table built for radii {self.table.r}, {self.table.rp}")

    def coverage(self, r_field=None):
        self._check(r_field)
        return self.t_direct + self.margin, self.table.dt_max

    def breaks(self, r_field=None):
        return tuple(self.crossings)

    def knots(self, r_field=None):
        return self.table.dt

    def __call__(self, dt, r_field=None):
        return self.table(dt)


@dataclass
class PiecewiseGreen:
    """Concatenation of providers on adjacent coordinate-time windows."""

    pieces: tuple  # ((provider, lo, hi), ...)
    name: str = "piecewise"
    cauchy: object = None

    def __post_init__(self):
        self.pieces = tuple(sorted(self.pieces, key=lambda p: p[1]))
        for (_, _, hi), (_, lo, _) in zip(self.pieces[:-1], self.pieces[1:]):
            if not math.isclose(hi, lo, abs_tol=1e-12):
                raise ValueError("piecewise provider windows must be contiguous")
        self.name = "+".join(p[0].name for p in self.pieces)

    def coverage(self, r_field=None):
        for p, lo, hi in self.pieces:
            plo, phi = p.coverage(r_field)
            if lo < plo - 1e-12 or hi > phi + 1e-12:
                raise ValueError(f"piece {p.name} does not cover [{lo}, {hi}]")
        return self.pieces[0][1], self.pieces[-1][2]

    def breaks(self, r_field=None):
        out = [p[2] for p in self.pieces[:-1]]
        for p, lo, hi in self.pieces:
            out.extend(b for b in p.breaks(r_field) if lo < b < hi)
        return tuple(out)

    def knots(self, r_field=None):
        ks = [k for p, _, _ in self.pieces if (k := p.knots(r_field)) is not None]
        return np.concatenate(ks) if ks else None

    def __call__(self, dt, r_field=None):
        dt = np.asarray(dt, dtype=float)
        out = np.zeros_like(dt)
        for p, lo, hi in self.pieces:
            sel = (dt >= lo) & (dt <= hi)
            if np.any(sel):
                out[sel] = p(dt[sel], r_field)
        return out


# --------------------------------------------------------------------------- scenario


@dataclass(frozen=True)
class StaticPair:
    """Direct-ray data between two static detectors."""

    N_A: float
    N_B: float
    nu: float
    dt_direct: float
    U: float
    dlam: float
    contraction: float
    ray: NullRay | None = field(repr=False)


@dataclass(frozen=True)
class Scenario:
    """Sender (Alice), receiver (Bob), angular separation and non-direct provider."""

    bh: BlackHole
    sender: DetectorSpec
    receiver: DetectorSpec
    gamma: float = 0.0
    green: object = None
    caustic_band: float = CAUSTIC_BAND

    def __post_init__(self):
        if not (0.0 <= self.gamma <= math.pi):
            raise ValueError("angular separation must lie in [0, pi]")

    @property
    def is_static(self) -> bool:
        return self.sender.is_static and self.receiver.is_static

    @property
    def provider(self):
        if self.green is not None:
            return self.green
        if self.bh.M == 0:
            return FlatGreen()
        return None

    @cached_property
    def pair(self) -> StaticPair:
        if not self.is_static:
            raise ValueError("static pair data requested for a non-static scenario")
        bh, rA, rB = self.bh, self.sender.r, self.receiver.r
        N_A, N_B = _lapse(bh, rA), _lapse(bh, rB)
        if self.gamma == 0.0 and rA == rB:
            # coincident positions: only the non-direct part is defined
            return StaticPair(N_A=N_A, N_B=N_B, nu=1.0, dt_direct=0.0, U=1.0, dlam=0.0,
                              contraction=0.0, ray=None)
        ray = connecting_ray(bh, rA, rB, self.gamma, "direct", self.caustic_band)
        U = 1.0 if ray.L == 0 else transport_solve(bh, ray).U
        K = direct_contraction(bh, ray, self.sender.worldline.velocity(0.0))
        return StaticPair(N_A=N_A, N_B=N_B, nu=N_A / N_B, dt_direct=ray.dt, U=U,
                          dlam=ray.dlam, contraction=K, ray=ray)

    @property
    def nu(self) -> float:
        return self.pair.nu


def _lapse(bh: BlackHole, r: float) -> float:
    return 1.0 if bh.M == 0 else lapse(bh, r)


def static_scenario(bh: BlackHole, r_A: float, r_B: float, gamma: float, omega_A: float,
                    omega_B: float, A: tuple, B: tuple | None = None, green=None) -> Scenario:
    """Static pair; ``B=None`` aligns Bob's window to all direct rays, [A1/nu, A2/nu]."""
    sender = static_detector(bh, r_A, omega_A, *A)
    if B is None:
        nu = _lapse(bh, r_A) / _lapse(bh, r_B)
        B = (A[0] / nu, A[1] / nu)
    receiver = static_detector(bh, r_B, omega_B, *B)
    return Scenario(bh, sender, receiver, gamma, green)


def infall_scenario(bh: BlackHole, r_switch: float, duration: float, omega: float,
                    r_receiver: float = 6.0, green=None, worldline=None) -> Scenario:
    """Sender falling from rest at the receiver radius, switched on at radius r_switch.

    The receiver clock reads zero when the first direct ray arrives and its
    window spans the arrivals of the first and last outgoing radial rays.
    """
    if not 2 * bh.M < r_switch <= r_receiver:
        raise ValueError("switch-on radius must lie between the horizon and the receiver")
    wl = worldline or infall_worldline(bh, r_receiver, 0.0)
    A1 = wl.tau_of_r(r_switch) if r_switch < r_receiver else 0.0
    A2 = A1 + duration
    if A2 >= wl.tau_end:
        raise GeometryError("sender window reaches the horizon")
    rs_B = tortoise(bh, r_receiver)

    def arrival(tau):
        return float(wl.t_of_tau(tau)) + rs_B - tortoise(bh, float(wl.r_of_tau(tau)))

    t1, t2 = arrival(A1), arrival(A2)
    rb = StaticWorldline(bh, r_receiver, t_shift=-t1)
    sender = DetectorSpec(omega, A1, A2, wl)
    receiver = DetectorSpec(omega, 0.0, float(rb.tau_of_t(t2)), rb)
    return Scenario(bh, sender, receiver, 0.0, green)


@dataclass(frozen=True)
class SignalTerms:
    C2: complex
    D2: complex
    direct: tuple
    nondirect: tuple
    backend: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @classmethod
    def from_parts(cls, direct, nondirect, backend=None, errors=None) -> "SignalTerms":
        C2 = direct[0] + nondirect[0]
        D2 = direct[1] + nondirect[1]
        return cls(complex(C2), complex(D2), tuple(map(complex, direct)),
                   tuple(map(complex, nondirect)), dict(backend or {}), dict(errors or {}))

    @property
    def strength(self) -> float:
        return abs(self.C2) + abs(self.D2)


# --------------------------------------------------------------------------- helpers


def d2_from_c2(c2: Callable[[float, float], complex], omega_A: float, omega_B: float) -> complex:
    """D2(Omega_A, Omega_B) = -C2(Omega_A, -Omega_B) for a C2 evaluator with signed gaps."""
    return -c2(omega_A, -omega_B)


def window_integral(delta: float, lo, hi):
    """Integral of exp(i delta tau) over [lo, hi] (zero for empty windows)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    width = np.maximum(hi - lo, 0.0)
    mid = 0.5 * (hi + lo)
    if abs(delta) * float(np.max(width, initial=0.0)) < RESONANCE_TOL:
        out = width * np.exp(1j * delta * mid)
    else:
        out = width * np.exp(1j * delta * mid) * sinc(0.5 * delta * width)
    return out if out.ndim else complex(out)


# --------------------------------------------------------------------------- direct part


def c2_direct(scn: Scenario, omega_A: float | None = None, omega_B: float | None = None) -> complex:
    """Direct (delta(sigma)) contribution to C2; gaps default to the detector specs."""
    wA = scn.sender.omega if omega_A is None else omega_A
    wB = scn.receiver.omega if omega_B is None else omega_B
    if scn.is_static:
        return _c2_direct_static(scn, wA, wB)
    if isinstance(scn.sender.worldline, InfallWorldline) and scn.receiver.is_static:
        return _c2_direct_infall(scn, wA, wB)
    raise NotImplementedError("direct contribution needs a static receiver")


def _require_separated(p: StaticPair):
    if p.contraction == 0.0:
        raise GeometryError("coincident detectors: the direct contribution diverges")


def _c2_direct_static(scn: Scenario, wA: float, wB: float) -> complex:
    p = scn.pair
    _require_separated(p)
    A1, A2 = scn.sender.start, scn.sender.stop
    B1, B2 = scn.receiver.start, scn.receiver.stop
    lo, hi = max(B1, A1 / p.nu), min(B2, A2 / p.nu)
    if hi <= lo:
        return 0j
    pref = -1j * p.U / (4 * math.pi * p.contraction)
    return complex(pref * window_integral(wB - p.nu * wA, lo, hi))


def c2_direct_general(scn: Scenario, omega_A: float | None = None,
                      omega_B: float | None = None, panel: float = PANEL) -> tuple[complex, float]:
    """Direct contribution by quadrature of the single integral over the receiver time.

    The delta function is resolved along the direct ray, dividing by
    |dlam t_a u_A^a| at the emission event.  Radial pairs only when the sender moves.
    """
    wA = scn.sender.omega if omega_A is None else omega_A
    wB = scn.receiver.omega if omega_B is None else omega_B
    emit, weight = _direct_map(scn)
    A1, A2 = scn.sender.start, scn.sender.stop
    B1, B2 = scn.receiver.start, scn.receiver.stop
    tb_lo, tb_hi = _arrival(scn, A1), _arrival(scn, A2)
    lo, hi = max(B1, tb_lo), min(B2, tb_hi)
    if hi <= lo:
        return 0j, 0.0

    def f(tb):
        ta = emit(tb)
        return np.exp(1j * (wB * tb - wA * ta)) * weight(ta)

    val, err = integrate_panels(f, panel_edges(lo, hi, (), panel))
    return complex(-1j / (4 * math.pi) * val), err / (4 * math.pi)


def _arrival(scn: Scenario, tau_A: float) -> float:
    """Receiver proper time of the direct ray emitted at sender time tau_A."""
    if scn.is_static:
        return tau_A / scn.pair.nu
    wl, rb = scn.sender.worldline, scn.receiver.worldline
    t_emit = float(wl.t_of_tau(tau_A))
    r_emit = float(wl.r_of_tau(tau_A))
    _require_radial(scn)
    t_arr = t_emit + abs(tortoise(scn.bh, rb.r) - tortoise(scn.bh, r_emit))
    return float(rb.tau_of_t(t_arr))


def _require_radial(scn):
    if scn.gamma != 0.0:
        raise NotImplementedError("moving senders are supported on radial rays only")
    if scn.sender.worldline.r_of_tau(0.0) > scn.receiver.worldline.r + 1e-12:
        raise NotImplementedError("infalling sender must start at or below the receiver radius")


def _direct_map(scn: Scenario):
    """(emission-time map tau_B -> tau_A, weight U/|dlam t.u_A| as function of tau_A)."""
    if scn.is_static:
        p = scn.pair

        def weight(ta):
            _require_separated(p)
            return p.U / p.contraction

        return (lambda tb: p.nu * np.asarray(tb)), weight
    _require_radial(scn)
    bh, wl, rb = scn.bh, scn.sender.worldline, scn.receiver.worldline
    rs_B = tortoise(bh, rb.r)
    E = wl.energy

    def one(tb):
        t_arr = float(rb.t_of_tau(tb))
        g = lambda ta: float(wl.t_of_tau(ta)) + rs_B - tortoise(bh, float(wl.r_of_tau(ta))) - t_arr
        hi = wl.tau_end
        return optimize.brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-15)

    def emit(tb):
        tb = np.asarray(tb, dtype=float)
        return np.vectorize(one)(tb)

    def weight(ta):
        ta = np.asarray(ta, dtype=float)
        r, rdot, _ = wl._sol(ta.ravel())
        f = 1 - 2 * bh.M / r
        # outgoing radial ray with E = 1: t^a = (1/f, 1), so t_a u^a = (rdot - E)/f
        K = (rb.r - r) * np.abs(rdot - E) / f
        return (1.0 / K).reshape(ta.shape)

    return emit, weight


def _c2_direct_infall(scn: Scenario, wA: float, wB: float) -> complex:
    return c2_direct_general(scn, wA, wB)[0]


# --------------------------------------------------------------------------- non-direct part


def _provider_or_fail(scn: Scenario):
    prov = scn.provider
    if prov is None:
        raise CoverageError("no non-direct Green-function provider attached to the scenario")
    return prov


def _check_cover(prov, r_field, dt_lo, dt_hi, describe):
    lo, hi = prov.coverage(r_field)
    tol = 1e-9 * max(1.0, abs(dt_hi))
    if dt_lo < lo - tol or dt_hi > hi + tol:
        gap_lo = dt_lo if dt_lo < lo - tol else hi
        gap_hi = min(dt_hi, lo) if dt_lo < lo - tol else dt_hi
        raise CoverageError(f"provider {prov.name} covers dt in [{lo:.6g}, {hi:.6g}] but the "
                            f"integration needs [{dt_lo:.6g}, {dt_hi:.6g}]; uncovered "
                            f"dt in [{gap_lo:.6g}, {gap_hi:.6g}] ({describe(gap_lo, gap_hi)})")


def c2_nondirect(scn: Scenario, omega_A: float | None = None, omega_B: float | None = None,
                 panel: float = PANEL, return_error: bool = False):
    """Non-direct contribution for static detectors via the reduced s-integral.

    ``C2_nd = (-i/4pi) int ds e^{i Omega_A s} G_nd(s/N_A + dt_dir) f(s)`` with
    ``s = nu tau_B - tau_A`` and ``f`` the closed-form receiver-time integral.
    """
    if not scn.is_static:
        raise ValueError("the reduced integral needs static detectors; use c2_general")
    wA = scn.sender.omega if omega_A is None else omega_A
    wB = scn.receiver.omega if omega_B is None else omega_B
    p = scn.pair
    A1, A2 = scn.sender.start, scn.sender.stop
    B1, B2 = scn.receiver.start, scn.receiver.stop
    nu, NA, dt0 = p.nu, p.N_A, p.dt_direct
    s_lo, s_hi = max(nu * B1 - A2, 0.0), nu * B2 - A1
    if s_hi <= s_lo or scn.receiver.duration == 0 or scn.sender.duration == 0:
        return (0j, 0.0) if return_error else 0j
    prov = _provider_or_fail(scn)
    r_f = scn.sender.r
    to_dt = lambda s: s / NA + dt0
    to_s = lambda dt: NA * (np.asarray(dt, dtype=float) - dt0)

    def describe(a, b):
        sa, sb = float(to_s(a)), float(to_s(b))
        return (f"s in [{sa:.6g}, {sb:.6g}], receiver tau_B in "
                f"[{max(B1, (sa + A1) / nu):.6g}, {min(B2, (sb + A2) / nu):.6g}]")

    _check_cover(prov, r_f, to_dt(s_lo), to_dt(s_hi), describe)
    delta = wB - nu * wA

    def inner(s):
        a = np.maximum(B1, (s + A1) / nu)
        b = np.minimum(B2, (s + A2) / nu)
        return window_integral(delta, a, b)

    def reg(s):
        return np.exp(1j * wA * s) * prov(to_dt(s), r_f) * inner(s)

    breaks = [nu * B1 - A1, nu * B2 - A2]
    breaks += [float(to_s(b)) for b in prov.breaks(r_f)]
    knots = prov.knots(r_f)
    if knots is not None:
        ks = to_s(knots)
        breaks += list(ks[(ks > s_lo) & (ks < s_hi)])
    total, err = integrate_panels(reg, panel_edges(s_lo, s_hi, breaks, panel))
    pole = prov.cauchy(r_f) if callable(getattr(prov, "cauchy", None)) else None
    if pole is not None:
        # residue / (dt - dt_p) = residue N_A / (s - s_p), principal value
        dt_p, residue = pole
        s_p = float(to_s(dt_p))
        g = lambda s: np.exp(1j * wA * s) * inner(s) * residue * NA
        cuts = sorted({s_lo, s_hi, *[b for b in breaks if s_lo < b < s_hi and abs(b - s_p) > 1e-9]})
        for a, b in zip(cuts[:-1], cuts[1:]):
            if a < s_p < b:
                total += cauchy_pv(g, a, b, s_p, PV_SPEC)
            else:
                val, e = integrate_panels(lambda s: g(s) / (s - s_p), _graded_edges(a, b, s_p, panel))
                total += val
                err += e
    out = complex(-1j / (4 * math.pi) * total)
    return (out, err / (4 * math.pi)) if return_error else out


PV_SPEC = QuadratureSpec(rtol=1e-12, atol=1e-15, max_subdivisions=400)


def _graded_edges(a: float, b: float, pole: float, panel: float) -> np.ndarray:
    """Panel edges on [a, b] refined geometrically toward a nearby pole outside (a, b)."""
    edges = panel_edges(a, b, (), panel)
    near, sign = (a, 1.0) if abs(a - pole) <= abs(b - pole) else (b, -1.0)
    d, length = abs(near - pole), b - a
    if d >= length:
        return edges
    # distances from the pole doubling from d (or from a tiny floor if the pole is an end)
    u = max(d, length * 2.0**-40)
    pts = []
    while u < d + length:
        pts.append(pole + sign * u)
        u *= 2.0
    return panel_edges(a, b, pts, panel)


def c2_static(scn: Scenario, omega_A: float | None = None, omega_B: float | None = None) -> complex:
    """Full C2 between static detectors: closed-form direct part plus reduced s-integral."""
    return c2_direct(scn, omega_A, omega_B) + c2_nondirect(scn, omega_A, omega_B)


def _clocks(scn: Scenario):
    """Coordinate-time maps tau -> t for sender and receiver, plus sender radius map."""
    if scn.is_static:
        p = scn.pair
        tA = lambda ta: np.asarray(ta) / p.N_A - p.dt_direct
        tB = lambda tb: np.asarray(tb) / p.N_B
        rA = lambda ta: np.full_like(np.asarray(ta, dtype=float), scn.sender.r)
        return tA, tB, rA
    wl, rb = scn.sender.worldline, scn.receiver.worldline
    return wl.t_of_tau, rb.t_of_tau, wl.r_of_tau


def _nondirect_general(scn: Scenario, phase, panel: float = PANEL):
    """Double integral over (tau_B, tau_A) of phase * G_nd restricted to the causal region."""
    prov = _provider_or_fail(scn)
    A1, A2 = scn.sender.start, scn.sender.stop
    B1, B2 = scn.receiver.start, scn.receiver.stop
    if scn.sender.duration == 0 or scn.receiver.duration == 0:
        return 0j, 0.0
    tA, tB, rA = _clocks(scn)
    emit, _ = _direct_map(scn)
    lo_b = max(B1, _arrival(scn, A1))
    if B2 <= lo_b:
        return 0j, 0.0
    static = scn.is_static
    r_f = scn.receiver.r
    if static:
        p = scn.pair
        dt_lo = float(tB(lo_b) - tA(min(A2, float(emit(lo_b)))))
        dt_hi = float(tB(B2) - tA(A1))
        _check_cover(prov, r_f, dt_lo, dt_hi,
                     lambda a, b: f"receiver tau_B in [{lo_b:.6g}, {B2:.6g}]")
    knots = prov.knots(r_f) if static else None
    brk = prov.breaks(r_f) if static else ()

    def inner(tb):
        top = min(A2, float(emit(tb)))
        if top <= A1:
            return 0j, 0.0
        t_b = float(tB(tb))
        cuts = []
        if static:
            # tau_A where dt hits a crossing or knot
            for d in list(brk) + ([] if knots is None else list(knots)):
                cuts.append(p.N_A * (t_b - d + p.dt_direct))
        f = lambda ta: phase(tb, ta) * prov(t_b - tA(ta), rA(ta))
        return integrate_panels(f, panel_edges(A1, top, cuts, panel))

    outer_cuts = [_arrival(scn, A2)]
    if static:
        for d in brk:
            for a in (A1, A2):
                outer_cuts.append(p.N_B * (float(tA(a)) + d))

    def outer(tbs):
        vals = np.empty(tbs.shape, dtype=complex)
        for idx, tb in np.ndenumerate(tbs):
            vals[idx] = inner(float(tb))[0]
        return vals

    val, err = integrate_panels(outer, panel_edges(lo_b, B2, outer_cuts, panel))
    return val, err


def c2_general(scn: Scenario, omega_A: float | None = None, omega_B: float | None = None,
               panel: float = PANEL, parts: bool = False):
    """C2 by direct double quadrature in proper times.

    The delta part is consumed analytically along the direct ray and integrated
    over the receiver time; the non-direct part is a 2-D panel quadrature.
    """
    wA = scn.sender.omega if omega_A is None else omega_A
    wB = scn.receiver.omega if omega_B is None else omega_B
    d, d_err = c2_direct_general(scn, wA, wB, panel)
    phase = lambda tb, ta: np.exp(1j * (wB * tb - wA * ta))
    nd, nd_err = _nondirect_general(scn, phase, panel)
    nd = complex(-1j / (4 * math.pi) * nd)
    if parts:
        return d, nd, (d_err, nd_err / (4 * math.pi))
    return d + nd


def d2_general(scn: Scenario, panel: float = PANEL) -> complex:
    """D2 by its own double quadrature (phase exp(-i(Omega_B tau_B + Omega_A tau_A)))."""
    wA, wB = scn.sender.omega, scn.receiver.omega
    emit, weight = _direct_map(scn)
    A1, A2 = scn.sender.start, scn.sender.stop
    B1, B2 = scn.receiver.start, scn.receiver.stop
    lo, hi = max(B1, _arrival(scn, A1)), min(B2, _arrival(scn, A2))
    d = 0j
    if hi > lo:
        def f(tb):
            ta = emit(tb)
            return np.exp(-1j * (wB * tb + wA * ta)) * weight(ta)

        d = integrate_panels(f, panel_edges(lo, hi, (), panel))[0]
    phase = lambda tb, ta: np.exp(-1j * (wB * tb + wA * ta))
    nd = _nondirect_general(scn, phase, panel)[0]
    return complex(1j / (4 * math.pi) * (d + nd))


def signal_terms(scn: Scenario, method: str = "static", panel: float = PANEL) -> SignalTerms:
    """C2, D2 with their direct and non-direct parts."""
    wA, wB = scn.sender.omega, scn.receiver.omega
    prov = scn.provider
    backend = {"direct": "closed-form" if scn.is_static and method == "static" else "quadrature",
               "nondirect": getattr(prov, "name", "none")}
    if method == "static":
        cd = c2_direct(scn, wA, wB)
        dd = d2_from_c2(lambda a, b: c2_direct(scn, a, b), wA, wB)
        cn, ecn = c2_nondirect(scn, wA, wB, panel, return_error=True)
        dn, edn = c2_nondirect(scn, wA, -wB, panel, return_error=True)
        dn = -dn
        errors = {"C2_nd": ecn, "D2_nd": edn}
    elif method == "general":
        cd, cn, (e1, e2) = c2_general(scn, wA, wB, panel, parts=True)
        dd, dn, (e3, e4) = c2_general(scn, wA, -wB, panel, parts=True)
        dd, dn = -dd, -dn
        errors = {"C2_d": e1, "C2_nd": e2, "D2_d": e3, "D2_nd": e4}
    else:
        raise ValueError("method must be 'static' or 'general'")
    return SignalTerms.from_parts((cd, dd), (cn, dn), backend, errors)


# --------------------------------------------------------------------------- symmetry, bounds


def time_mirror(scn: Scenario) -> Scenario:
    """Reverse time: roles exchanged, windows reflected, gaps kept."""
    if not scn.is_static:
        raise ValueError("time mirroring is implemented for static detectors")
    s, r = scn.sender, scn.receiver
    new_sender = DetectorSpec(r.omega, -r.stop, -r.start, r.worldline, r.coupling)
    new_receiver = DetectorSpec(s.omega, -s.stop, -s.start, s.worldline, s.coupling)
    return replace(scn, sender=new_sender, receiver=new_receiver)


def bit_probability(terms: SignalTerms, lambda_A: float, lambda_B: float) -> float:
    """Probability of correct bit transmission to leading order."""
    p = 0.5 + lambda_A * lambda_B * terms.strength
    if p > 1.0:
        raise NumericalError(f"p = {p:.6g} > 1: couplings too large for perturbation theory")
    return p


@dataclass(frozen=True)
class BoundReport:
    C_B: float
    strength: float
    bound: float
    holds: bool
    samples: int


def proper_time_bound(scn: Scenario, n_samples: int = 401, exclusion: float = 1e-6,
                      terms: SignalTerms | None = None) -> BoundReport:
    """Sampled estimate of C_B = sup F / (2 pi) along the receiver window and the bound check.

    F(x_B) = |int dtau_A eta_A e^{-i Omega_A tau_A} G_ret(x_B, x_A(tau_A))|.  The
    sampled supremum is a lower estimate of the true one.
    """
    if not scn.is_static:
        raise ValueError("bound sampling is implemented for static detectors")
    rA, rB = scn.sender.r, scn.receiver.r
    sep = math.sqrt(max(rA * rA + rB * rB - 2 * rA * rB * math.cos(scn.gamma), 0.0))
    if sep <= exclusion:
        raise ValueError("receiver region intersects the sender's worldline neighbourhood")
    B1, B2 = scn.receiver.start, scn.receiver.stop
    terms = terms or signal_terms(scn)
    if B2 == B1:
        return BoundReport(0.0, terms.strength, 0.0, terms.strength == 0.0, 0)
    p = scn.pair
    A1, A2 = scn.sender.start, scn.sender.stop
    wA = scn.sender.omega
    prov = scn.provider
    taus = np.linspace(B1, B2, n_samples)
    F = np.empty(n_samples)
    for k, tb in enumerate(taus):
        ta = p.nu * tb
        val = 0j
        if A1 <= ta <= A2:
            val += p.U / p.contraction * np.exp(-1j * wA * ta)
        top = min(A2, ta)
        if top > A1 and prov is not None and not isinstance(prov, FlatGreen):
            t_b = tb / p.N_B
            g = lambda x: np.exp(-1j * wA * x) * prov(t_b - (x / p.N_A - p.dt_direct), rA)
            val += integrate_panels(g, panel_edges(A1, top, (), PANEL))[0]
        F[k] = abs(val)
    C_B = float(F.max()) / (2 * math.pi)
    bound = C_B * (B2 - B1)
    return BoundReport(C_B, terms.strength, bound, terms.strength <= bound * (1 + 1e-9),
                       n_samples)


# --------------------------------------------------------------------------- distances


def mimicking_distance(bh: BlackHole, r_A: float, r_B: float, duration: float = 1.0) -> float:
    """Flat separation at which identical detectors match the resonant direct |C2|.

    Resonant radial |C2_d| = N_A T / (4 pi |r_A - r_B| nu) and the flat value
    T / (4 pi L) give L = |r_A - r_B| / N_B for any duration T and gap.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    return abs(r_A - r_B) / _lapse(bh, r_B)


def half_return_times(bh: BlackHole, r_A: float, r_B: float) -> tuple[float, float]:
    """Half the radial round-trip time in the sender's and in the receiver's proper time."""
    dt = abs(tortoise(bh, r_A) - tortoise(bh, r_B))
    return _lapse(bh, r_A) * dt, _lapse(bh, r_B) * dt


def minkowski_strength(omega: float, T: float, L: float) -> float:
    """|C2| + |D2| for identical static detectors at distance L, aligned windows of length T."""
    d = T / (4 * math.pi * L)
    if omega == 0:
        return 2 * d
    return d + abs(np.exp(2j * omega * T) - 1) / (8 * math.pi * omega * L)
