"""Closed-form model of the signal carried by a principal-value Green-function singularity.

Between static detectors the Green function is replaced by ``(1/L) PV 1/(s - s2)``
in the reduced s-integral.  The receiver-time integral f(s) is piecewise a sum
of exponentials in s (or linear in s at resonance), so every piece reduces to
kernels

    R(w, X, Y, s2) = PV int_X^Y e^{i w s} / (s - s2) ds
                   = e^{i w s2} [l(Y) - l(X)],
    l(Z) = ln|Z - s2| - Cin(w (Z - s2)) + i Si(w (Z - s2)).

The logarithms from all pieces are gathered per boundary point before they are
evaluated; where s2 meets a boundary their coefficient vanishes (f is
continuous and zero at the outer ends), so the combination stays finite.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .numkit import cin, sinint

RESONANCE_TOL = 1e-8
COINCIDENCE_TOL = 1e-12


@dataclass(frozen=True)
class PvScenario:
    """Static pair in the principal-value model: redshift nu, sender window, pole s2, scale L."""

    nu: float
    A1: float
    A2: float
    s2: float
    omega_A: float
    omega_B: float
    L: float = 1.0

    def __post_init__(self):
        if not self.A2 > self.A1:
            raise ValueError("sender window must satisfy A2 > A1")
        if not self.s2 > 0:
            raise ValueError("secondary delay s2 must be positive")
        if not (self.L > 0 and self.nu > 0):
            raise ValueError("L and nu must be positive")

    @property
    def window(self) -> float:
        """Receiver duration of the redshifted sender window."""
        return (self.A2 - self.A1) / self.nu

    @property
    def symmetry_shift(self) -> float:
        """B1 at which the shifted origin B1' = 0 sits."""
        return (self.s2 - self.A2 + 2 * self.A1) / self.nu

    def arrivals(self) -> tuple[float, float]:
        """Receiver times linked by the singularity to the sender's switch-on and switch-off."""
        return (self.s2 + self.A1) / self.nu, (self.s2 + self.A2) / self.nu


def _ell(w: float, z: float) -> complex:
    """Regular part of the kernel antiderivative (the log is handled separately)."""
    return complex(-cin(w * z), sinint(w * z))


def pv_kernel(omega: float, X: float, Y: float, s2: float) -> complex:
    """R(omega, X, Y, s2) = PV int_X^Y exp(i omega s)/(s - s2) ds."""
    if Y < X:
        raise ValueError("pv_kernel requires X <= Y")
    if Y == X:
        return 0j
    if min(abs(X - s2), abs(Y - s2)) <= COINCIDENCE_TOL * max(1.0, abs(s2)):
        raise ValueError("pole on an interval end: the bare kernel diverges")
    ph = complex(np.exp(1j * omega * s2))
    logs = math.log(abs(Y - s2)) - math.log(abs(X - s2))
    return ph * (logs + _ell(omega, Y - s2) - _ell(omega, X - s2))


class _Accumulator:
    """Sum of c * PV int_X^Y exp(i w s)/(s - s2) with boundary logs combined."""

    def __init__(self, s2: float):
        self.s2 = s2
        self.logs = defaultdict(complex)
        self.value = 0j

    def add(self, c: complex, w: float, X: float, Y: float):
        if Y <= X or c == 0:
            return
        a = c * complex(np.exp(1j * w * self.s2))
        self.logs[Y] += a
        self.logs[X] -= a
        self.value += a * (_ell(w, Y - self.s2) - _ell(w, X - self.s2))

    def add_regular(self, c: complex, w: float, X: float, Y: float):
        """c * int_X^Y exp(i w s) ds."""
        if Y <= X or c == 0:
            return
        if abs(w) * (Y - X) < RESONANCE_TOL:
            self.value += c * (Y - X) * complex(np.exp(0.5j * w * (X + Y)))
        else:
            self.value += c * (np.exp(1j * w * Y) - np.exp(1j * w * X)) / (1j * w)

    def total(self) -> complex:
        out = self.value
        tol = COINCIDENCE_TOL * max(1.0, abs(self.s2))
        for z, coef in self.logs.items():
            d = abs(z - self.s2)
            if d > tol:
                out += coef * math.log(d)
        return complex(out)


def _pieces(nu, A1, A2, B1, B2):
    """Pieces [X, Y] of the s-range with the receiver limits a(s), b(s) as (const, slope)."""
    s_lo, s_hi = max(nu * B1 - A2, 0.0), nu * B2 - A1
    if s_hi <= s_lo:
        return []
    cuts = sorted({s_lo, s_hi, *(c for c in (nu * B1 - A1, nu * B2 - A2) if s_lo < c < s_hi)})
    out = []
    for X, Y in zip(cuts[:-1], cuts[1:]):
        m = 0.5 * (X + Y)
        a = (B1, 0.0) if B1 >= (m + A1) / nu else (A1 / nu, 1.0 / nu)
        b = (B2, 0.0) if B2 <= (m + A2) / nu else (A2 / nu, 1.0 / nu)
        out.append((X, Y, a, b))
    return out


def pv_c2(scn: PvScenario, B1: float, B2: float, omega_B: float | None = None) -> complex:
    """C2 of the model for a receiver window [B1, B2]; omega_B may be negative (D2 route)."""
    wA = scn.omega_A
    wB = scn.omega_B if omega_B is None else omega_B
    nu, s2 = scn.nu, scn.s2
    delta = wB - nu * wA
    acc = _Accumulator(s2)
    # a window of width (A2 - A1)/nu sweeps delta * tau over at most that range
    span = max(B2 - B1, 0.0) + (scn.A2 - scn.A1) / nu
    resonant = abs(delta) * span < RESONANCE_TOL
    for X, Y, (ac, asl), (bc, bsl) in _pieces(nu, scn.A1, scn.A2, B1, B2):
        if resonant:
            # f(s) = p + q s
            p, q = bc - ac, bsl - asl
            acc.add(p + q * s2, wA, X, Y)
            acc.add_regular(q, wA, X, Y)
        else:
            # f(s) = (e^{i delta b(s)} - e^{i delta a(s)}) / (i delta)
            for sign, (c0, sl) in ((1, (bc, bsl)), (-1, (ac, asl))):
                coef = sign * complex(np.exp(1j * delta * c0)) / (1j * delta)
                acc.add(coef, wA + delta * sl, X, Y)
    return -1j / (4 * math.pi * scn.L) * acc.total()


def pv_terms(scn: PvScenario, B1: float, B2: float) -> tuple[complex, complex]:
    """(C2, D2) with D2 = -C2(Omega_A, -Omega_B)."""
    return pv_c2(scn, B1, B2), -pv_c2(scn, B1, B2, -scn.omega_B)


def pv_shift_scan(scn: PvScenario, B1s) -> np.ndarray:
    """Strength |C2| + |D2| for synchronized windows [B1, B1 + (A2 - A1)/nu]."""
    out = []
    for B1 in np.asarray(B1s, dtype=float):
        c, d = pv_terms(scn, B1, B1 + scn.window)
        out.append(abs(c) + abs(d))
    return np.array(out)


def pv_cumulative_scan(scn: PvScenario, B2s) -> np.ndarray:
    """Strength for receiver windows [A1/nu, B2] with B2 >= A2/nu."""
    B1 = scn.A1 / scn.nu
    out = []
    for B2 in np.asarray(B2s, dtype=float):
        if B2 < scn.A2 / scn.nu - 1e-12:
            raise ValueError("cumulative scan requires B2 >= A2/nu")
        c, d = pv_terms(scn, B1, B2)
        out.append(abs(c) + abs(d))
    return np.array(out)


def s2_from_geometry(N_A: float, dt_secondary: float, dt_direct: float) -> float:
    """Secondary delay in the s-variable from coordinate flight times."""
    return N_A * (dt_secondary - dt_direct)


@dataclass(frozen=True)
class PvGreen:
    """Principal-value provider for the channel module: (1/L) PV 1/(s - s2) in s.

    In coordinate time, s - s2 = N_A (dt - dt_pole), so the pole residue in dt is 1/(L N_A).
    """

    dt_direct: float
    dt_pole: float
    N_A: float
    L: float = 1.0
    window: tuple = (-math.inf, math.inf)
    name: str = "pv-model"

    def coverage(self, r_field=None):
        return self.window

    def breaks(self, r_field=None):
        return ()

    def knots(self, r_field=None):
        return None

    def cauchy(self, r_field=None):
        return self.dt_pole, 1.0 / (self.L * self.N_A)

    def __call__(self, dt, r_field=None):
        return np.zeros_like(np.asarray(dt, dtype=float))
