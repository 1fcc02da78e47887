"""Convolution-theorem route to the tail part of C2 between static detectors.

With coordinate times t1 (receiver) and t2 (sender, shifted by the direct
flight time) the tail contribution is a sum over powers of t1 - t2 of
moments of the switching indicator

    Theta(t1, t2) = eta_B(t1) eta_A(t2) theta(t1 - t2 - dt),
    F[Theta](k1, k2) = int int exp(-i (k1 t1 + k2 t2)) Theta dt1 dt2,
    M_n(k1, k2) = int int (t1 - t2)^n exp(-i (k1 t1 + k2 t2)) Theta,

and d^n/dl^n F[Theta](k1 + l, k2 - l) = (-i)^n M_n.  Moments are evaluated in
coordinates (s = t1 - t2, t1): the t1-integral is closed form and the
remaining polynomial-times-exponential s-integral uses Gauss-Legendre panels,
which integrate it to rounding accuracy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import Scenario
from .hadamard import TailSeries
from .numkit import integrate_panels, panel_edges

SMALL = 1e-3


@dataclass(frozen=True)
class SwitchingWindows:
    """Coordinate-time supports of eta_B (t1) and eta_A (t2), and the causal offset dt."""

    t1: tuple[float, float]
    t2: tuple[float, float]
    dt: float = 0.0

    def s_range(self) -> tuple[float, float]:
        b1, b2 = self.t1
        a1, a2 = self.t2
        return max(self.dt, b1 - a2), b2 - a1

    def kinks(self) -> tuple[float, ...]:
        lo, hi = self.s_range()
        b1, b2 = self.t1
        a1, a2 = self.t2
        return tuple(sorted(k for k in (b1 - a1, b2 - a2) if lo < k < hi))

    def case(self) -> str:
        """'timelike' if the step is inactive on the support, 'null' if it cuts it, else 'empty'."""
        lo, hi = self.s_range()
        if hi <= lo:
            return "empty"
        return "timelike" if self.t1[0] - self.t2[1] >= self.dt else "null"


def windows_for(scn: Scenario) -> SwitchingWindows:
    """Switching windows of a static scenario in the coordinate times of the tail integral."""
    p = scn.pair
    return SwitchingWindows(
        t1=(scn.receiver.start / p.N_B, scn.receiver.stop / p.N_B),
        t2=(scn.sender.start / p.N_A - p.dt_direct, scn.sender.stop / p.N_A - p.dt_direct),
        dt=p.dt_direct,
    )


def _exp_poly(w: float, X: float, Y: float, n: int) -> complex:
    """int_X^Y s^n exp(i w s) ds for n in {0, 1}, with small-argument series."""
    if Y <= X:
        return 0j
    scale = abs(w) * max(abs(X), abs(Y), Y - X)
    if scale < SMALL:
        out = 0j
        term = 1.0 + 0j
        for m in range(12):
            out += term * (Y ** (m + n + 1) - X ** (m + n + 1)) / (m + n + 1)
            term *= 1j * w / (m + 1)
        return out
    eY, eX = np.exp(1j * w * Y), np.exp(1j * w * X)
    e0 = (eY - eX) / (1j * w)
    if n == 0:
        return complex(e0)
    return complex((Y * eY - X * eX) / (1j * w) - e0 / (1j * w))


def _pieces(win: SwitchingWindows):
    lo, hi = win.s_range()
    if hi <= lo:
        return []
    b1, b2 = win.t1
    a1, a2 = win.t2
    cuts = [lo, *win.kinks(), hi]
    out = []
    for X, Y in zip(cuts[:-1], cuts[1:]):
        m = 0.5 * (X + Y)
        low = (b1, 0.0) if b1 >= a1 + m else (a1, 1.0)
        up = (b2, 0.0) if b2 <= a2 + m else (a2, 1.0)
        out.append((X, Y, low, up))
    return out


def ft_theta(win: SwitchingWindows, k1: float, k2: float) -> complex:
    """Closed-form F[Theta](k1, k2)."""
    K = k1 + k2
    total = 0j
    for X, Y, (lc, ls), (uc, us) in _pieces(win):
        # inner t1-integral over [lc + ls s, uc + us s] of exp(-i K t1); outer weight exp(i k2 s)
        if abs(K) * (abs(uc) + abs(lc) + (abs(us) + abs(ls)) * max(abs(X), abs(Y))) < SMALL:
            p, q = uc - lc, us - ls
            corr = 0j
            # second-order correction in K for the nearly resonant inner integral
            if K != 0:
                g = lambda s: _inner(K, lc + ls * s, uc + us * s)
                corr = integrate_panels(lambda s: np.exp(1j * k2 * s) * (g(s) - (p + q * s)),
                                        panel_edges(X, Y, (), 0.25), n=12)[0]
            total += p * _exp_poly(k2, X, Y, 0) + q * _exp_poly(k2, X, Y, 1) + corr
        else:
            for sign, c, sl in ((1, uc, us), (-1, lc, ls)):
                coef = sign * np.exp(-1j * K * c) / (-1j * K)
                total += coef * _exp_poly(k2 - K * sl, X, Y, 0)
    return complex(total)


def _inner(K, lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    w = np.maximum(hi - lo, 0.0)
    x = 0.5 * K * w
    safe = np.where(np.abs(x) < 1e-4, 1.0, x)
    sinc = np.where(np.abs(x) < 1e-4, 1 - x * x / 6, np.sin(safe) / safe)
    return w * np.exp(-0.5j * K * (lo + hi)) * sinc


def theta_moment(win: SwitchingWindows, k1: float, k2: float, n: int, nodes: int = 16,
                 width: float = 0.25) -> complex:
    """M_n(k1, k2) = int int (t1 - t2)^n exp(-i (k1 t1 + k2 t2)) Theta."""
    if n < 0:
        raise ValueError("moment order must be non-negative")
    lo, hi = win.s_range()
    if hi <= lo:
        return 0j
    b1, b2 = win.t1
    a1, a2 = win.t2
    K = k1 + k2

    def f(s):
        low = np.maximum(b1, a1 + s)
        up = np.minimum(b2, a2 + s)
        return s**n * np.exp(1j * k2 * s) * _inner(K, low, up)

    return complex(integrate_panels(f, panel_edges(lo, hi, win.kinks(), width), n=nodes)[0])


def ft_theta_derivative(win: SwitchingWindows, k1: float, k2: float, n: int) -> complex:
    """d^n/dl^n F[Theta](k1 + l, k2 - l) at l = 0."""
    return (-1j) ** n * theta_moment(win, k1, k2, n)


@dataclass(frozen=True)
class TailTimeSeries:
    """V between two fixed spatial points as sum_n c[n] (t1 - t2)^n."""

    c: np.ndarray
    order: int

    def value(self, dt):
        dt = np.asarray(dt, dtype=float)
        return np.polynomial.polynomial.polyval(dt, self.c)


def tail_time_series(tail: TailSeries, r_A: float, r_B: float, gamma: float,
                     order: int | None = None) -> TailTimeSeries:
    """Collapse v_ijk at fixed (1 - cos gamma) and radial offset into powers of t1 - t2.

    The tail is based at one of the two radii; the other gives the offset.
    Only even powers occur because V depends on the time separation squared.
    """
    if math.isclose(tail.r, r_A):
        y = r_B - tail.r
    elif math.isclose(tail.r, r_B):
        y = r_A - tail.r
    else:
        raise ValueError("tail series must be based at one of the two detector radii")
    order = tail.order if order is None else order
    if order > tail.order:
        raise ValueError(f"order {order} exceeds the available tail order {tail.order}")
    w = 1.0 - math.cos(gamma)
    c = np.zeros(2 * order + 1)
    v = tail.coeffs
    for i in range(order + 1):
        acc = 0.0
        for j in range(order + 1 - i):
            for k in range(order + 1 - i - j):
                acc += v[i, j, k] * w**j * y**k
        c[2 * i] = acc
    return TailTimeSeries(c=c, order=order)


@dataclass(frozen=True)
class FourierTail:
    value: complex
    last_term: float
    warning: str | None = None


def c2_fourier_tail(scn: Scenario, series: TailTimeSeries, omega_A: float | None = None,
                    omega_B: float | None = None, tol: float | None = None) -> FourierTail:
    """Tail contribution to C2 (G replaced by -V) from moments of the switching indicator."""
    if not scn.is_static:
        raise ValueError("the convolution route needs static detectors")
    wA = scn.sender.omega if omega_A is None else omega_A
    wB = scn.receiver.omega if omega_B is None else omega_B
    p = scn.pair
    win = windows_for(scn)
    k1, k2 = -p.N_B * wB, p.N_A * wA
    pref = 1j * p.N_A * p.N_B * np.exp(-1j * p.N_A * wA * p.dt_direct) / (4 * math.pi)
    total, last = 0j, 0.0
    for n, cn in enumerate(series.c):
        if cn == 0.0:
            continue
        term = pref * cn * theta_moment(win, k1, k2, n)
        total += term
        last = abs(term)
    warn = None
    if tol is not None and last > tol:
        warn = f"last series term {last:.3g} exceeds tolerance {tol:.3g}"
        warnings.warn(warn)
    return FourierTail(complex(total), last, warn)
