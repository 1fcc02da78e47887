"""Schwarzschild background: coordinates, redshift, geodesics, distances, worldlines.

Geometric units c = G = 1. ``M = 0`` is accepted and means Minkowski space, with
the tortoise coordinate reducing to ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import optimize, special

from .numkit import NumericalError, OdeSpec, ode_solve

OrbitClass = Literal["direct", "secondary", "tertiary", "quaternary"]
ORBIT_CLASSES: tuple[str, ...] = ("direct", "secondary", "tertiary", "quaternary")
CAUSTIC_BAND = 0.02


class GeometryError(ValueError):
    """Invalid geometric request (domain violation, unreachable ray, caustic)."""


@dataclass(frozen=True)
class BlackHole:
    M: float = 1.0

    def __post_init__(self):
        if not (self.M >= 0 and math.isfinite(self.M)):
            raise GeometryError("mass must be finite and non-negative")

    @property
    def r_h(self) -> float:
        return 2.0 * self.M

    def f(self, r):
        return 1.0 - 2.0 * self.M / np.asarray(r, dtype=float)

    def check_exterior(self, r):
        if np.any(np.asarray(r) <= 2.0 * self.M):
            raise GeometryError(f"radius must exceed 2M = {2 * self.M}")


@dataclass(frozen=True)
class SpacetimePoint:
    t: float
    r: float
    theta: float = 0.5 * math.pi
    phi: float = 0.0


def lapse(bh: BlackHole, r):
    """Lapse N = sqrt(1 - 2M/r) of the static observer at radius r."""
    bh.check_exterior(r)
    out = np.sqrt(bh.f(r))
    return out if out.ndim else float(out)


def redshift(bh: BlackHole, r_A: float, r_B: float) -> float:
    """nu = N(r_A)/N(r_B)."""
    return lapse(bh, r_A) / lapse(bh, r_B)


def tortoise(bh: BlackHole, r):
    bh.check_exterior(r)
    r = np.asarray(r, dtype=float)
    if bh.M == 0:
        out = r.copy()
    else:
        out = r + 2.0 * bh.M * np.log(r / bh.M - 2.0)
    return out if out.ndim else float(out)


def inverse_tortoise(bh: BlackHole, rstar):
    """Radius r(r_*) via the Lambert W function, refined by Newton steps."""
    rstar = np.asarray(rstar, dtype=float)
    if bh.M == 0:
        if np.any(rstar <= 0):
            raise GeometryError("flat-space tortoise inversion needs r_* > 0")
        return rstar if rstar.ndim else float(rstar)
    M = bh.M
    x = rstar / (2 * M) - 1.0 - math.log(2.0)
    # w = r/2M - 1 solves w + ln w = x, i.e. w = W(exp(x)); use the asymptotic form where exp overflows
    big = x > 600
    w = np.where(big, x - np.log(np.where(big, x, 1.0)), 0.0)
    small = ~big
    w[small] = np.real(special.lambertw(np.exp(x[small])))
    r = 2 * M * (1 + w)
    for _ in range(3):
        g = r + 2 * M * np.log(r / M - 2) - rstar
        r = r - g * (1 - 2 * M / r)
    if np.any(~np.isfinite(r)) or np.any(r <= 2 * M):
        raise NumericalError("tortoise inversion failed near the horizon")
    return r if r.ndim else float(r)


@dataclass(frozen=True)
class NullRay:
    """A future-directed null geodesic from the emitter to the receiver.

    Affine normalization E = 1, so dt/dlam = 1/f and L equals the impact
    parameter b.  ``t, r, phi`` sample the path on the ``lam`` grid.
    """

    E: float
    L: float
    orbit_class: str
    dt: float
    dlam: float
    lam: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    pr: np.ndarray = field(repr=False)
    pr0: float = 0.0
    sweep: float = 0.0
    M: float = 1.0

    def tangent(self, lam: float) -> np.ndarray:
        """Contravariant tangent (t', r', theta', phi') in the equatorial plane."""
        r = float(np.interp(lam, self.lam, self.r))
        pr = float(np.interp(lam, self.lam, self.pr))
        f = 1 - 2 * self.M / r
        return np.array([self.E / f, pr, 0.0, self.L / r**2])


def radial_null(bh: BlackHole, r_A: float, r_B: float, n: int = 201) -> NullRay:
    """Closed-form radial null ray from r_A to r_B with r(lam) = r_A -/+ lam."""
    bh.check_exterior([r_A, r_B])
    if r_A == r_B:
        raise GeometryError("radial null ray needs distinct radii")
    sign = -1.0 if r_B < r_A else 1.0
    dlam = abs(r_A - r_B)
    lam = np.linspace(0.0, dlam, n)
    r = r_A + sign * lam
    if bh.M == 0:
        t = lam.copy()
    else:
        t = lam + sign * 2 * bh.M * np.log((r - 2 * bh.M) / (r_A - 2 * bh.M))
    dt = abs(tortoise(bh, r_A) - tortoise(bh, r_B))
    return NullRay(E=1.0, L=0.0, orbit_class="direct", dt=dt, dlam=dlam, lam=lam, t=t,
                   r=r, phi=np.zeros_like(lam), pr=np.full_like(lam, sign), pr0=sign, sweep=0.0, M=bh.M)


def sweep_angle(gamma: float, orbit_class: str) -> float:
    k = ORBIT_CLASSES.index(orbit_class)
    return (gamma, 2 * math.pi - gamma, 2 * math.pi + gamma, 4 * math.pi - gamma)[k]


def _ray_rhs(M, b):
    def rhs(lam, y):
        t, r, pr, phi = y
        f = 1 - 2 * M / r
        return [1.0 / f, pr, b * b * (r - 3 * M) / r**4, b / r**2]

    return rhs


def _trace(bh: BlackHole, r_A: float, psi: float, phi_target: float, dense: bool = False):
    """Integrate the ray emitted at angle psi from the outward radial direction.

    Returns (r at phi_target or a clamp value, solution or None).
    """
    M = bh.M
    f_A = 1 - 2 * M / r_A
    b = math.sin(psi) * r_A / math.sqrt(f_A)
    pr0 = math.cos(psi)
    if b <= 0:
        return (math.inf if pr0 > 0 else 2 * M), None
    rhs = _ray_rhs(M, b)
    r_far = max(1e4 * max(M, 1.0), 100 * r_A)

    def ev_phi(lam, y):
        return y[3] - phi_target

    def ev_capture(lam, y):
        return y[1] - 2 * M * (1 + 1e-7) if M > 0 else y[1] - 1e-9 * r_A

    def ev_escape(lam, y):
        return y[1] - r_far

    for ev in (ev_phi, ev_capture, ev_escape):
        ev.terminal = True
    ev_phi.direction = 1.0
    ev_capture.direction = -1.0
    ev_escape.direction = 1.0
    lam_max = 1e7 * max(r_A, 1.0)
    spec = OdeSpec(rtol=1e-12, atol=1e-13, initial_step=1e-4 * r_A)
    sol = ode_solve(rhs, [0.0, r_A, pr0, 0.0], (0.0, lam_max), spec,
                    events=[ev_phi, ev_capture, ev_escape])
    if len(sol.t_events[0]):
        r_end = float(sol.y_events[0][0][1])
    elif len(sol.t_events[1]):
        r_end = 2 * M if M > 0 else 0.0
    else:
        r_end = math.inf
    return r_end, (sol if dense else None)


def null_shoot(bh: BlackHole, r_A: float, r_B: float, gamma: float,
               orbit_class: str = "direct", caustic_band: float = CAUSTIC_BAND,
               n_samples: int = 401) -> NullRay:
    """Null geodesic from r_A to r_B sweeping the class angle (direct: gamma).

    The emission direction psi in (0, pi) (measured from the outward radial
    direction) orders all rays monotonically in the radius reached at a fixed
    sweep, so a bracketed root find over psi is robust, including the
    photon-sphere regime where the impact parameter crosses 3*sqrt(3)*M.
    """
    bh.check_exterior([r_A, r_B])
    if orbit_class not in ORBIT_CLASSES:
        raise GeometryError(f"unknown orbit class {orbit_class!r}")
    if not (0.0 < gamma < math.pi):
        raise GeometryError("gamma must lie in (0, pi)")
    if gamma > math.pi - caustic_band or (orbit_class != "direct" and gamma < caustic_band):
        raise GeometryError("angular separation inside the caustic exclusion band")
    target = sweep_angle(gamma, orbit_class)

    def miss(psi):
        r_end, _ = _trace(bh, r_A, psi, target)
        inv = 0.0 if math.isinf(r_end) else 1.0 / r_end
        return inv - 1.0 / r_B

    lo, hi = 1e-9, math.pi - 1e-9
    f_lo, f_hi = miss(lo), miss(hi)
    if not (f_lo < 0 < f_hi):
        raise GeometryError(f"no {orbit_class} ray connects r={r_A} to r={r_B} at gamma={gamma}")
    psi = optimize.brentq(miss, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
    _, sol = _trace(bh, r_A, psi, target, dense=True)
    if not len(sol.t_events[0]):
        raise GeometryError("shooting converged onto a non-arriving ray")
    lam_end = float(sol.t_events[0][0])
    y_end = sol.y_events[0][0]
    if abs(y_end[1] - r_B) > 1e-7 * r_B:
        raise NumericalError(f"shooting residual too large: r={y_end[1]} vs {r_B}")
    lam = np.linspace(0.0, lam_end, n_samples)
    ys = sol(lam)
    f_A = 1 - 2 * bh.M / r_A
    b = math.sin(psi) * r_A / math.sqrt(f_A)
    return NullRay(E=1.0, L=b, orbit_class=orbit_class, dt=float(y_end[0]), dlam=lam_end,
                   lam=lam, t=ys[0], r=ys[1], phi=ys[3], pr=ys[2], pr0=math.cos(psi), sweep=target,
                   M=bh.M)


def connecting_ray(bh: BlackHole, r_A: float, r_B: float, gamma: float,
                   orbit_class: str = "direct", caustic_band: float = CAUSTIC_BAND) -> NullRay:
    """Radial closed form for gamma = 0 direct rays, shooting otherwise."""
    if gamma == 0.0 and orbit_class == "direct":
        return radial_null(bh, r_A, r_B)
    return null_shoot(bh, r_A, r_B, gamma, orbit_class, caustic_band)


def static_distance(bh: BlackHole, r_A: float, r_B: float) -> float:
    """Proper radial distance between static observers on a t = const slice."""
    if bh.M == 0:
        return abs(r_A - r_B)
    bh.check_exterior([r_A, r_B])

    def prim(r):
        s = math.sqrt(1 - 2 * bh.M / r)
        return r * s + bh.M * math.log(r * s - bh.M + r)

    return abs(prim(r_A) - prim(r_B))


def static_distance_horizon_limit(bh: BlackHole, r_A: float) -> float:
    """Limit of the static distance as the second observer approaches r = 2M."""
    s = math.sqrt(1 - 2 * bh.M / r_A)
    return abs(r_A * s + bh.M * math.log((r_A * s - bh.M + r_A) / bh.M))


# --------------------------------------------------------------------------- worldlines


@dataclass(frozen=True)
class StaticWorldline:
    """Static observer with proper time tau = N (t + t_shift)."""

    bh: BlackHole
    r: float
    t_shift: float = 0.0
    kind: str = field(default="static", init=False)

    def __post_init__(self):
        self.bh.check_exterior(self.r)

    @property
    def N(self) -> float:
        return math.sqrt(self.bh.f(self.r))

    def tau_of_t(self, t):
        return self.N * (np.asarray(t) + self.t_shift)

    def t_of_tau(self, tau):
        return np.asarray(tau) / self.N - self.t_shift

    def r_of_tau(self, tau):
        return np.full_like(np.asarray(tau, dtype=float), self.r)

    def velocity(self, tau) -> np.ndarray:
        return np.array([1.0 / self.N, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class InfallWorldline:
    """Radial geodesic released from rest at r0 at proper time 0, coordinate time t0.

    Tabulated once by ODE integration of d2r/dtau2 = -M/r^2, dt/dtau = E/f, and
    served through the dense-output interpolant.
    """

    bh: BlackHole
    r0: float
    t0: float = 0.0
    r_stop_factor: float = 1.0 + 1e-4
    kind: str = field(default="radial-infall", init=False)
    _sol: object = field(default=None, repr=False, compare=False)
    _tau_end: float = field(default=0.0, repr=False, compare=False)

    @property
    def energy(self) -> float:
        return math.sqrt(1 - 2 * self.bh.M / self.r0)

    def _eval(self, tau, k):
        tau = np.asarray(tau, dtype=float)
        if tau.ndim <= 1:
            return self._sol(tau)[k]
        return self._sol(tau.ravel())[k].reshape(tau.shape)

    def r_of_tau(self, tau):
        return self._eval(tau, 0)

    def t_of_tau(self, tau):
        return self._eval(tau, 2)

    def tau_of_r(self, r: float) -> float:
        if r <= 2 * self.bh.M:
            raise GeometryError("infall queries must stay outside the horizon")
        if r > self.r0 or r < 2 * self.bh.M * self.r_stop_factor:
            raise GeometryError("radius outside tabulated infall range")
        if r == self.r0:
            return 0.0
        return optimize.brentq(lambda s: self.r_of_tau(s) - r, 0.0, self._tau_end,
                               xtol=1e-14, rtol=1e-15)

    def tau_of_t(self, t: float) -> float:
        return optimize.brentq(lambda s: self.t_of_tau(s) - t, 0.0, self._tau_end,
                               xtol=1e-14, rtol=1e-15)

    @property
    def tau_end(self) -> float:
        return self._tau_end

    def velocity(self, tau) -> np.ndarray:
        r, rdot, _ = self._sol(float(tau))
        f = 1 - 2 * self.bh.M / r
        return np.array([self.energy / f, rdot, 0.0, 0.0])


def infall_worldline(bh: BlackHole, r0: float, t0: float = 0.0,
                     r_stop_factor: float = 1.0 + 1e-4) -> InfallWorldline:
    """Radial timelike geodesic from rest at r0, integrated down to r_stop_factor*2M."""
    bh.check_exterior(r0)
    M = bh.M
    E = math.sqrt(1 - 2 * M / r0)
    r_stop = 2 * M * r_stop_factor

    def rhs(tau, y):
        r, rdot, _t = y
        return [rdot, -M / r**2, E / (1 - 2 * M / r)]

    def ev(tau, y):
        return y[0] - r_stop

    ev.terminal = True
    # the free-fall time from rest bounds the integration range
    tau_ff = math.pi * math.sqrt(r0**3 / (8 * M))
    sol = ode_solve(rhs, [r0, 0.0, t0], (0.0, 1.01 * tau_ff),
                    OdeSpec(rtol=1e-12, atol=1e-13, initial_step=1e-4), events=[ev])
    tau_end = float(sol.t_events[0][0]) if len(sol.t_events[0]) else float(sol.t[-1])
    wl = InfallWorldline(bh, r0, t0, r_stop_factor)
    object.__setattr__(wl, "_sol", sol.sol)
    object.__setattr__(wl, "_tau_end", tau_end)
    return wl


def cycloid_proper_time(bh: BlackHole, r0: float, r: float) -> float:
    """Proper time to fall from rest at r0 to r (closed-form cycloid solution)."""
    eta = math.acos(2 * r / r0 - 1)
    return math.sqrt(r0**3 / (8 * bh.M)) * (eta + math.sin(eta))
