"""Special functions and numerical primitives shared by the physics modules."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy import integrate, special


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails to reach its target accuracy."""

    def __init__(self, message: str, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadratureSpec:
    rtol: float = 1e-8
    atol: float = 1e-12
    max_subdivisions: int = 200

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


@dataclass(frozen=True)
class OdeSpec:
    controller: Literal["adaptive", "fixed"] = "adaptive"
    initial_step: float = 1e-3
    rtol: float = 1e-11
    atol: float = 1e-13
    method: str = "DOP853"

    def __post_init__(self):
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")


def legendre_p(ell: int, x):
    """Legendre polynomial P_ell(x) by the upward three-term recurrence."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-15):
        raise ValueError("legendre_p requires |x| <= 1")
    if ell < 0:
        raise ValueError("ell must be non-negative")
    p_prev = np.ones_like(x)
    if ell == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    p = x.copy()
    for n in range(1, ell):
        p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
    return p if p.ndim else float(p)


def legendre_table(ell_max: int, x: float) -> np.ndarray:
    """All P_0(x) .. P_ell_max(x) at a single argument."""
    if abs(x) > 1.0 + 1e-15:
        raise ValueError("legendre_table requires |x| <= 1")
    out = np.empty(ell_max + 1)
    out[0] = 1.0
    if ell_max >= 1:
        out[1] = x
    for n in range(1, ell_max):
        out[n + 1] = ((2 * n + 1) * x * out[n] - n * out[n - 1]) / (n + 1)
    return out


def sinint(x):
    """Sine integral Si(x); odd in x."""
    x = np.asarray(x, dtype=float)
    si = np.sign(x) * special.sici(np.abs(x))[0]
    return si if si.ndim else float(si)


def cosint(x):
    """Cosine integral Ci(x) for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("cosint requires x > 0")
    ci = special.sici(x)[1]
    return ci if ci.ndim else float(ci)


def cin(x):
    """Entire cosine integral Cin(x) = int_0^x (1 - cos t)/t dt = gamma + ln|x| - Ci(|x|); even."""
    x = np.abs(np.asarray(x, dtype=float))
    small = x < 0.5
    xs = np.where(small, x, 0.0)
    x2 = xs * xs
    # series sum_k (-1)^(k+1) x^(2k) / (2k (2k)!)
    ser = x2 / 4 - x2**2 / 96 + x2**3 / 4320 - x2**4 / 322560 + x2**5 / 36288000
    safe = np.where(small, 1.0, x)
    big = np.euler_gamma + np.log(safe) - special.sici(safe)[1]
    out = np.where(small, ser, big)
    return out if out.ndim else float(out)


def sinc(x):
    """Unnormalized sinc, sin(x)/x with sinc(0) = 1. Accepts complex input."""
    x = np.asarray(x)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    x2 = x * x
    out = np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)
    return out if out.ndim else out[()]


def integrate_1d(f: Callable, a: float, b: float, spec: QuadratureSpec = QuadratureSpec(),
                 points=None, complex_valued: bool | None = None):
    """Adaptive Gauss-Kronrod quadrature of a real or complex integrand on [a, b].

    ``points`` lists interior abscissae where the integrand is kinked or
    singular; the interval is split there before integration.
    """
    if b < a:
        raise ValueError("integrate_1d requires a <= b")
    if b == a:
        return 0.0
    cuts = sorted({float(p) for p in (points or ()) if a < p < b})
    edges = [a, *cuts, b]
    if complex_valued is None:
        complex_valued = np.iscomplexobj(f(0.5 * (a + b)))
    total = 0.0 + 0.0j if complex_valued else 0.0
    err_total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if complex_valued:
            parts = []
            for comp in (np.real, np.imag):
                val, err = _quad(lambda s, comp=comp: comp(f(s)), lo, hi, spec)
                parts.append(val)
                err_total += err
            total += parts[0] + 1j * parts[1]
        else:
            val, err = _quad(f, lo, hi, spec)
            total += val
            err_total += err
    return total


def _quad(f, a, b, spec):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsabs=spec.atol, epsrel=spec.rtol,
                                      limit=spec.max_subdivisions)
        except integrate.IntegrationWarning as exc:
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, a, b, epsabs=spec.atol, epsrel=spec.rtol,
                                      limit=spec.max_subdivisions)
            if err > max(spec.atol, spec.rtol * abs(val)) * 10:
                raise NumericalError(f"quadrature did not converge on [{a}, {b}]: {exc}",
                                     estimate=val, error=err) from None
    return val, err


@dataclass
class OdeSolution:
    """Dense solution of an ODE integration."""

    t: np.ndarray
    y: np.ndarray
    sol: Callable
    t_events: list
    y_events: list
    status: int

    def __call__(self, lam):
        return self.sol(lam)


def ode_solve(rhs: Callable, y0, span: tuple[float, float], spec: OdeSpec = OdeSpec(),
              events=None) -> OdeSolution:
    """Integrate y' = rhs(lam, y) with dense output."""
    y0 = np.atleast_1d(np.asarray(y0))
    if spec.controller == "fixed":
        return _rk4_fixed(rhs, y0, span, spec.initial_step)
    res = integrate.solve_ivp(rhs, span, y0, method=spec.method, rtol=spec.rtol,
                              atol=spec.atol, dense_output=True, events=events,
                              first_step=min(spec.initial_step, abs(span[1] - span[0])))
    if res.status == -1:
        raise NumericalError(f"ode integration failed: {res.message}",
                             estimate=(res.t[-1], res.y[:, -1]))
    return OdeSolution(res.t, res.y, res.sol, res.t_events or [], res.y_events or [],
                       res.status)


def _rk4_fixed(rhs, y0, span, step):
    a, b = span
    n = max(1, int(math.ceil(abs(b - a) / step)))
    ts = np.linspace(a, b, n + 1)
    ys = np.empty((y0.size, n + 1), dtype=np.result_type(y0, float))
    ys[:, 0] = y0
    y = y0.astype(ys.dtype)
    for i in range(n):
        t, dt = ts[i], ts[i + 1] - ts[i]
        k1 = np.asarray(rhs(t, y))
        k2 = np.asarray(rhs(t + dt / 2, y + dt / 2 * k1))
        k3 = np.asarray(rhs(t + dt / 2, y + dt / 2 * k2))
        k4 = np.asarray(rhs(t + dt, y + dt * k3))
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[:, i + 1] = y
    from scipy.interpolate import CubicSpline

    spline = CubicSpline(ts, ys, axis=1)
    return OdeSolution(ts, ys, spline, [], [], 0)


def gauss_legendre(n: int, a: float, b: float):
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def panel_edges(a: float, b: float, breaks=(), width: float = math.inf) -> np.ndarray:
    """Edges covering [a, b], split at interior ``breaks`` and refined to ``width``."""
    if b < a:
        raise ValueError("panel_edges requires a <= b")
    cuts = np.unique(np.concatenate(([a, b], [p for p in np.asarray(breaks, float).ravel()
                                               if a < p < b])))
    out = [cuts[:1]]
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((hi - lo) / width))) if math.isfinite(width) else 1
        out.append(np.linspace(lo, hi, n + 1)[1:])
    return np.concatenate(out)


def integrate_panels(f: Callable, edges, n: int = 8):
    """Composite Gauss-Legendre quadrature of a vectorized integrand.

    Returns ``(value, error)`` where the error is the difference to the rule
    with ``n + 4`` nodes per panel.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2:
        return 0.0, 0.0
    vals = []
    for m in (n, n + 4):
        x, w = _leggauss(m)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        nodes = mid[:, None] + half[:, None] * x[None, :]
        vals.append(np.sum(f(nodes) * (half[:, None] * w[None, :])))
    return vals[1], float(abs(vals[1] - vals[0]))


def cauchy_pv(g: Callable, a: float, b: float, pole: float,
              spec: QuadratureSpec = QuadratureSpec()) -> complex:
    """Principal value of the integral of g(s)/(s - pole) over [a, b], complex g allowed."""
    if not a < pole < b:
        raise ValueError("pole must lie strictly inside (a, b)")
    out = []
    for comp in (np.real, np.imag):
        val, _ = integrate.quad(lambda s: float(comp(g(s))), a, b, weight="cauchy", wvar=pole,
                                epsabs=spec.atol, epsrel=spec.rtol, limit=spec.max_subdivisions)
        out.append(val)
    return complex(out[0], out[1])
