"""Quasi-local Green function: van Vleck transport and the Hadamard tail series.

The retarded Green function in a normal neighbourhood reads
``G = (U delta(sigma) - V theta(-sigma)) theta(dt)`` with ``U`` the square root
of the van Vleck determinant and ``V`` the tail.  ``U`` and ``sigma^a_b`` are
obtained by integrating transport equations along the connecting geodesic;
``V`` is built as a coordinate power series (see :mod:`bhsignal.series`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .curvature import christoffel, riemann_up
from .geometry import BlackHole, GeometryError, NullRay, connecting_ray, tortoise
from .numkit import NumericalError, OdeSpec, ode_solve
from . import series as ps

MAX_NATIVE_ORDER = 12


class CausticError(NumericalError):
    pass


class OutsideQLRegion(NumericalError):
    pass


# --------------------------------------------------------------------------- transport


@dataclass(frozen=True)
class TransportState:
    """Van Vleck root U and Q = sigma^a_b - delta^a_b at the far endpoint."""

    U: float
    Q: np.ndarray
    lam: float
    r: float
    sol: object = field(default=None, repr=False, compare=False)

    def Q_at(self, lam: float) -> np.ndarray:
        return self.sol(lam)[4:20].reshape(4, 4)

    def U_at(self, lam: float) -> float:
        return float(np.exp(self.sol(lam)[20]))

    def r_at(self, lam: float) -> float:
        return float(self.sol(lam)[1])


def _transport_rhs(M: float, E: float, L: float):
    def rhs(lam, y):
        t, r, pr, phi = y[:4]
        Q = y[4:20].reshape(4, 4)
        f = 1 - 2 * M / r
        u = np.array([E / f, pr, 0.0, L / (r * r)])
        G = christoffel(M, r)
        Riem = riemann_up(M, r)
        A = np.einsum("abd,d->ab", G, u)
        K = np.einsum("agbd,g,d->ab", Riem, u, u)
        dQ = Q @ A - A @ Q - (Q @ Q + Q) / lam - lam * K
        # radial geodesic equation in second-order form (no turning-point issue)
        rdd = -M * f / r**2 * u[0] ** 2 + M / (r * r * f) * pr**2 + r * f * u[3] ** 2
        dlogU = -0.5 * np.trace(Q) / lam
        return np.concatenate(([u[0], pr, rdd, u[3]], dQ.ravel(), [dlogU]))

    return rhs


def transport_along(bh: BlackHole, r0: float, u0, lam_end: float, eps: float = 1e-6,
                    spec: OdeSpec | None = None) -> TransportState:
    """Integrate the U and Q transport equations along the equatorial geodesic.

    ``u0`` is the contravariant tangent (t', r', 0, phi') at the base point,
    which sits at lam = 0.  Integration starts at lam_eps = eps*lam_end with the
    leading Taylor data Q = -(lam^2/3) R^a_{c b d} u^c u^d and U = 1.
    """
    M = bh.M
    u0 = np.asarray(u0, dtype=float)
    f0 = 1 - 2 * M / r0
    E = f0 * u0[0]
    L = r0 * r0 * u0[3]
    lam0 = eps * lam_end
    K0 = np.einsum("agbd,g,d->ab", riemann_up(M, r0), u0, u0)
    Q0 = -(lam0**2 / 3.0) * K0
    # advance the geodesic to lam0 at second order
    G0 = christoffel(M, r0)
    acc = -np.einsum("abc,b,c->a", G0, u0, u0)
    x0 = np.array([0.0, r0, 0.0, 0.0]) + lam0 * u0 + 0.5 * lam0**2 * acc
    pr0 = u0[1] + lam0 * acc[1]
    y0 = np.concatenate(([x0[0], x0[1], pr0, x0[3]], Q0.ravel(), [0.0]))
    spec = spec or OdeSpec(rtol=1e-11, atol=1e-14, initial_step=lam0 * 0.1)

    def caustic(lam, y):
        return np.linalg.det(np.eye(4) + y[4:20].reshape(4, 4))

    caustic.terminal = True
    sol = ode_solve(_transport_rhs(M, E, L), y0, (lam0, lam_end), spec, events=[caustic])
    if sol.t_events and len(sol.t_events[0]):
        raise CausticError(f"caustic: det(1+Q) vanished at lam={sol.t_events[0][0]:.6g}")
    y = sol.y[:, -1]
    return TransportState(U=float(np.exp(y[20])), Q=y[4:20].reshape(4, 4), lam=lam_end,
                          r=float(y[1]), sol=sol.sol)


def transport_solve(bh: BlackHole, ray: NullRay, eps: float = 1e-6) -> TransportState:
    """Van Vleck root and sigma^a_b at the receiver end of a null ray."""
    return transport_along(bh, float(ray.r[0]), ray.tangent(0.0), ray.dlam, eps)


def radial_q_analytic(bh: BlackHole, r: float, rp: float, ingoing: bool) -> np.ndarray:
    """Closed-form Q^a_b along a radial null ray from base r' to field point r.

    ``ingoing`` selects the sign eps = +1 (ingoing) or -1 (outgoing).
    """
    M = bh.M
    f = 1 - 2 * M / r
    if abs(r - rp) < 1e-6 * rp:
        # series of (3r-r')/r^2 - 2 ln(r/r')/(r-r') about r = r'
        d = r - rp
        core = (d**2 / (3 * rp**3)) - (d**3 / (2 * rp**4))
    else:
        core = (3 * r - rp) / r**2 - 2 * math.log(r / rp) / (r - rp)
    qtt = M / f * core
    eps = 1.0 if ingoing else -1.0
    Q = np.zeros((4, 4))
    Q[0, 0] = qtt
    Q[1, 1] = -qtt
    Q[0, 1] = eps * qtt / f
    Q[1, 0] = -f * f * Q[0, 1]
    return Q


def direct_contraction(bh: BlackHole, ray: NullRay, u_sender) -> float:
    """|dlam * t_a u_A^a| at the sender, with t the ray tangent (E = 1 scaling)."""
    r0 = float(ray.r[0])
    f0 = 1 - 2 * bh.M / r0
    t0 = ray.tangent(0.0)
    g = np.array([-f0, 1 / f0, r0 * r0, r0 * r0])
    return abs(ray.dlam * float(np.dot(g * t0, u_sender)))


# --------------------------------------------------------------------------- tail series


@dataclass(frozen=True)
class TailSeries:
    """Hadamard tail V(x, x') = sum v_ijk (t-t')^{2i} (1-cos gamma)^j (r-r')^k.

    ``coeffs[i, j, k]`` holds v_ijk for the base radius ``r`` (x' at r); only
    entries with i + j + k <= order are retained.
    """

    M: float
    r: float
    order: int
    coeffs: np.ndarray = field(repr=False)
    source: str = "recursion"

    def __post_init__(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise NumericalError("non-finite tail coefficient")

    def terms(self, dt, w, y) -> np.ndarray:
        """Partial contributions grouped by total order i + j + k."""
        n = self.order
        T = np.asarray(dt, dtype=float) ** 2
        out = np.zeros((n + 1,) + np.shape(T))
        Tp = [T**i for i in range(n + 1)]
        wp = [np.asarray(w, dtype=float) ** j for j in range(n + 1)]
        yp = [np.asarray(y, dtype=float) ** k for k in range(n + 1)]
        for i, j, k in zip(*np.nonzero(self.coeffs)):
            out[i + j + k] = out[i + j + k] + self.coeffs[i, j, k] * Tp[i] * wp[j] * yp[k]
        return out

    def value(self, dt, gamma=0.0, r_field=None):
        """V at coordinate separation dt, angle gamma, field radius r_field."""
        r_field = self.r if r_field is None else r_field
        w = 1.0 - np.cos(gamma)
        return self.terms(dt, w, np.asarray(r_field) - self.r).sum(axis=0)

    def last_term_ratio(self, dt, gamma=0.0, r_field=None):
        """Largest of the two highest order groups relative to the summed group magnitudes.

        Normalizing by sum |group| rather than |V| keeps the measure finite where V
        changes sign.
        """
        r_field = self.r if r_field is None else r_field
        parts = self.terms(dt, 1.0 - np.cos(gamma), np.asarray(r_field) - self.r)
        total = np.abs(parts).sum(axis=0)
        tail = np.abs(parts[-2:]).max(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(total != 0, tail / np.abs(total), np.where(tail == 0, 0.0, np.inf))

    def to_csv(self, path) -> None:
        rows = [f"# schwarzschild-tail-v1 M=1 r={self.r / self.M:.17g}"]
        scale = self.M
        for i, j, k in zip(*np.nonzero(self.coeffs)):
            # v_ijk carries length^-(2 + 2i + k); (1 - cos gamma) is dimensionless
            val = self.coeffs[i, j, k] * scale ** (2 + 2 * i + k)
            rows.append(f"{i},{j},{k},{val:.17e}")
        Path(path).write_text("\n".join(rows) + "\n")


def load_tail_csv(path, M: float = 1.0, order: int | None = None) -> TailSeries:
    """Read a coefficient file (header ``# schwarzschild-tail-v1 M=1 r=<value>``)."""
    lines = Path(path).read_text().splitlines()
    head = lines[0].strip()
    if not head.startswith("# schwarzschild-tail-v1"):
        raise ValueError("not a schwarzschild-tail-v1 file")
    fields = dict(tok.split("=") for tok in head.split()[2:])
    if float(fields.get("M", "1")) != 1.0:
        raise ValueError("coefficient files must be normalized to M=1")
    r = float(fields["r"]) * M
    entries = []
    for ln in lines[1:]:
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        i, j, k, v = ln.split(",")
        entries.append((int(i), int(j), int(k), float(v)))
    n = max(i + j + k for i, j, k, _ in entries) if entries else 0
    if order is not None:
        n = order
    c = np.zeros((n + 1, n + 1, n + 1))
    for i, j, k, v in entries:
        if i + j + k <= n:
            c[i, j, k] = v / M ** (2 + 2 * i + k)
    return TailSeries(M=M, r=r, order=n, coeffs=c, source=str(path))


def tail_coefficients(bh: BlackHole, r: float, order: int = MAX_NATIVE_ORDER,
                      max_order: int = MAX_NATIVE_ORDER) -> TailSeries:
    """Tail coefficients v_ijk at base radius r by the native power-series recursion."""
    bh.check_exterior(r)
    if order > max_order:
        raise ValueError(f"order {order} exceeds the native recursion depth {max_order}; "
                         "import higher orders from a schwarzschild-tail-v1 coefficient file")
    coeffs = ps.tail_coefficient_array(bh.M, r, order)
    return TailSeries(M=bh.M, r=r, order=order, coeffs=coeffs)


# --------------------------------------------------------------------------- QL green


@dataclass(frozen=True)
class QLGreen:
    """Quasi-local Green function data between a base and a field point."""

    sigma_class: str
    tail: float
    direct: dict | None = None


def world_function_sign(bh: BlackHole, dt: float, r: float, rp: float, gamma: float,
                        ray: NullRay | None = None) -> str:
    """Classify the separation by comparing dt with the direct null flight time."""
    if ray is None:
        if gamma == 0 and r == rp:
            t_null = 0.0
        else:
            t_null = connecting_ray(bh, rp, r, gamma).dt
    else:
        t_null = ray.dt
    adt = abs(dt)
    tol = 1e-12 * max(1.0, t_null)
    if abs(adt - t_null) <= tol:
        return "null"
    return "timelike" if adt > t_null else "spacelike"


def ql_green(bh: BlackHole, dt: float, r: float, gamma: float, tail: TailSeries,
             validity: float = 1e-3, ray: NullRay | None = None) -> QLGreen:
    """Hadamard data between x' = (0, tail.r) and x = (dt, r, gamma).

    The direct part is returned symbolically (U, dlam, tangent), never as a
    numeric delta; the tail is -V theta(-sigma).
    """
    rp = tail.r
    cls = world_function_sign(bh, dt, r, rp, gamma, ray)
    if cls == "spacelike" or dt < 0:
        return QLGreen(sigma_class=cls, tail=0.0)
    ratio = float(tail.last_term_ratio(dt, gamma, r))
    if ratio > validity:
        raise OutsideQLRegion(f"outside QL region: last-order ratio {ratio:.3g} > {validity}")
    V = float(tail.value(dt, gamma, r))
    direct = None
    if cls == "null":
        ray = ray or connecting_ray(bh, rp, r, gamma)
        st = transport_solve(bh, ray) if ray.L else None
        direct = {"U": 1.0 if st is None else st.U, "dlam": ray.dlam, "ray": ray}
    return QLGreen(sigma_class=cls, tail=-V, direct=direct)
