"""Distant-past Green function from the l-mode characteristic initial-data problem.

Each multipole g_l(u, v) solves ``g_uv + Q(r) g = 0`` for u > u', v > v' with
``g = -1/2`` on both characteristics through the base point.  Nodes sit at
``u = u' + 2h i``, ``v = v' + 2h j``; the areal radius depends only on the
diagonal index ``k = j - i`` through ``r_* = r'_* + h k``.

Each cell is advanced with the integrated form of the equation over the
diamond S-E-N-W, with the potential integral evaluated through O(h^4) terms
using the transverse derivatives carried along both characteristic families.
The transverse derivatives at N follow from two-point Hermite quadrature of
``d(g_v)/du = -Q g`` and ``d(g_u)/dv = -Q g``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import interpolate, ndimage, special

from .geometry import BlackHole, GeometryError, tortoise
from .numkit import NumericalError, legendre_table

MAGIC = b"GLCID1\0\0"


def potential(bh: BlackHole, ell: int, r):
    """Q(r) = (f/4)(l(l+1)/r^2 + 2M/r^3)."""
    r = np.asarray(r, dtype=float)
    out = 0.25 * bh.f(r) * (ell * (ell + 1) / r**2 + 2 * bh.M / r**3)
    return out if out.ndim else float(out)


SMOOTHINGS = ("gaussian", "heat", "heat-rx", "none")


@dataclass(frozen=True)
class ModeSumConfig:
    """Truncation and smoothing of the multipole sum.

    ``gaussian`` weights by exp(-l^2/(2 l_cut^2)); ``heat`` by
    exp(-l(l+1)/(2 l_cut^2)), a heat-kernel smoothing on the sphere whose action
    on the direct delta decays faster away from the light cone.

    The Gaussian factor is not even in l + 1/2, so its smeared direct delta
    leaves a tail decaying only like (angle)^-3; near the direct ray it can
    exceed the physical tail by orders of magnitude.  The heat factor is
    exp(t Laplacian) with t = 1/(2 l_cut^2), biasing smooth parts by O(t).
    ``heat-rx`` removes that bias by Richardson extrapolation in t from the
    cuts 0.75 l_cut and l_cut, folded into one weight vector; its default cut
    l_max/7.5 keeps the truncation tail negligible.
    """

    ell_max: int = 100
    ell_cut: float | None = None
    smoothing: str = "gaussian"

    def __post_init__(self):
        if self.ell_max < 1:
            raise ValueError("ell_max must be >= 1")
        if self.ell_cut is not None and not self.ell_cut > 0:
            raise ValueError("ell_cut must be positive")
        if self.smoothing not in SMOOTHINGS:
            raise ValueError(f"smoothing must be one of {', '.join(SMOOTHINGS)}")

    @property
    def cut(self) -> float:
        if self.ell_cut is not None:
            return float(self.ell_cut)
        return self.ell_max / (7.5 if self.smoothing == "heat-rx" else 5.0)

    def weights(self, cos_gamma: float) -> np.ndarray:
        """(2l+1) P_l(cos gamma) times the smoothing factor, l = 0..ell_max."""
        ells = np.arange(self.ell_max + 1)
        w = (2 * ells + 1) * legendre_table(self.ell_max, cos_gamma)
        if self.smoothing == "gaussian":
            w = w * np.exp(-(ells**2) / (2 * self.cut**2))
        elif self.smoothing == "heat":
            w = w * np.exp(-(ells * (ells + 1.0)) / (2 * self.cut**2))
        elif self.smoothing == "heat-rx":
            lam = ells * (ells + 1.0)
            t1, t2 = 1 / (2 * (0.75 * self.cut) ** 2), 1 / (2 * self.cut**2)
            w = w * (t1 * np.exp(-lam * t2) - t2 * np.exp(-lam * t1)) / (t1 - t2)
        return w


# --------------------------------------------------------------------------- radius tables


def _diagonal_radii(bh: BlackHole, rs_base: float, h: float, kmin: int, kmax: int):
    """r and f on every diagonal, without the horizon guard of inverse_tortoise."""
    k = np.arange(kmin, kmax + 1)
    rs = rs_base + h * k
    M = bh.M
    if M == 0:
        if np.any(rs <= 0):
            raise GeometryError("flat-space grid reaches r <= 0; shrink the extents")
        return rs.copy(), np.ones_like(rs)
    x = rs / (2 * M) - 1.0 - math.log(2.0)
    w = np.empty_like(x)
    big = x > 600
    w[big] = x[big] - np.log(x[big])
    small = ~big
    w[small] = np.real(special.lambertw(np.exp(x[small])))
    pos = w > 0
    # Newton on w e^w = e^x in log form: w + ln w = x
    for _ in range(3):
        wp = w[pos]
        w[pos] = wp - (wp + np.log(wp) - x[pos]) / (1 + 1 / wp)
    if np.any(~np.isfinite(w)):
        raise NumericalError("tortoise inversion failed")
    r = 2 * M * (1 + w)
    f = w / (1 + w)
    return r, f


def _diagonal_tables(bh: BlackHole, ell: int, r: np.ndarray, f: np.ndarray):
    """Q, f dQ/dr and Q_uu + Q_vv = (f/2) d/dr (f dQ/dr) per diagonal."""
    M = bh.M
    L = ell * (ell + 1)
    q0 = L / r**2 + 2 * M / r**3  # Q = f q0 / 4
    dq0 = -2 * L / r**3 - 6 * M / r**4
    ddq0 = 6 * L / r**4 + 24 * M / r**5
    fp = 2 * M / r**2
    fpp = -4 * M / r**3
    Q = 0.25 * f * q0
    dQ = 0.25 * (fp * q0 + f * dq0)
    ddQ = 0.25 * (fpp * q0 + 2 * fp * dq0 + f * ddq0)
    fQp = f * dQ
    QQ = 0.5 * f * (fp * dQ + f * ddQ)
    return Q, fQp, QQ


def boundary_derivative(bh: BlackHole, ell: int, r, rp: float):
    """(1/4)[(l(l+1)/r' + M/r'^2) - (l(l+1)/r + M/r^2)]: g_u on u = u', -g_v on v = v'."""
    L = ell * (ell + 1)
    r = np.asarray(r, dtype=float)
    return 0.25 * ((L / rp + bh.M / rp**2) - (L / r + bh.M / r**2))


# --------------------------------------------------------------------------- kernel


@numba.njit(cache=True, nogil=True)
def _march(h, n_u, n_v, koff, Q, fQp, QQ, bu, bv, weight, full, band, klo, khi):
    """March the grid row by row (fixed u index i), accumulating weight*g.

    ``koff`` maps diagonal k to table index k + koff.  ``bu[j]`` is g_u on the
    i = 0 row, ``bv[i]`` is g_v on the j = 0 column.  ``full`` (n_u x n_v) and
    ``band`` (khi-klo+1 x n_u) receive weight*g where their shapes are nonzero.
    Returns False if a non-finite value appears.
    """
    g_prev = np.empty(n_v)
    gu_prev = np.empty(n_v)
    gv_prev = np.empty(n_v)
    g_cur = np.empty(n_v)
    gu_cur = np.empty(n_v)
    gv_cur = np.empty(n_v)
    keep_full = full.shape[0] > 0
    keep_band = band.shape[0] > 0
    h2 = h * h
    h4 = h2 * h2
    for j in range(n_v):
        g_prev[j] = -0.5
        gu_prev[j] = bu[j]
        gv_prev[j] = 0.0
        if keep_full:
            full[0, j] += -0.5 * weight
        if keep_band and klo <= j <= khi:
            band[j - klo, 0] += -0.5 * weight
    for i in range(1, n_u):
        g_cur[0] = -0.5
        gu_cur[0] = 0.0
        gv_cur[0] = bv[i]
        if keep_full:
            full[i, 0] += -0.5 * weight
        if keep_band and klo <= -i <= khi:
            band[-i - klo, i] += -0.5 * weight
        for j in range(1, n_v):
            k = j - i + koff
            q = Q[k]
            p = fQp[k]
            gE = g_prev[j]
            gW = g_cur[j - 1]
            gS = g_prev[j - 1]
            DE = gv_prev[j] - gu_prev[j]
            DW = gv_cur[j - 1] - gu_cur[j - 1]
            gO = 0.25 * (2.0 * gE + 2.0 * gW - h * (DE - DW))
            lap = (DE - DW) / (2.0 * h) - 2.0 * q * gO
            integral = 4.0 * h2 * q * gO + (2.0 / 3.0) * h4 * (
                QQ[k] * gO + p * 0.5 * (DE + DW) + q * lap)
            gN = gE + gW - gS - integral
            # transverse derivatives at N by Hermite quadrature along the two edges
            qE = Q[k + 1]
            qW = Q[k - 1]
            FE = qE * gE
            FuE = -0.5 * fQp[k + 1] * gE + qE * gu_prev[j]
            FW = qW * gW
            FvW = 0.5 * fQp[k - 1] * gW + qW * gv_cur[j - 1]
            c1 = gv_prev[j] - h * (FE + q * gN) - (h2 / 3.0) * (FuE + 0.5 * p * gN)
            c2 = gu_cur[j - 1] - h * (FW + q * gN) - (h2 / 3.0) * (FvW - 0.5 * p * gN)
            kk = h2 * q / 3.0
            a = (c2 + kk * c1) / (1.0 - kk * kk)
            b = c1 + kk * a
            g_cur[j] = gN
            gu_cur[j] = a
            gv_cur[j] = b
            if keep_full:
                full[i, j] += weight * gN
            if keep_band:
                kd = j - i
                if klo <= kd <= khi:
                    band[kd - klo, i] += weight * gN
        for j in range(n_v):
            if not math.isfinite(g_cur[j]):
                return False
            g_prev[j] = g_cur[j]
            gu_prev[j] = gu_cur[j]
            gv_prev[j] = gv_cur[j]
    return True


# --------------------------------------------------------------------------- grids


@dataclass(frozen=True)
class ModeGrid:
    """Values of g_l on the characteristic grid based at (u', v').

    ``values`` is the full (n_u, n_v) array when kept; ``band`` holds diagonals
    ``klo..khi`` as ``band[k - klo, i]`` (node i on diagonal k).
    """

    ell: int
    M: float
    h: float
    u0: float
    v0: float
    n_u: int
    n_v: int
    values: np.ndarray | None = field(default=None, repr=False)
    band: np.ndarray | None = field(default=None, repr=False)
    klo: int = 0
    khi: int = -1

    @property
    def rs_base(self) -> float:
        return 0.5 * (self.v0 - self.u0)

    def at(self, i: int, j: int) -> float:
        if not (0 <= i < self.n_u and 0 <= j < self.n_v):
            raise IndexError("node outside grid extents")
        if self.values is not None:
            return float(self.values[i, j])
        k = j - i
        if self.band is not None and self.klo <= k <= self.khi:
            return float(self.band[k - self.klo, i])
        raise IndexError("node not retained")

    def diagonal(self, k: int):
        """(dt, g) along diagonal k, dt = h (2 i + k)."""
        i0 = max(0, -k)
        i1 = min(self.n_u - 1, self.n_v - 1 - k)
        if i1 < i0:
            return np.empty(0), np.empty(0)
        i = np.arange(i0, i1 + 1)
        if self.values is not None:
            g = self.values[i, i + k]
        elif self.band is not None and self.klo <= k <= self.khi:
            g = self.band[k - self.klo, i]
        else:
            raise IndexError("diagonal not retained")
        return self.h * (2 * i + k), np.array(g)

    # binary cache format
    def to_file(self, path) -> None:
        if self.values is None:
            raise ValueError("only full grids can be written in GLCID1 format")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IddddII", self.ell, self.M, self.h, self.u0, self.v0,
                                 self.n_u, self.n_v))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_file(cls, path) -> "ModeGrid":
        data = Path(path).read_bytes()
        if data[:8] != MAGIC:
            raise ValueError("bad mode-grid magic")
        head = struct.calcsize("<IddddII")
        ell, M, h, u0, v0, n_u, n_v = struct.unpack("<IddddII", data[8:8 + head])
        body = data[8 + head:]
        if len(body) != 8 * n_u * n_v:
            raise ValueError("truncated mode-grid file")
        vals = np.frombuffer(body, dtype="<f8").reshape(n_u, n_v).copy()
        return cls(ell=ell, M=M, h=h, u0=u0, v0=v0, n_u=n_u, n_v=n_v, values=vals)

    def to_csv(self, path) -> None:
        if self.values is None:
            raise ValueError("csv export needs the full grid")
        i, j = np.meshgrid(np.arange(self.n_u), np.arange(self.n_v), indexing="ij")
        rows = np.column_stack([self.u0 + 2 * self.h * i.ravel(),
                                self.v0 + 2 * self.h * j.ravel(), self.values.ravel()])
        np.savetxt(path, rows, delimiter=",", header="u,v,g", comments="", fmt="%.17g")


def _tables(bh, ell, rp, h, n_u, n_v):
    rs_base = tortoise(bh, rp)
    kmin, kmax = -(n_u - 1) - 1, (n_v - 1) + 1
    r, f = _diagonal_radii(bh, rs_base, h, kmin, kmax)
    Q, fQp, QQ = _diagonal_tables(bh, ell, r, f)
    koff = -kmin
    bu = boundary_derivative(bh, ell, r[koff:koff + n_v], rp)
    bv = -boundary_derivative(bh, ell, r[koff - np.arange(n_u)], rp)
    return koff, Q, fQp, QQ, bu, bv


def _run(bh, ell, rp, h, n_u, n_v, weight, full, band, klo, khi):
    koff, Q, fQp, QQ, bu, bv = _tables(bh, ell, rp, h, n_u, n_v)
    ok = _march(h, n_u, n_v, koff, Q, fQp, QQ, bu, bv, weight, full, band, klo, khi)
    if not ok:
        raise NumericalError(f"non-finite g_l encountered (l={ell})")


def _check_extents(h, n_u, n_v):
    if not h > 0:
        raise ValueError("h must be positive")
    if n_u < 2 or n_v < 2:
        raise ValueError("grid extents must be at least 2 nodes")


def cid_solve(bh: BlackHole, ell: int, rp: float, n_u: int, n_v: int, h: float = 0.01,
              t0: float = 0.0, keep: str = "full", klo: int = 0, khi: int = -1) -> ModeGrid:
    """Solve the l-mode characteristic problem based at (t0, rp).

    ``keep='full'`` retains every node; ``keep='band'`` retains diagonals klo..khi.
    """
    if bh.M > 0:
        bh.check_exterior(rp)
    _check_extents(h, n_u, n_v)
    full = np.zeros((n_u, n_v)) if keep == "full" else np.zeros((0, 0))
    band = np.zeros((khi - klo + 1, n_u)) if keep == "band" else np.zeros((0, 0))
    _run(bh, ell, rp, h, n_u, n_v, 1.0, full, band, klo, khi)
    rs = tortoise(bh, rp)
    return ModeGrid(ell=ell, M=bh.M, h=h, u0=t0 - rs, v0=t0 + rs, n_u=n_u, n_v=n_v,
                    values=full if keep == "full" else None,
                    band=band if keep == "band" else None, klo=klo, khi=khi)


def flat_mode(ell: int, r, rp: float, dt):
    """Flat-space l-mode -P_l((r^2 + r'^2 - dt^2)/(2 r r'))/2 for |r-r'| <= dt <= r+r'."""
    r = np.asarray(r, dtype=float)
    z = (r * r + rp * rp - np.asarray(dt, dtype=float) ** 2) / (2 * r * rp)
    return -0.5 * special.eval_legendre(ell, np.clip(z, -1.0, 1.0))


# --------------------------------------------------------------------------- mode sums


def mode_sum(grids, r: float, rp: float, gamma: float, i: int, j: int,
             cfg: ModeSumConfig = ModeSumConfig()) -> float:
    """Smoothed multipole sum at grid node (i, j); zero outside the causal quadrant."""
    if i < 0 or j < 0:
        return 0.0
    w = cfg.weights(math.cos(gamma))
    by_ell = {g.ell: g for g in grids}
    missing = [l for l in range(cfg.ell_max + 1) if l not in by_ell]
    if missing:
        raise ValueError(f"missing mode grids for l = {missing[:5]}...")
    total = sum(w[l] * by_ell[l].at(i, j) for l in range(cfg.ell_max + 1))
    return -total / (r * rp)


def summed_grid(bh: BlackHole, rp: float, n_u: int, n_v: int, h: float, weights,
                keep: str = "band", klo: int = 0, khi: int = -1, threads: int | None = None):
    """sum_l weights[l] * g_l on the grid, parallel over l with per-worker buffers."""
    _check_extents(h, n_u, n_v)
    ells = [l for l, w in enumerate(weights) if w != 0.0]
    threads = max(1, min(threads or os.cpu_count() or 1, len(ells)))
    shape_full = (n_u, n_v) if keep == "full" else (0, 0)
    shape_band = (khi - klo + 1, n_u) if keep == "band" else (0, 0)

    def work(chunk):
        full = np.zeros(shape_full)
        band = np.zeros(shape_band)
        for l in chunk:
            _run(bh, l, rp, h, n_u, n_v, float(weights[l]), full, band, klo, khi)
        return full, band

    chunks = [ells[t::threads] for t in range(threads)]
    if threads == 1:
        parts = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, chunks))
    full = sum(p[0] for p in parts)
    band = sum(p[1] for p in parts)
    return full if keep == "full" else band


def grid_step(h_target: float, drs: float) -> tuple[float, int]:
    """Largest h <= h_target with drs/h integral; returns (h, k)."""
    if drs == 0:
        return h_target, 0
    n = max(1, math.ceil(abs(drs) / h_target - 1e-12))
    h = abs(drs) / n
    return h, int(math.copysign(n, drs))


@dataclass(frozen=True)
class DPGreenTable:
    """Smoothed mode-sum Green function at fixed (r, r', gamma) sampled in dt.

    ``crossings`` lists null-crossing abscissae so that quadrature can split there.
    """

    r: float
    rp: float
    gamma: float
    dt: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    t_direct: float = 0.0
    crossings: tuple = ()
    _interp: object = field(default=None, repr=False, compare=False)

    @property
    def dt_max(self) -> float:
        return float(self.dt[-1])

    def __call__(self, dt):
        dt = np.asarray(dt, dtype=float)
        if np.any(dt > self.dt[-1] * (1 + 1e-12)):
            raise ValueError(f"dt beyond the solved DP table (max {self.dt[-1]:.6g})")
        out = np.where(dt < self.dt[0], 0.0, self._interp(np.clip(dt, self.dt[0], self.dt[-1])))
        return out if out.ndim else float(out)


def dp_table(bh: BlackHole, r: float, rp: float, gamma: float, dt_max: float,
             cfg: ModeSumConfig = ModeSumConfig(), h: float = 0.01, crossings=(),
             threads: int | None = None, cache=None) -> DPGreenTable:
    """Tabulate the smoothed mode sum on the diagonal through radius r."""
    drs = tortoise(bh, r) - tortoise(bh, rp)
    h, k = grid_step(h, drs)
    t_direct = abs(drs)
    if dt_max <= t_direct:
        raise ValueError("dt_max must exceed the radial flight time")
    # the diagonal k spans i from max(0, -k) with dt = h (2 i + k)
    i_max = int(math.ceil((dt_max / h - k) / 2)) + 2
    n_u = i_max + 1
    n_v = max(2, i_max + k + 1)
    if cache is not None:
        band = cache.band(bh, rp, n_u, n_v, h, cfg, math.cos(gamma), k, threads)
    else:
        band = summed_grid(bh, rp, n_u, n_v, h, cfg.weights(math.cos(gamma)), keep="band",
                           klo=k, khi=k, threads=threads)
    i = np.arange(max(0, -k), min(n_u - 1, n_v - 1 - k) + 1)
    dts = h * (2 * i + k)
    G = -band[0, i] / (r * rp)
    interp = interpolate.PchipInterpolator(dts, G, extrapolate=False)
    return DPGreenTable(r=r, rp=rp, gamma=gamma, dt=dts, G=G, t_direct=t_direct,
                        crossings=tuple(crossings), _interp=interp)


def mode_bands(bh: BlackHole, rp: float, n_u: int, n_v: int, h: float, ell_max: int, k: int,
               threads: int | None = None) -> np.ndarray:
    """Unweighted diagonal k of every g_l, shape (ell_max + 1, n_u)."""
    _check_extents(h, n_u, n_v)
    ells = list(range(ell_max + 1))
    threads = max(1, min(threads or os.cpu_count() or 1, len(ells)))
    out = np.zeros((ell_max + 1, n_u))

    def work(chunk):
        for l in chunk:
            row = np.zeros((1, n_u))
            _run(bh, l, rp, h, n_u, n_v, 1.0, np.zeros((0, 0)), row, k, k)
            out[l] = row[0]

    chunks = [ells[t::threads] for t in range(threads)]
    if threads == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, chunks))
    return out


def dp_tables(bh: BlackHole, r: float, rp: float, gammas, dt_max: float,
              cfg: ModeSumConfig = ModeSumConfig(), h: float = 0.01, threads: int | None = None,
              cache=None) -> list[DPGreenTable]:
    """Tables for several angles at one radius pair from a single sweep over l."""
    drs = tortoise(bh, r) - tortoise(bh, rp)
    h, k = grid_step(h, drs)
    t_direct = abs(drs)
    if dt_max <= t_direct:
        raise ValueError("dt_max must exceed the radial flight time")
    i_max = int(math.ceil((dt_max / h - k) / 2)) + 2
    n_u = i_max + 1
    n_v = max(2, i_max + k + 1)
    if cache is not None:
        bands = cache.mode_bands(bh, rp, n_u, n_v, h, cfg.ell_max, k, threads)
    else:
        bands = mode_bands(bh, rp, n_u, n_v, h, cfg.ell_max, k, threads)
    i = np.arange(max(0, -k), min(n_u - 1, n_v - 1 - k) + 1)
    dts = h * (2 * i + k)
    out = []
    for gamma in gammas:
        G = -(cfg.weights(math.cos(gamma)) @ bands[:, i]) / (r * rp)
        interp = interpolate.PchipInterpolator(dts, G, extrapolate=False)
        out.append(DPGreenTable(r=r, rp=rp, gamma=gamma, dt=dts, G=G, t_direct=t_direct,
                                _interp=interp))
    return out


@dataclass
class FieldGreen:
    """Smoothed mode sum on the full (u, v) grid of one base radius, gamma = 0.

    Evaluates G(dt, r) for field radii inside the grid by cubic-spline
    interpolation in the null coordinates.
    """

    bh: BlackHole
    rp: float
    h: float
    grid: np.ndarray = field(repr=False)
    _coef: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self._coef = ndimage.spline_filter(self.grid, order=3)

    @property
    def dt_max(self) -> float:
        n_u, n_v = self.grid.shape
        return self.h * (n_u + n_v - 2) / 2

    def inside(self, dt, r):
        drs = tortoise(self.bh, np.asarray(r, dtype=float)) - tortoise(self.bh, self.rp)
        i = (np.asarray(dt) - drs) / (2 * self.h)
        j = (np.asarray(dt) + drs) / (2 * self.h)
        n_u, n_v = self.grid.shape
        return (i >= 0) & (j >= 0) & (i <= n_u - 1) & (j <= n_v - 1)

    def __call__(self, dt, r):
        dt = np.asarray(dt, dtype=float)
        r = np.broadcast_to(np.asarray(r, dtype=float), dt.shape)
        drs = tortoise(self.bh, r) - tortoise(self.bh, self.rp)
        i = (dt - drs) / (2 * self.h)
        j = (dt + drs) / (2 * self.h)
        vals = ndimage.map_coordinates(self._coef, [i.ravel(), j.ravel()], order=3,
                                       prefilter=False, mode="nearest").reshape(dt.shape)
        return -vals / (r * self.rp)


def field_green(bh: BlackHole, rp: float, r_min: float, dt_max: float,
                cfg: ModeSumConfig = ModeSumConfig(), h: float = 0.01,
                threads: int | None = None, cache=None) -> FieldGreen:
    """Full-grid mode sum reaching field radii down to r_min and coordinate times to dt_max."""
    span = abs(tortoise(bh, r_min) - tortoise(bh, rp))
    n_u = int(math.ceil((dt_max + span) / (2 * h))) + 3
    n_v = int(math.ceil((dt_max + span) / (2 * h))) + 3
    if cache is not None:
        full = cache.summed(bh, rp, n_u, n_v, h, cfg, 1.0, threads)
    else:
        full = summed_grid(bh, rp, n_u, n_v, h, cfg.weights(1.0), keep="full", threads=threads)
    return FieldGreen(bh, rp, h, full)


# --------------------------------------------------------------------------- cache


class ModeGridCache:
    """Content-addressed store of mode grids and summed bands with a JSON manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        self.solves = 0
        self.manifest = {}
        if self.manifest_path.exists():
            try:
                self.manifest = json.loads(self.manifest_path.read_text())
            except json.JSONDecodeError:
                warnings.warn("corrupted cache manifest; starting afresh")

    @staticmethod
    def key(**params) -> str:
        blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:32]

    def write_manifest(self):
        self.manifest_path.write_text(json.dumps(self.manifest, sort_keys=True, indent=1) + "\n")

    def grid(self, bh: BlackHole, ell: int, rp: float, n_u: int, n_v: int, h: float) -> ModeGrid:
        rs = tortoise(bh, rp)
        key = self.key(kind="grid", M=bh.M, ell=ell, u0=-rs, v0=rs, n_u=n_u, n_v=n_v, h=h)
        entry = self.manifest.get(key)
        if entry is not None:
            path = self.root / entry["file"]
            try:
                if hashlib.sha256(path.read_bytes()).hexdigest() != entry["sha256"]:
                    raise ValueError("hash mismatch")
                return ModeGrid.from_file(path)
            except (OSError, ValueError) as exc:
                warnings.warn(f"rebuilding corrupted mode grid {key}: {exc}")
        g = cid_solve(bh, ell, rp, n_u, n_v, h)
        self.solves += 1
        name = f"{key}.glcid"
        g.to_file(self.root / name)
        self.manifest[key] = {"file": name,
                              "sha256": hashlib.sha256((self.root / name).read_bytes()).hexdigest()}
        self.write_manifest()
        return g

    def mode_bands(self, bh, rp, n_u, n_v, h, ell_max, k, threads=None) -> np.ndarray:
        """Per-l diagonal k, cached as one little-endian float64 block."""
        key = self.key(kind="mode-bands", M=bh.M, rp=rp, n_u=n_u, n_v=n_v, h=h,
                       ell_max=ell_max, k=k)
        entry = self.manifest.get(key)
        if entry is not None:
            path = self.root / entry["file"]
            try:
                data = path.read_bytes()
                if hashlib.sha256(data).hexdigest() != entry["sha256"]:
                    raise ValueError("hash mismatch")
                return np.frombuffer(data, dtype="<f8").reshape(ell_max + 1, n_u).copy()
            except (OSError, ValueError) as exc:
                warnings.warn(f"rebuilding corrupted mode bands {key}: {exc}")
        bands = mode_bands(bh, rp, n_u, n_v, h, ell_max, k, threads)
        self.solves += ell_max + 1
        name = f"{key}.bands"
        data = np.ascontiguousarray(bands, dtype="<f8").tobytes()
        (self.root / name).write_bytes(data)
        self.manifest[key] = {"file": name, "sha256": hashlib.sha256(data).hexdigest()}
        self.write_manifest()
        return bands

    def summed(self, bh, rp, n_u, n_v, h, cfg: ModeSumConfig, cos_gamma, threads=None):
        """Full smoothed sum over the grid (raw, before the -1/(r r') factor)."""
        key = self.key(kind="summed", M=bh.M, rp=rp, n_u=n_u, n_v=n_v, h=h, ell_max=cfg.ell_max,
                       cut=cfg.cut, smoothing=cfg.smoothing, cos_gamma=cos_gamma)
        entry = self.manifest.get(key)
        if entry is not None:
            path = self.root / entry["file"]
            try:
                data = path.read_bytes()
                if hashlib.sha256(data).hexdigest() != entry["sha256"]:
                    raise ValueError("hash mismatch")
                return np.frombuffer(data, dtype="<f8").reshape(n_u, n_v).copy()
            except (OSError, ValueError) as exc:
                warnings.warn(f"rebuilding corrupted summed grid {key}: {exc}")
        full = summed_grid(bh, rp, n_u, n_v, h, cfg.weights(cos_gamma), keep="full",
                           threads=threads)
        self.solves += cfg.ell_max + 1
        name = f"{key}.summed"
        data = np.ascontiguousarray(full, dtype="<f8").tobytes()
        (self.root / name).write_bytes(data)
        self.manifest[key] = {"file": name, "sha256": hashlib.sha256(data).hexdigest()}
        self.write_manifest()
        return full

    def band(self, bh, rp, n_u, n_v, h, cfg: ModeSumConfig, cos_gamma, k, threads=None):
        """Summed diagonal k (raw, before the -1/(r r') factor)."""
        key = self.key(kind="band", M=bh.M, rp=rp, n_u=n_u, n_v=n_v, h=h, ell_max=cfg.ell_max,
                       cut=cfg.cut, smoothing=cfg.smoothing, cos_gamma=cos_gamma, k=k)
        entry = self.manifest.get(key)
        if entry is not None:
            path = self.root / entry["file"]
            try:
                data = path.read_bytes()
                if hashlib.sha256(data).hexdigest() != entry["sha256"]:
                    raise ValueError("hash mismatch")
                return np.frombuffer(data, dtype="<f8").reshape(1, n_u).copy()
            except (OSError, ValueError) as exc:
                warnings.warn(f"rebuilding corrupted band {key}: {exc}")
        band = summed_grid(bh, rp, n_u, n_v, h, cfg.weights(cos_gamma), keep="band",
                           klo=k, khi=k, threads=threads)
        self.solves += 1
        name = f"{key}.band"
        data = np.ascontiguousarray(band, dtype="<f8").tobytes()
        (self.root / name).write_bytes(data)
        self.manifest[key] = {"file": name, "sha256": hashlib.sha256(data).hexdigest()}
        self.write_manifest()
        return band
