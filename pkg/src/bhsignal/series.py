"""Truncated triple power series for the Hadamard bitensors on Schwarzschild.

Functions of the field point around a fixed base point x' = (t', r', axis) are
expanded in ``T = (t - t')^2``, ``w = 1 - cos(gamma)`` and ``y = r - r'``.  A
monomial T^i w^j y^k carries weight 2i + 2j + k (its order in the coordinate
separation); series are truncated at a maximal weight.

With P = r^2 (r - 2M), the relevant operators become polynomial in y:

* ``P g^{ab} X_a Y_b = -4 T r^3 X_T Y_T + r (r-2M)^2 X_y Y_y + (r-2M) w (2-w) X_w Y_w``
* ``P box X = -r^3 (2 X_T + 4 T X_TT) + r (r-2M)^2 X_yy + 2 (r-2M)(r-M) X_y
  + (r-2M) ((2 - 2w) X_w + w (2-w) X_ww)``

The world function solves ``g^{ab} s_a s_b = 2 s``, ``D = ln U`` solves
``s^a D_a = (4 - box s)/2`` and the tail ``V = sum_n V_n s^n`` follows from

* ``2 s^a V0_a + (box s - 2) V0 = -box U``
* ``2 s^a V(n+1)_a + (2n + box s) V(n+1) = -box V_n / (n + 1)``

Each equation is solved weight by weight: to leading order ``s^a d_a`` acts on
a weight-W monomial as multiplication by W.
"""

from __future__ import annotations

import numpy as np


class Series:
    """Dense coefficient array c[i, j, k] of T^i w^j y^k, weight <= W."""

    __slots__ = ("c", "W")

    def __init__(self, W: int, c: np.ndarray | None = None):
        self.W = W
        shape = (W // 2 + 1, W // 2 + 1, W + 1)
        if c is None:
            self.c = np.zeros(shape)
        else:
            self.c = np.zeros(shape)
            s = tuple(slice(0, min(a, b)) for a, b in zip(shape, c.shape))
            self.c[s] = c[s]
            self.c *= _mask(W)

    # construction helpers
    @classmethod
    def const(cls, W, value):
        s = cls(W)
        s.c[0, 0, 0] = value
        return s

    @classmethod
    def poly_y(cls, W, coeffs):
        s = cls(W)
        for k, a in enumerate(coeffs):
            if k <= W:
                s.c[0, 0, k] = a
        return s

    def copy(self):
        out = Series(self.W)
        out.c = self.c.copy()
        return out

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, Series):
            out.c += other.c
        else:
            out.c[0, 0, 0] += other
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self.copy()
        out.c = -out.c
        return out

    def __sub__(self, other):
        return self + (-other)

    def __rmul__(self, a: float):
        out = self.copy()
        out.c = a * out.c
        return out

    def __mul__(self, other):
        if not isinstance(other, Series):
            return self.__rmul__(other)
        return _mul(self, other)

    # calculus
    def dT(self):
        out = Series(self.W)
        n = self.c.shape[0]
        out.c[: n - 1] = self.c[1:] * np.arange(1, n)[:, None, None]
        return out

    def dw(self):
        out = Series(self.W)
        n = self.c.shape[1]
        out.c[:, : n - 1] = self.c[:, 1:] * np.arange(1, n)[None, :, None]
        return out

    def dy(self):
        out = Series(self.W)
        n = self.c.shape[2]
        out.c[:, :, : n - 1] = self.c[:, :, 1:] * np.arange(1, n)[None, None, :]
        return out

    def times_T(self):
        out = Series(self.W)
        out.c[1:] = self.c[:-1]
        out.c *= _mask(self.W)
        return out

    def times_w(self):
        out = Series(self.W)
        out.c[:, 1:] = self.c[:, :-1]
        out.c *= _mask(self.W)
        return out

    def weight_part(self, W: int) -> np.ndarray:
        return self.c * (_weights(self.W) == W)

    def evaluate(self, T, w, y):
        T, w, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (T, w, y)))
        out = np.zeros(T.shape)
        for i, j, k in zip(*np.nonzero(self.c)):
            out = out + self.c[i, j, k] * T**i * w**j * y**k
        return out


_MASKS: dict[int, np.ndarray] = {}
_WEIGHTS: dict[int, np.ndarray] = {}


def _weights(W):
    if W not in _WEIGHTS:
        i, j, k = np.meshgrid(np.arange(W // 2 + 1), np.arange(W // 2 + 1), np.arange(W + 1),
                              indexing="ij")
        _WEIGHTS[W] = 2 * i + 2 * j + k
    return _WEIGHTS[W]


def _mask(W):
    if W not in _MASKS:
        _MASKS[W] = (_weights(W) <= W).astype(float)
    return _MASKS[W]


def _mul(a: Series, b: Series) -> Series:
    W = min(a.W, b.W)
    out = Series(W)
    A = a.c[: W // 2 + 1, : W // 2 + 1, : W + 1]
    B = b.c[: W // 2 + 1, : W // 2 + 1, : W + 1]
    I, J, K = out.c.shape
    wts = _weights(W)
    for i, j, k in zip(*np.nonzero(A)):
        rem = W - (2 * i + 2 * j + k)
        if rem < 0:
            continue
        out.c[i:, j:, k:] += A[i, j, k] * B[: I - i, : J - j, : K - k]
    out.c *= wts <= W
    return out


def _exp(x: Series) -> Series:
    """exp of a series with vanishing constant term."""
    out = Series.const(x.W, 1.0)
    term = Series.const(x.W, 1.0)
    for n in range(1, x.W + 1):
        term = (1.0 / n) * (term * x)
        if not term.c.any():
            break
        out = out + term
    return out


class _Ops:
    """Polynomial coefficient series and differential operators at fixed base radius."""

    def __init__(self, M: float, rp: float, W: int):
        self.M, self.rp, self.W = M, rp, W
        r = Series.poly_y(W, [rp, 1.0])
        rm2 = Series.poly_y(W, [rp - 2 * M, 1.0])
        rm1 = Series.poly_y(W, [rp - M, 1.0])
        self.r3 = r * r * r
        self.P = r * r * rm2
        self.c_yy = r * rm2 * rm2
        self.c_y = 2.0 * (rm2 * rm1)
        self.rm2 = rm2
        w = Series(W)
        if W >= 2:
            w.c[0, 1, 0] = 1.0
        self.w_2mw = 2.0 * w - w * w  # w (2 - w)
        self.two_m_2w = Series.const(W, 2.0) - 2.0 * w
        self.P0 = rp * rp * (rp - 2 * M)

    def box(self, X: Series) -> Series:
        XT = X.dT()
        out = -1.0 * (self.r3 * (2.0 * XT + 4.0 * XT.dT().times_T()))
        out = out + self.c_yy * X.dy().dy() + self.c_y * X.dy()
        Xw = X.dw()
        out = out + self.rm2 * (self.two_m_2w * Xw + self.w_2mw * Xw.dw())
        return out

    def bilinear(self, X: Series, Y: Series) -> Series:
        out = -4.0 * (self.r3 * (X.dT() * Y.dT()).times_T())
        out = out + self.c_yy * (X.dy() * Y.dy())
        out = out + self.rm2 * (self.w_2mw * (X.dw() * Y.dw()))
        return out


def _solve_transport(ops: _Ops, grads, coef: float, C: Series, S: Series, W: int,
                     w_min: int = 0) -> Series:
    """Solve coef * (s^a X_a) P + C X = S weight by weight (leading part coef*W*P0 + C0).

    ``grads`` are the precomputed products for ``P s^a d_a``.
    """
    gT, gy, gw = grads
    X = Series(W)
    C0 = C.c[0, 0, 0]
    wts = _weights(W)

    def apply(X):
        trans = (gT * X.dT()).times_T() + gy * X.dy() + gw * X.dw()
        return coef * trans + C * X

    for weight in range(w_min, W + 1):
        resid = S.c - apply(X).c
        denom = coef * weight * ops.P0 + C0
        sel = wts == weight
        X.c[sel] = resid[sel] / denom
    return X


def world_function(ops: _Ops, W: int) -> Series:
    M, rp = ops.M, ops.rp
    s = Series(W)
    s.c[1, 0, 0] = -(rp - 2 * M) / (2 * rp)
    s.c[0, 1, 0] = rp * rp
    s.c[0, 0, 2] = rp / (2 * (rp - 2 * M))
    wts = _weights(W)
    for weight in range(3, W + 1):
        H = ops.bilinear(s, s) - 2.0 * (ops.P * s)
        sel = wts == weight
        s.c[sel] -= H.c[sel] / ((2 * weight - 2) * ops.P0)
    return s


def hadamard_series(M: float, rp: float, order: int):
    """World function, van Vleck root and tail V as series at base radius rp.

    V is complete through weight 2*order.
    """
    W = 2 * order + 2
    ops = _Ops(M, rp, W)
    s = world_function(ops, W)
    # P s^a X_a = (-4 T r^3 s_T) X_T + (r (r-2M)^2 s_y) X_y + ((r-2M) w(2-w) s_w) X_w
    gT = -4.0 * (ops.r3 * s.dT())
    gy = ops.c_yy * s.dy()
    gw = ops.rm2 * (ops.w_2mw * s.dw())
    grads = (gT, gy, gw)
    Pbox_s = ops.box(s)
    # s^a D_a = (4 - box s)/2  ->  P s^a D_a = 2P - P box s / 2
    D = _solve_transport(ops, grads, 1.0, Series(W), 2.0 * ops.P - 0.5 * Pbox_s, W, w_min=1)
    U = _exp(D)
    Wv = 2 * order
    opsv = _Ops(M, rp, Wv)
    gv = tuple(Series(Wv, g.c) for g in grads)
    Pbox_s_v = Series(Wv, Pbox_s.c)
    P_v = opsv.P
    src = -1.0 * Series(Wv, ops.box(U).c)
    Vn = _solve_transport(opsv, gv, 2.0, Pbox_s_v - 2.0 * P_v, src, Wv)
    V = Vn.copy()
    s_v = Series(Wv, s.c)
    s_pow = Series.const(Wv, 1.0)
    for n in range(0, order):
        src = (-1.0 / (n + 1)) * opsv.box(Vn)
        Vn = _solve_transport(opsv, gv, 2.0, Pbox_s_v + (2.0 * n) * P_v, src, Wv)
        s_pow = s_pow * s_v
        V = V + Vn * s_pow
    return s, U, V


def tail_coefficient_array(M: float, rp: float, order: int) -> np.ndarray:
    """v_ijk with i + j + k <= order, as an (order+1)^3 array."""
    n = order
    out = np.zeros((n + 1, n + 1, n + 1))
    if M == 0:
        return out
    _, _, V = hadamard_series(M, rp, order)
    c = V.c
    for i in range(min(n, c.shape[0] - 1) + 1):
        for j in range(min(n - i, c.shape[1] - 1) + 1):
            kmax = min(n - i - j, c.shape[2] - 1)
            out[i, j, : kmax + 1] = c[i, j, : kmax + 1]
    return out
