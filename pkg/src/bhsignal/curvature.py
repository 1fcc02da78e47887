"""Christoffel symbols and Riemann tensor of Schwarzschild in (t, r, theta, phi)."""

from __future__ import annotations

import math

import numpy as np


def christoffel(M: float, r: float, theta: float = 0.5 * math.pi) -> np.ndarray:
    """G[a, b, c] = Gamma^a_{bc}."""
    f = 1 - 2 * M / r
    s, c = math.sin(theta), math.cos(theta)
    G = np.zeros((4, 4, 4))
    G[0, 0, 1] = G[0, 1, 0] = M / (r * r * f)
    G[1, 0, 0] = M * f / (r * r)
    G[1, 1, 1] = -M / (r * r * f)
    G[1, 2, 2] = -r * f
    G[1, 3, 3] = -r * f * s * s
    G[2, 1, 2] = G[2, 2, 1] = 1 / r
    G[2, 3, 3] = -s * c
    G[3, 1, 3] = G[3, 3, 1] = 1 / r
    G[3, 2, 3] = G[3, 3, 2] = c / s
    return G


def metric(M: float, r: float, theta: float = 0.5 * math.pi) -> np.ndarray:
    f = 1 - 2 * M / r
    return np.diag([-f, 1 / f, r * r, (r * math.sin(theta)) ** 2])


def riemann_up(M: float, r: float, theta: float = 0.5 * math.pi) -> np.ndarray:
    """R[a, b, c, d] = R^a_{bcd}, built from the orthonormal-frame components."""
    f = 1 - 2 * M / r
    # frame one-forms: e^a = E[a] dx^a (diagonal)
    E = np.array([math.sqrt(f), 1 / math.sqrt(f), r, r * math.sin(theta)])
    m = M / r**3
    frame = {(0, 1): -2 * m, (0, 2): m, (0, 3): m, (2, 3): 2 * m, (1, 2): -m, (1, 3): -m}
    R = np.zeros((4, 4, 4, 4))
    for (a, b), val in frame.items():
        v = val * E[a] * E[b] * E[a] * E[b]
        R[a, b, a, b] = v
        R[b, a, b, a] = v
        R[a, b, b, a] = -v
        R[b, a, a, b] = -v
    ginv = 1 / np.diag(metric(M, r, theta))
    return ginv[:, None, None, None] * R
