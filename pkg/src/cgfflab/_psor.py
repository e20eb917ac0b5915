"""Compiled kernels for projected SOR on the 5-point grid energy.

The energy is ``1/2 sum_edges w_e (h_i - h_j)^2 + sum_i src_i h_i`` with
``w = wx`` on x-edges and ``w = wy`` on y-edges.  Non-free nodes keep their
value.  Red-black ordering makes a half-sweep order independent.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _neighbours(i, j, n0, n1, periodic):
    ip, im, jp, jm = i + 1, i - 1, j + 1, j - 1
    if periodic:
        # branches instead of %, which is slow for signed ints in numba
        if ip == n0:
            ip = 0
        if im < 0:
            im = n0 - 1
        if jp == n1:
            jp = 0
        if jm < 0:
            jm = n1 - 1
    return ip, im, jp, jm


@njit(cache=True)
def sweep(h, lower, free, src, wx, wy, omega, periodic, color):
    n0, n1 = h.shape
    diag = 2.0 * (wx + wy)
    for i in range(n0):
        for j in range((i + color) % 2, n1, 2):
            if not free[i, j]:
                continue
            ip, im, jp, jm = _neighbours(i, j, n0, n1, periodic)
            s = wx * (h[ip, j] + h[im, j]) + wy * (h[i, jp] + h[i, jm])
            z = (s - src[i, j]) / diag
            v = h[i, j] + omega * (z - h[i, j])
            if v < lower[i, j]:
                v = lower[i, j]
            h[i, j] = v


@njit(cache=True)
def projected_residual(h, lower, free, src, wx, wy, periodic):
    """Max-norm of the projected gradient of the energy over free nodes."""
    n0, n1 = h.shape
    diag = 2.0 * (wx + wy)
    r = 0.0
    for i in range(n0):
        for j in range(n1):
            if not free[i, j]:
                continue
            ip, im, jp, jm = _neighbours(i, j, n0, n1, periodic)
            s = wx * (h[ip, j] + h[im, j]) + wy * (h[i, jp] + h[i, jm])
            g = diag * h[i, j] - s + src[i, j]
            if h[i, j] > lower[i, j]:
                a = abs(g)
            else:
                a = -g if g < 0.0 else 0.0
            if a > r:
                r = a
    return r


@njit(cache=True)
def energy(h, src, wx, wy, periodic):
    n0, n1 = h.shape
    e = 0.0
    lin = 0.0
    for i in range(n0):
        for j in range(n1):
            if periodic or i + 1 < n0:
                d = h[(i + 1) % n0, j] - h[i, j]
                e += wx * d * d
            if periodic or j + 1 < n1:
                d = h[i, (j + 1) % n1] - h[i, j]
                e += wy * d * d
            lin += src[i, j] * h[i, j]
    return 0.5 * e + lin


def warmup():
    """Trigger compilation on a tiny problem."""
    h = np.zeros((4, 4))
    lower = np.full((4, 4), -np.inf)
    free = np.ones((4, 4), dtype=np.bool_)
    src = np.zeros((4, 4))
    sweep(h, lower, free, src, 1.0, 1.0, 1.0, True, 0)
    projected_residual(h, lower, free, src, 1.0, 1.0, True)
    energy(h, src, 1.0, 1.0, True)
