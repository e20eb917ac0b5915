"""Exact spectral kernels of the cut-off field and their asymptotic checks.

Every kernel here is a finite spectral sum over a cached basis; nothing is
replaced by its asymptotic form, since the asymptotics are what gets tested.
"""

import csv
from dataclasses import dataclass
import math

import numpy as np

from .surfaces import enumerate_eigenpairs, geodesic_distance
from .validation import ValidationError, check_alpha, check_points, check_positive

_CHUNK = 256


def _pairs(p, q):
    P = check_points(p)
    Q = check_points(q)
    if len(P) != len(Q):
        if len(P) == 1:
            P = np.repeat(P, len(Q), axis=0)
        elif len(Q) == 1:
            Q = np.repeat(Q, len(P), axis=0)
        else:
            raise ValidationError("p and q must have matching lengths")
    return P, Q


def _spectral_sum(model, lo, hi, p, q, power, deriv_p=(0, 0), deriv_q=(0, 0)):
    """``sum_{lo < lambda <= hi} lambda^-power d^a psi(p) d^b psi(q)`` for each pair."""
    P, Q = _pairs(p, q)
    out = np.zeros(len(P))
    if hi <= 0:
        return out
    basis = enumerate_eigenpairs(model, hi)
    sl = basis.band(lo, hi)
    if sl.stop <= sl.start:
        return out
    weight = basis.eigenvalues[sl] ** (-power)
    for s in range(0, len(P), _CHUNK):
        A = basis.evaluate(P[s : s + _CHUNK], deriv_p, sl)
        B = basis.evaluate(Q[s : s + _CHUNK], deriv_q, sl)
        out[s : s + _CHUNK] = (A * B) @ weight
    return out


def _scalar(out, p, q):
    return float(out[0]) if np.ndim(p) == 1 and np.ndim(q) == 1 else out


def covariance(model, L, p, q):
    """``G_L(p, q) = sum_{0 < lambda_n <= L} psi_n(p) psi_n(q) / lambda_n``."""
    L = check_positive(L, "L")
    return _scalar(_spectral_sum(model, 0.0, L, p, q, 1), p, q)


def projector_kernel(model, L, p, q):
    """``E_L(p, q) = sum_{0 < lambda_n <= L} psi_n(p) psi_n(q)``."""
    L = check_positive(L, "L")
    return _scalar(_spectral_sum(model, 0.0, L, p, q, 0), p, q)


def band_covariance(model, L, alpha, p, q):
    """Covariance of the high band ``(L^alpha, L]``, i.e. ``G_L - G_{L^alpha}``."""
    alpha = check_alpha(alpha)
    L = check_positive(L, "L")
    return _scalar(_spectral_sum(model, L**alpha, L, p, q, 1), p, q)


def ln_plus(a):
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(a > 1.0, np.log(np.where(a > 0, a, 1.0)), 0.0)


def log_prediction(L, d):
    """Leading-order covariance ``(ln sqrt L - ln_+(sqrt L d)) / (2 pi)``."""
    s = math.sqrt(L)
    return (math.log(s) - ln_plus(s * np.asarray(d))) / (2 * math.pi)


@dataclass
class ResidualReport:
    """Residuals ``rho = G_L - log_prediction`` on an L grid times a set of pairs.

    Array attributes with two axes are indexed ``[L index, pair index]``.
    Pairs farther apart than ``radius`` are flagged out of range and left out
    of the summaries.
    """

    model: object
    Ls: np.ndarray
    p: np.ndarray
    q: np.ndarray
    distance: np.ndarray
    G: np.ndarray
    predicted: np.ndarray
    residual: np.ndarray
    in_range: np.ndarray
    radius: float

    @property
    def max_abs(self):
        r = np.abs(self.residual[:, self.in_range])
        return r.max(axis=1) if r.size else np.full(len(self.Ls), np.nan)

    @property
    def mean_abs(self):
        r = np.abs(self.residual[:, self.in_range])
        return r.mean(axis=1) if r.size else np.full(len(self.Ls), np.nan)

    @property
    def variation(self):
        """Relative spread ``(max - min) / max`` of ``max |rho|`` across the L grid."""
        m = self.max_abs
        return float((m.max() - m.min()) / m.max())

    def to_csv(self, fh):
        """Write one row per (L, pair); ``fh`` is a path or a text file object."""
        if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
            with open(fh, "w", newline="") as f:
                return self.to_csv(f)
        w = csv.writer(fh)
        w.writerow(["L", "p", "q", "d_g", "G_L", "predicted", "residual", "in_range"])
        for i, L in enumerate(self.Ls):
            for j in range(len(self.distance)):
                w.writerow(
                    [
                        f"{L:.17g}",
                        f"{self.p[j, 0]:.17g},{self.p[j, 1]:.17g}",
                        f"{self.q[j, 0]:.17g},{self.q[j, 1]:.17g}",
                        f"{self.distance[j]:.17g}",
                        f"{self.G[i, j]:.17g}",
                        f"{self.predicted[i, j]:.17g}",
                        f"{self.residual[i, j]:.17g}",
                        int(self.in_range[j]),
                    ]
                )


def asymptotic_residual(model, L, pairs, radius=None):
    """Exact ``rho_L(p, q)`` for each pair and each cutoff in ``L``.

    ``pairs`` is a tuple ``(P, Q)`` of point arrays.  ``radius`` defaults to
    ``model.in_range_radius``.
    """
    Ls = np.atleast_1d(np.asarray(L, dtype=float))
    for v in Ls:
        check_positive(float(v), "L")
    P, Q = _pairs(*pairs)
    radius = model.in_range_radius if radius is None else radius
    d = np.atleast_1d(geodesic_distance(model, P, Q))
    G = np.stack([_spectral_sum(model, 0.0, v, P, Q, 1) for v in Ls])
    pred = np.stack([log_prediction(v, d) for v in Ls])
    return ResidualReport(model, Ls, P, Q, d, G, pred, G - pred, d <= radius, radius)


def link_remainder(model, L, p, q):
    """Remainder ``R = G_L - E_L / L - int_1^L E_lambda / lambda^2 d lambda``.

    The integrand is piecewise constant in ``lambda``, so the integral equals
    ``sum_{lambda_n <= L} psi_n(p) psi_n(q) (1/max(1, lambda_n) - 1/L)``.
    Returns ``(R, scale)`` where ``scale`` is the largest magnitude among the
    three terms, the natural reference for rounding error.
    """
    L = check_positive(L, "L")
    P, Q = _pairs(p, q)
    G = _spectral_sum(model, 0.0, L, P, Q, 1)
    E = _spectral_sum(model, 0.0, L, P, Q, 0)
    basis = enumerate_eigenpairs(model, L)
    weight = 1.0 / np.maximum(1.0, basis.eigenvalues) - 1.0 / L
    integral = np.zeros(len(P))
    for s in range(0, len(P), _CHUNK):
        A = basis.evaluate(P[s : s + _CHUNK])
        B = basis.evaluate(Q[s : s + _CHUNK])
        integral[s : s + _CHUNK] = (A * B) @ weight
    R = G - E / L - integral
    scale = np.maximum.reduce([np.abs(G), np.abs(E / L), np.abs(integral)])
    return _scalar(R, p, q), _scalar(scale, p, q)


def link_residual(model, L1, L2, p, q):
    """``|R(L1) - R(L2)|``; zero up to rounding because ``R`` does not depend on ``L``."""
    L1 = check_positive(L1, "L1")
    L2 = check_positive(L2, "L2")
    if L1 <= 1:
        raise ValidationError("link_residual needs L1 > 1")
    if L2 <= L1:
        raise ValidationError("link_residual needs L1 < L2")
    R1, _ = link_remainder(model, L1, p, q)
    R2, _ = link_remainder(model, L2, p, q)
    return np.abs(np.asarray(R1) - np.asarray(R2)) if np.ndim(R1) else abs(R1 - R2)


def _multi_index(order):
    if np.ndim(order) == 0:
        d = int(order)
        if d < 0:
            raise ValidationError("derivative orders must be >= 0")
        return (d, 0)
    ax, ay = (int(v) for v in order)
    if ax < 0 or ay < 0:
        raise ValidationError("derivative orders must be >= 0")
    return (ax, ay)


def derivative_kernel(model, L, orders, p, q):
    """``(Q1 x Q2) G_L(p, q)`` for partial derivatives ``Q1, Q2``.

    Each entry of ``orders`` is either an integer ``d`` (``d``-th derivative in
    the first coordinate) or a multi-index ``(dx, dy)``.
    """
    L = check_positive(L, "L")
    a = _multi_index(orders[0])
    b = _multi_index(orders[1])
    if sum(a) + sum(b) > 6:
        raise ValidationError("total derivative order is limited to 6")
    return _scalar(_spectral_sum(model, 0.0, L, p, q, 1, a, b), p, q)


def derivative_kernel_diag(model, L, orders, p=None):
    """Diagonal value ``(Q1 x Q2) G_L(p, p)``; ``p`` defaults to the model centre."""
    a = _multi_index(orders[0])
    b = _multi_index(orders[1])
    if sum(a) + sum(b) < 1:
        raise ValidationError("total derivative order 0: use covariance instead")
    if p is None:
        p = np.array(model.sides) / 2
    return derivative_kernel(model, L, (a, b), p, p)


def weyl_constant(model):
    """Limit of ``E_L(p, p) / L`` away from the boundary: ``1 / (4 pi)``."""
    return 1.0 / (4 * math.pi)


__all__ = [
    "ResidualReport",
    "asymptotic_residual",
    "band_covariance",
    "covariance",
    "derivative_kernel",
    "derivative_kernel_diag",
    "link_remainder",
    "link_residual",
    "ln_plus",
    "log_prediction",
    "projector_kernel",
    "weyl_constant",
]
