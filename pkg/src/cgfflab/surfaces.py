"""Explicit Laplacian eigenbases on flat model surfaces.

Two models are supported:

* ``torus``: the flat torus ``[0, a) x [0, b)`` (default ``2*pi x 2*pi``).
  Eigenfunctions are ``sqrt(2/V) cos(k.x)`` and ``sqrt(2/V) sin(k.x)`` over
  a half-lattice of wave vectors ``k``, with eigenvalue ``|k|^2``.
* ``dirichlet-rectangle``: ``[0, a] x [0, b]`` (default ``pi x pi``) with
  zero boundary values; ``psi_mn = (2/sqrt(V)) sin(m pi x/a) sin(n pi y/b)``.

Eigenpairs are ordered by ``(eigenvalue, k1, k2, parity)``.  On square
models the cutoff test ``lambda <= L`` is decided on the integer ``|k|^2``,
so band membership never depends on floating point rounding.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from .validation import ValidationError, check_points, check_positive

TORUS = "torus"
RECTANGLE = "dirichlet-rectangle"
COS, SIN = 0, 1


@dataclass(frozen=True)
class SurfaceModel:
    """A flat model surface: closed torus or Dirichlet rectangle."""

    kind: str = TORUS
    sides: tuple = None

    def __post_init__(self):
        if self.kind not in (TORUS, RECTANGLE):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        sides = self.sides
        if sides is None:
            s = 2 * math.pi if self.kind == TORUS else math.pi
            sides = (s, s)
        elif np.isscalar(sides):
            sides = (float(sides), float(sides))
        sides = tuple(check_positive(float(s), "side length") for s in sides)
        if len(sides) != 2:
            raise ValidationError("sides must be a pair of lengths")
        object.__setattr__(self, "sides", sides)

    @classmethod
    def torus(cls, side=2 * math.pi):
        return cls(TORUS, side)

    @classmethod
    def rectangle(cls, side=math.pi):
        return cls(RECTANGLE, side)

    @property
    def volume(self):
        return self.sides[0] * self.sides[1]

    @property
    def has_boundary(self):
        return self.kind == RECTANGLE

    @property
    def is_square(self):
        return self.sides[0] == self.sides[1]

    @property
    def wavenumber_scale(self):
        """Physical wavenumber per unit lattice index along each axis."""
        c = 2 * math.pi if self.kind == TORUS else math.pi
        return (c / self.sides[0], c / self.sides[1])

    @property
    def in_range_radius(self):
        """Half the injectivity radius of the torus (same value used for the rectangle)."""
        return min(self.sides) / 4

    def scaled(self, s):
        return SurfaceModel(self.kind, (self.sides[0] * s, self.sides[1] * s))

    def eigenvalue(self, k1, k2):
        sx, sy = self.wavenumber_scale
        return (sx * np.asarray(k1)) ** 2 + (sy * np.asarray(k2)) ** 2

    def _qmax(self, L):
        # largest integer q with s^2 q <= L, square models only
        s2 = self.wavenumber_scale[0] ** 2
        q = math.floor(L / s2)
        while s2 * (q + 1) <= L:
            q += 1
        while q > 0 and s2 * q > L:
            q -= 1
        return q

    def max_index(self, L):
        """Largest lattice index per axis that can occur below cutoff ``L``."""
        sx, sy = self.wavenumber_scale
        return int(math.isqrt(int(math.floor(L / sx**2))) + 1), int(
            math.isqrt(int(math.floor(L / sy**2))) + 1
        )

    # grids ---------------------------------------------------------------
    def grid_axes(self, n):
        """Node coordinates along each axis for resolution ``n``.

        The torus grid has ``n`` periodic nodes per axis; the rectangle grid has
        ``n + 1`` nodes per axis including both boundary nodes.
        """
        a, b = self.sides
        if self.kind == TORUS:
            j = np.arange(n)
        else:
            j = np.arange(n + 1)
        return j * (a / n), j * (b / n)

    def grid_points(self, n):
        x, y = self.grid_axes(n)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def grid_shape(self, n):
        return (n, n) if self.kind == TORUS else (n + 1, n + 1)

    def grid_spacing(self, n):
        return self.sides[0] / n, self.sides[1] / n

    def cell_area(self, n):
        hx, hy = self.grid_spacing(n)
        return hx * hy

    def min_resolution(self, L):
        """Smallest power-of-two grid resolution that synthesizes band ``(0, L]`` alias-free.

        Two conditions are combined: the coarse rule ``n >= 2 ceil(sqrt L) side / (2 pi)``
        and the exact one that every wave index present is strictly below the
        folding frequency (``|k_i| < n/2`` on the torus, ``m < n`` for the sine
        transform).
        """
        L = check_positive(L, "L")
        need = max(2.0 * math.ceil(math.sqrt(L)) * s / (2 * math.pi) for s in self.sides)
        basis = enumerate_eigenpairs(self, L)
        if len(basis):
            k1 = int(np.max(np.abs(basis.k1)))
            k2 = int(np.max(np.abs(basis.k2)))
            if self.kind == TORUS:
                need = max(need, 2 * k1 + 1, 2 * k2 + 1)
            else:
                need = max(need, k1 + 1, k2 + 1)
        n = 2
        while n < need:
            n *= 2
        return n

    # points --------------------------------------------------------------
    def reduce(self, points):
        """Map points into the fundamental domain (torus) or reject them (rectangle)."""
        pts = check_points(points)
        a, b = self.sides
        if self.kind == TORUS:
            return np.stack([np.mod(pts[:, 0], a), np.mod(pts[:, 1], b)], axis=1)
        bad = (pts[:, 0] < 0) | (pts[:, 0] > a) | (pts[:, 1] < 0) | (pts[:, 1] > b)
        if np.any(bad):
            raise ValidationError(
                f"point {pts[np.argmax(bad)]} lies outside the rectangle [0,{a}]x[0,{b}]"
            )
        return pts


@dataclass(frozen=True)
class EigenPair:
    """One Laplacian eigenpair; ``parity`` is COS/SIN on the torus and 0 on the rectangle."""

    model: SurfaceModel
    k1: int
    k2: int
    parity: int
    eigenvalue: float
    norm: float

    def __call__(self, p):
        return eval_eigenfunction(self, p)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """All eigenpairs with ``0 < lambda <= L`` in canonical order."""

    model: SurfaceModel
    L: float
    k1: np.ndarray
    k2: np.ndarray
    parity: np.ndarray
    eigenvalues: np.ndarray
    q: np.ndarray = field(default=None)  # integer |k|^2, square models only

    def __len__(self):
        return len(self.eigenvalues)

    def __getitem__(self, i):
        return EigenPair(
            self.model,
            int(self.k1[i]),
            int(self.k2[i]),
            int(self.parity[i]),
            float(self.eigenvalues[i]),
            self.norm,
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def norm(self):
        v = self.model.volume
        return math.sqrt(2.0 / v) if self.model.kind == TORUS else 2.0 / math.sqrt(v)

    def count(self, L):
        """Number of eigenpairs with eigenvalue <= L (L may not exceed ``self.L``)."""
        if L <= 0:
            return 0
        if L > self.L:
            raise ValidationError(f"cutoff {L} exceeds the basis cutoff {self.L}")
        if self.q is not None:
            return int(np.searchsorted(self.q, self.model._qmax(L), side="right"))
        return int(np.searchsorted(self.eigenvalues, L, side="right"))

    def band(self, lo, hi):
        """Slice of ordinals with ``lo < lambda <= hi``."""
        return slice(self.count(lo), self.count(hi))

    def evaluate(self, points, deriv=(0, 0), index=slice(None)):
        """Matrix ``M[i, n] = d^deriv psi_n(points[i])`` for the selected eigenpairs.

        ``deriv = (dx, dy)`` gives the order of partial differentiation in each
        coordinate; derivatives are taken term-wise in closed form.
        """
        pts = self.model.reduce(points)
        dx, dy = int(deriv[0]), int(deriv[1])
        sx, sy = self.model.wavenumber_scale
        wx = sx * self.k1[index].astype(float)
        wy = sy * self.k2[index].astype(float)
        x = pts[:, :1]
        y = pts[:, 1:]
        if self.model.kind == TORUS:
            # sin(t) = cos(t - pi/2): one transcendental call per entry
            shift = ((dx + dy) - self.parity[index]) * (math.pi / 2)
            trig = np.cos(x * wx + y * wy + shift)
            factor = wx**dx * wy**dy
        else:
            trig = np.sin(x * wx + dx * (math.pi / 2)) * np.sin(y * wy + dy * (math.pi / 2))
            factor = wx**dx * wy**dy
        return self.norm * factor * trig


def _enumerate(model, L):
    sx, sy = model.wavenumber_scale
    K1, K2 = model.max_index(L)
    if model.kind == TORUS:
        i1 = np.arange(0, K1 + 1)
        i2 = np.arange(-K2, K2 + 1)
    else:
        i1 = np.arange(1, K1 + 1)
        i2 = np.arange(1, K2 + 1)
    A, B = np.meshgrid(i1, i2, indexing="ij")
    A, B = A.ravel(), B.ravel()
    if model.kind == TORUS:
        half = (A > 0) | ((A == 0) & (B > 0))
        A, B = A[half], B[half]
    if model.is_square:
        q = A.astype(np.int64) ** 2 + B.astype(np.int64) ** 2
        keep = q <= model._qmax(L)
    else:
        q = None
        keep = model.eigenvalue(A, B) <= L
    A, B = A[keep], B[keep]
    if q is not None:
        q = q[keep]
    if model.kind == TORUS:
        A = np.repeat(A, 2)
        B = np.repeat(B, 2)
        parity = np.tile(np.array([COS, SIN]), len(A) // 2)
        if q is not None:
            q = np.repeat(q, 2)
    else:
        parity = np.zeros(len(A), dtype=int)
    lam = model.eigenvalue(A, B).astype(float)
    primary = q if q is not None else lam
    order = np.lexsort((parity, B, A, primary))
    arrays = [A[order], B[order], parity[order], lam[order]]
    arrays.append(q[order] if q is not None else None)
    for arr in arrays:
        if arr is not None:
            arr.flags.writeable = False
    return SpectralBasis(model, float(L), *arrays[:4], q=arrays[4])


@lru_cache(maxsize=64)
def _enumerate_cached(model, L):
    return _enumerate(model, L)


def enumerate_eigenpairs(model, L):
    """Return every eigenpair with ``0 < lambda <= L`` in canonical order.

    An empty basis is returned when ``L`` lies below the first eigenvalue.
    Results are cached per ``(model, L)`` and are immutable.
    """
    L = check_positive(L, "L")
    return _enumerate_cached(model, L)


def eval_eigenfunction(pair, p):
    """Evaluate the normalized eigenfunction of ``pair`` at point(s) ``p``."""
    basis = SpectralBasis(
        pair.model,
        pair.eigenvalue,
        np.array([pair.k1]),
        np.array([pair.k2]),
        np.array([pair.parity]),
        np.array([pair.eigenvalue]),
    )
    vals = basis.evaluate(p)[:, 0]
    return float(vals[0]) if np.ndim(p) == 1 else vals


def geodesic_distance(model, p, q):
    """Flat distance; on the torus the minimum over the 9 nearest translates of ``q``."""
    P = model.reduce(p)
    Q = model.reduce(q)
    d = P - Q
    if model.kind == TORUS:
        a, b = model.sides
        best = np.full(d.shape[0], np.inf)
        for ox in (-a, 0.0, a):
            for oy in (-b, 0.0, b):
                best = np.minimum(best, np.hypot(d[:, 0] + ox, d[:, 1] + oy))
        out = best
    else:
        out = np.hypot(d[:, 0], d[:, 1])
    if np.ndim(p) == 1 and np.ndim(q) == 1:
        return float(out[0])
    return out


def gram_matrix(basis, count, resolution, chunk_rows=32):
    """Quadrature Gram matrix of the first ``count`` eigenfunctions on an ``n x n`` grid.

    Composite rectangle rule on the torus; trapezoid on the rectangle (the
    boundary weights are irrelevant since every eigenfunction vanishes there).
    """
    model = basis.model
    x, y = model.grid_axes(resolution)
    w = model.cell_area(resolution)
    idx = slice(0, count)
    G = np.zeros((count, count))
    for start in range(0, len(x), chunk_rows):
        xs = x[start : start + chunk_rows]
        X, Y = np.meshgrid(xs, y, indexing="ij")
        M = basis.evaluate(np.stack([X.ravel(), Y.ravel()], axis=1), index=idx)
        G += M.T @ M
    return G * w
