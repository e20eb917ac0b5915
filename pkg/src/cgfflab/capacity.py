"""Capacity of a grid domain by a primal obstacle solver and by duality.

Discretization.  Grid functions live on ``model.grid_shape(n)``; the energy is
the 5-point form ``1/2 sum_edges w_e (h_i - h_j)^2`` with ``w = hy/hx`` on
x-edges and ``hx/hy`` on y-edges, which is ``1/2 int |grad h|^2`` to second
order.  The operator ``A`` below is the matching weighted graph Laplacian,
so ``A / cell_area`` approximates ``-nabla^2``.

Closed case (torus): admissible ``h`` have zero mean and ``h >= 1`` on D.
Boundary case (rectangle): the outer node ring, and any node outside an
optional ``region``, is pinned to zero; ``h >= 1`` on D.
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.fft
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import distance_transform_edt
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _psor
from .surfaces import TORUS, SurfaceModel, enumerate_eigenpairs
from .validation import ValidationError, check_int, check_positive


class CapacityError(RuntimeError):
    """Solver failure; ``residual`` carries the last projected-gradient norm."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


# shapes in relative coordinates (u, v) = (x / a, y / b) -------------------


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    r: float

    def contains(self, u, v, periodic=False):
        du = np.abs(u - self.cx)
        dv = np.abs(v - self.cy)
        if periodic:
            du = np.minimum(du, 1.0 - du)
            dv = np.minimum(dv, 1.0 - dv)
        return du * du + dv * dv <= self.r * self.r


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, u, v, periodic=False):
        return (u >= self.x0) & (u <= self.x1) & (v >= self.y0) & (v <= self.y1)


@dataclass(frozen=True)
class Union:
    parts: tuple

    def contains(self, u, v, periodic=False):
        out = np.zeros(np.broadcast(u, v).shape, dtype=bool)
        for p in self.parts:
            out |= p.contains(u, v, periodic)
        return out


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Node indicator of D on a model grid.

    ``inside`` marks D.  ``exterior`` marks extra nodes pinned to zero
    (rectangle only), e.g. the outside of a circular outer boundary.
    ``boundary_distance`` is the physical distance from D to the nearest
    pinned node (``inf`` on the torus).  A disk shape on a non-square model is
    an ellipse in physical coordinates, since shapes use relative coordinates.
    """

    model: SurfaceModel
    resolution: int
    inside: np.ndarray
    exterior: np.ndarray = None
    shape: object = None
    region: object = None
    boundary_distance: float = field(init=False)

    def __post_init__(self):
        expected = self.model.grid_shape(self.resolution)
        inside = np.asarray(self.inside, dtype=bool)
        if inside.shape != expected:
            raise ValidationError(f"mask shape {inside.shape} does not match grid {expected}")
        object.__setattr__(self, "inside", inside)
        if self.exterior is not None:
            if self.model.kind == TORUS:
                raise ValidationError("exterior pins only make sense on the rectangle")
            ext = np.asarray(self.exterior, dtype=bool)
            if ext.shape != expected:
                raise ValidationError("exterior shape does not match the grid")
            object.__setattr__(self, "exterior", ext)
        pinned = self.pinned
        if self.model.kind == TORUS or not pinned.any():
            dist = math.inf
        elif not inside.any():
            dist = math.inf
        else:
            hx, hy = self.model.grid_spacing(self.resolution)
            d = distance_transform_edt(~pinned, sampling=(hx, hy))
            dist = float(d[inside].min())
        object.__setattr__(self, "boundary_distance", dist)

    @classmethod
    def from_shape(cls, model, resolution, shape, region=None, allow_empty=False):
        """Rasterize ``shape`` (node-centre membership); nodes outside ``region`` are pinned."""
        resolution = check_int(resolution, "resolution", minimum=2)
        x, y = model.grid_axes(resolution)
        a, b = model.sides
        U, V = np.meshgrid(x / a, y / b, indexing="ij")
        periodic = model.kind == TORUS
        inside = shape.contains(U, V, periodic)
        exterior = None
        if region is not None:
            exterior = ~region.contains(U, V, periodic)
        mask = cls(model, resolution, inside, exterior, shape, region)
        return mask.validate(allow_empty)

    @property
    def pinned(self):
        """Nodes held at zero: the outer ring and exterior (rectangle), none on the torus."""
        p = np.zeros(self.inside.shape, dtype=bool)
        if self.model.kind != TORUS:
            p[0, :] = p[-1, :] = p[:, 0] = p[:, -1] = True
            if self.exterior is not None:
                p |= self.exterior
        return p

    @property
    def area(self):
        return float(self.inside.sum()) * self.model.cell_area(self.resolution)

    def validate(self, allow_empty=False):
        n_in = int(self.inside.sum())
        if n_in == 0 and not allow_empty:
            raise ValidationError("D is empty")
        pinned = self.pinned
        if np.any(self.inside & pinned):
            raise ValidationError("D touches the outer boundary layer or the pinned exterior")
        if n_in and not np.any(~self.inside & ~pinned):
            raise ValidationError("D covers every free node (mask is not proper)")
        return self


# grid operators -------------------------------------------------------------


def _weights(mask):
    hx, hy = mask.model.grid_spacing(mask.resolution)
    return hy / hx, hx / hy, hx * hy


def _apply(h, mask):
    """``A h`` on the full grid (rows at pinned rectangle nodes are meaningless)."""
    wx, wy, _ = _weights(mask)
    if mask.model.kind == TORUS:
        return (
            2 * (wx + wy) * h
            - wx * (np.roll(h, 1, 0) + np.roll(h, -1, 0))
            - wy * (np.roll(h, 1, 1) + np.roll(h, -1, 1))
        )
    out = np.zeros_like(h)
    out[1:-1, 1:-1] = (
        2 * (wx + wy) * h[1:-1, 1:-1]
        - wx * (h[2:, 1:-1] + h[:-2, 1:-1])
        - wy * (h[1:-1, 2:] + h[1:-1, :-2])
    )
    return out


def grid_energy(h, mask):
    """``1/2 sum_edges w_e (h_i - h_j)^2`` by differences (independent of ``A``)."""
    wx, wy, _ = _weights(mask)
    if mask.model.kind == TORUS:
        dx = np.roll(h, -1, 0) - h
        dy = np.roll(h, -1, 1) - h
    else:
        dx = np.diff(h, axis=0)
        dy = np.diff(h, axis=1)
    return 0.5 * (wx * math.fsum((dx * dx).ravel()) + wy * math.fsum((dy * dy).ravel()))


def _laplacian(mask, nodes):
    """Sparse ``A`` restricted to the boolean node set ``nodes`` (others act as zero)."""
    wx, wy, _ = _weights(mask)
    n0, n1 = mask.inside.shape
    periodic = mask.model.kind == TORUS

    def path(n):
        T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="lil")
        if periodic:
            T[0, n - 1] = T[n - 1, 0] = -1
        return T.tocsr()

    A = wx * sp.kron(path(n0), sp.identity(n1)) + wy * sp.kron(sp.identity(n0), path(n1))
    idx = np.flatnonzero(nodes.ravel())
    return A.tocsr()[idx][:, idx].tocsr(), idx


def _solve_spd(A, b, rtol=1e-10):
    if A.shape[0] <= 20000:
        return spla.spsolve(A.tocsc(), b)
    import pyamg

    res = math.inf
    for build in (pyamg.ruge_stuben_solver, pyamg.smoothed_aggregation_solver):
        x = build(A).solve(b, tol=rtol, accel="cg", maxiter=500)
        res = np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1e-300)
        if res <= 100 * rtol:
            return x
    raise CapacityError(f"sparse solve stalled at relative residual {res:.3g}", res)


# primal solver --------------------------------------------------------------


@dataclass(eq=False)
class CapacityResult:
    """Outcome of a capacity solve.

    ``energy_history`` holds the objective the relaxation minimizes, sampled
    every ``check_every`` sweeps; it is non-increasing.  On the torus that
    objective is the sourced functional described in
    ``solve_capacity_primal``, not the energy of ``h`` itself.
    """

    mask: DomainMask
    primal: float
    h: np.ndarray
    dual: float = float("nan")
    iterations: int = 0
    residual: float = 0.0
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)
    converged: bool = True
    witness: np.ndarray = None
    tau: float = None

    @property
    def gap(self):
        return self.primal - self.dual

    @property
    def relative_gap(self):
        return self.gap / self.primal if self.primal > 0 else 0.0

    def summary_row(self):
        return {
            "primal": self.primal,
            "dual": self.dual,
            "gap": self.gap,
            "iterations": self.iterations,
            "grid": self.mask.resolution,
        }


def default_omega(mask):
    n = max(mask.inside.shape)
    return 2.0 / (1.0 + math.sin(math.pi / n))


def _prolong(c, periodic):
    """Bilinear interpolation from resolution ``m`` to ``2m`` on the same domain."""
    if periodic:
        m = c.shape[0]
        f = np.empty((2 * m, 2 * m))
        f[::2, ::2] = c
        f[1::2, ::2] = 0.5 * (c + np.roll(c, -1, 0))
        f[:, 1::2] = 0.5 * (f[:, ::2] + np.roll(f[:, ::2], -1, 1))
        return f
    m = c.shape[0] - 1
    f = np.empty((2 * m + 1, 2 * m + 1))
    f[::2, ::2] = c
    f[1::2, ::2] = 0.5 * (c[:-1] + c[1:])
    f[:, 1::2] = 0.5 * (f[:, :-2:2] + f[:, 2::2])
    return f


def _relax(mask, tol, max_sweeps, omega, check_every, warm_start):
    """Projected SOR on the relaxed problem; returns the iterate and diagnostics."""
    model = mask.model
    shape = mask.inside.shape
    wx, wy, w = _weights(mask)
    periodic = model.kind == TORUS
    omega = default_omega(mask) if omega is None else float(omega)
    if not 0.0 < omega < 2.0:
        raise ValidationError("omega must lie in (0, 2)")
    free = ~mask.pinned
    lower = np.full(shape, -np.inf)
    if periodic:
        lower[mask.inside] = 0.0
        src = np.full(shape, w)
        u = np.zeros(shape)
    else:
        lower[mask.inside] = 1.0
        src = np.zeros(shape)
        u = np.where(mask.inside, 1.0, 0.0)

    n = mask.resolution
    if warm_start and mask.shape is not None and n >= 64 and n % 2 == 0:
        try:
            coarse = DomainMask.from_shape(model, n // 2, mask.shape, mask.region)
        except ValidationError:
            coarse = None
        if coarse is not None:
            uc = _relax(coarse, tol, max_sweeps, None, check_every, True)[0]
            u = np.maximum(_prolong(uc, periodic), lower)
            u[~free] = 0.0

    res_hist, e_hist = [], [_psor.energy(u, src, wx, wy, periodic)]
    res = _psor.projected_residual(u, lower, free, src, wx, wy, periodic)
    sweeps = 0
    while res >= tol:
        if sweeps >= max_sweeps:
            raise CapacityError(
                f"projected SOR did not reach tol={tol:g} in {max_sweeps} sweeps "
                f"(last residual {res:.3g})",
                res,
                sweeps,
            )
        for _ in range(min(check_every, max_sweeps - sweeps)):
            _psor.sweep(u, lower, free, src, wx, wy, omega, periodic, 0)
            _psor.sweep(u, lower, free, src, wx, wy, omega, periodic, 1)
            sweeps += 1
        res = _psor.projected_residual(u, lower, free, src, wx, wy, periodic)
        res_hist.append(res)
        e_hist.append(_psor.energy(u, src, wx, wy, periodic))
    return u, sweeps, res, res_hist, e_hist


def solve_capacity_primal(
    model,
    mask,
    tol=1e-8,
    max_sweeps=100_000,
    omega=None,
    check_every=10,
    dual="equilibrium",
    allow_empty=False,
    warm_start=True,
):
    """Minimize the grid energy over admissible ``h`` by projected SOR.

    Rectangle: plain PSOR with lower bound 1 on D and pinned nodes fixed at 0.

    Torus: the mean constraint is handled through the sourced problem
    ``min 1/2 g'Ag + w sum g`` subject to ``g >= 0`` on D, whose solution
    satisfies the same KKT system as the capacity problem up to scaling:
    ``h = 1 - g / mean(g)`` is the constrained minimizer and is exactly mean
    zero.  Convergence is declared when the projected gradient of the relaxed
    functional has max-norm below ``tol``.

    With ``warm_start`` and a mask built from a shape, the iteration starts
    from the interpolated solution at half resolution (recursively).
    ``iterations`` counts fine-grid sweeps only.

    ``dual`` selects the lower-bound witness: ``"equilibrium"`` (the flux
    witness of ``equilibrium_potential``), ``"indicator"`` (``f = 1`` on D)
    or ``None``.
    """
    if mask.model != model:
        raise ValidationError("mask was built for a different model")
    mask.validate(allow_empty)
    tol = check_positive(tol, "tol")
    max_sweeps = check_int(max_sweeps, "max_sweeps", minimum=1)
    shape = mask.inside.shape
    if not mask.inside.any():
        return CapacityResult(mask, 0.0, np.zeros(shape), dual=0.0)
    periodic = model.kind == TORUS
    u, sweeps, res, res_hist, e_hist = _relax(
        mask, tol, max_sweeps, omega, check_every, warm_start
    )

    if periodic:
        m = u.mean()
        if not m < 0:
            raise CapacityError("degenerate torus solve: relaxed potential has no negative mass", res)
        h = 1.0 - u / m
    else:
        h = u
    result = CapacityResult(
        mask,
        grid_energy(h, mask),
        h,
        iterations=sweeps,
        residual=res,
        residual_history=res_hist,
        energy_history=e_hist,
    )
    if dual == "equilibrium":
        _, tau, f = equilibrium_potential(model, mask)
        result.dual = dual_capacity(model, mask, f)
        result.witness, result.tau = f, tau
    elif dual == "indicator":
        f = mask.inside.astype(float)
        result.dual = dual_capacity(model, mask, f)
        result.witness = f
    elif dual is not None:
        raise ValidationError(f"unknown dual witness {dual!r}")
    return result


# sigma and the dual ---------------------------------------------------------


def _resolvable_limit(model, f):
    """Largest eigenvalue such that every mode up to it is resolved by grid ``f``."""
    sx, sy = model.wavenumber_scale
    if model.kind == TORUS:
        n = f.shape[0]
        if f.shape != (n, n):
            raise ValidationError("f must be a square grid")
        kmax = (n - 1) // 2
    else:
        n = f.shape[0] - 1
        if f.shape != (n + 1, n + 1):
            raise ValidationError("f must be a square rectangle grid")
        kmax = n - 1
    return n, kmax, min(sx, sy) ** 2 * (kmax + 1) ** 2 - 1e-9


def _inner_products(model, f, L):
    """``<psi_n, f>`` by grid quadrature for modes with ``lambda <= L``, and the eigenvalues."""
    f = np.asarray(f, dtype=float)
    n, kmax, L_grid = _resolvable_limit(model, f)
    if L > L_grid:
        raise ValidationError(
            f"L_trunc={L:g} exceeds what a {n}-grid resolves (about {L_grid:.4g})"
        )
    basis = enumerate_eigenpairs(model, L)
    w = model.cell_area(n)
    if model.kind == TORUS:
        F = scipy.fft.fft2(f)
        k1 = np.mod(basis.k1, n)
        k2 = np.mod(basis.k2, n)
        raw = np.where(basis.parity == 0, F.real[k1, k2], -F.imag[k1, k2])
    else:
        S = scipy.fft.dstn(f[1:-1, 1:-1], type=1) / 4.0
        raw = S[basis.k1 - 1, basis.k2 - 1]
    return w * basis.norm * raw, basis.eigenvalues, w


def _next_eigenvalue(model, L):
    sx, sy = model.wavenumber_scale
    step = (sx + sy) ** 2
    bigger = enumerate_eigenpairs(model, L + 4 * math.sqrt(L) * step + 4 * step)
    lam = bigger.eigenvalues
    return float(lam[lam > L].min())


def sigma_quadratic(model, f, L_trunc, full_output=False):
    """Truncated ``sum_{lambda_n <= L_trunc} <psi_n, f>^2 / lambda_n`` from grid values of f.

    Inner products use the grid quadrature, computed by FFT (torus) or sine
    transform (rectangle).  ``L_trunc`` may not exceed the range the grid
    resolves.  With ``full_output`` returns ``(value, tail_bound, n_modes)``
    where the tail bound is ``||f||^2 / lambda_next`` for the first omitted
    eigenvalue.
    """
    L_trunc = check_positive(L_trunc, "L_trunc")
    c, lam, w = _inner_products(model, f, L_trunc)
    value = math.fsum(c**2 / lam)
    if not full_output:
        return value
    norm2 = w * math.fsum((np.asarray(f, dtype=float) ** 2).ravel())
    return value, norm2 / _next_eigenvalue(model, L_trunc), len(lam)


def sigma_poisson(model, f, mask=None):
    """``<f, (-nabla^2)^-1 f>`` with the grid operator: solve ``A u = w f`` and return ``w f.u``.

    On the torus the mean of f is removed first (it carries no energy).  On the
    rectangle the outer ring, and the exterior of ``mask`` if given, are
    zero-Dirichlet nodes.  Exact transforms are used when no exterior is
    present, a sparse solve otherwise.
    """
    f = np.asarray(f, dtype=float)
    if mask is None:
        n = f.shape[0] if model.kind == TORUS else f.shape[0] - 1
        mask = DomainMask(model, n, np.zeros(model.grid_shape(n), dtype=bool))
    if f.shape != mask.inside.shape:
        raise ValidationError("f does not match the mask grid")
    wx, wy, w = _weights(mask)
    n = mask.resolution
    if model.kind == TORUS:
        g = f - f.mean()
        t = 2 - 2 * np.cos(2 * np.pi * np.arange(n) / n)
        mu = wx * t[:, None] + wy * t[None, :]
        mu[0, 0] = np.inf
        u = scipy.fft.ifft2(scipy.fft.fft2(w * g) / mu).real
        return w * math.fsum((g * u).ravel())
    if mask.exterior is None or not mask.exterior.any():
        t = 2 - 2 * np.cos(np.pi * np.arange(1, n) / n)
        mu = wx * t[:, None] + wy * t[None, :]
        inner = f[1:-1, 1:-1]
        # the orthonormal DST-I diagonalizes A on the interior
        c = scipy.fft.dstn(inner, type=1, norm="ortho")
        return w * w * math.fsum((c * c / mu).ravel())
    free = ~mask.pinned
    A, idx = _laplacian(mask, free)
    b = w * f.ravel()[idx]
    u = _solve_spd(A, b)
    return float(b @ u)


def dual_capacity(model, mask, f):
    """Dual objective ``(int_D f)^2 / (2 sigma(1_D f))``, a lower bound on the grid capacity."""
    f = np.asarray(f, dtype=float)
    if f.shape != mask.inside.shape:
        raise ValidationError("f does not match the mask grid")
    fd = np.where(mask.inside, f, 0.0)
    if np.any(fd < 0):
        raise ValidationError("f must be nonnegative on D")
    _, _, w = _weights(mask)
    mass = w * math.fsum(fd.ravel())
    sigma = sigma_poisson(model, fd, mask)
    if not sigma > 0:
        raise ValidationError("sigma(1_D f) vanishes: f is zero on D")
    return mass * mass / (2.0 * sigma)


def equilibrium_potential(model, mask, tol=1e-10):
    """Potential equal to 1 on D with ``-nabla^2 h = -tau`` off D.

    On the torus ``tau`` is fixed by zero mean: ``h = 1 + tau h1`` with
    ``A h1 = -w`` off D, and the mean is linear in ``tau``; a bracketed root
    search finds it.  On the rectangle ``h`` is discrete-harmonic off D with the
    pinned nodes at zero and ``tau = 0``.

    Returns ``(h, tau, f)`` where ``f = A h / w + tau`` on D and 0 elsewhere:
    the node-wise flux of ``h`` through the layer of D next to its boundary,
    plus ``tau`` on D.
    """
    if mask.model != model:
        raise ValidationError("mask was built for a different model")
    mask.validate()
    _, _, w = _weights(mask)
    off = ~mask.inside & ~mask.pinned
    A, idx = _laplacian(mask, off)
    h = np.zeros(mask.inside.shape)
    h[mask.inside] = 1.0
    if model.kind == TORUS:
        h1 = np.zeros_like(h)
        h1.ravel()[idx] = _solve_spd(A, -w * np.ones(len(idx)), tol)
        h = np.ones_like(h)

        def mean_of(tau):
            return 1.0 + tau * h1.mean()

        hi = 1.0
        for _ in range(200):
            if mean_of(hi) < 0:
                break
            hi *= 2.0
        else:
            raise CapacityError("could not bracket the multiplier tau")
        tau = scipy.optimize.brentq(mean_of, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
        h = h + tau * h1
    else:
        tau = 0.0
        b = -(_apply(h, mask)).ravel()[idx]  # couples off-D unknowns to the D values
        h.ravel()[idx] = _solve_spd(A, b, tol)
    f = np.where(mask.inside, _apply(h, mask) / w + tau, 0.0)
    return h, tau, f


def conformal_invariance_check(mask, s, tol=1e-8, **solver_options):
    """Capacity of D in the rectangle and of ``s D`` in the rectangle scaled by ``s``.

    The scaled problem keeps the physical grid spacing, so it runs at
    resolution ``s * n`` and rasterizes the shape afresh; the two values differ
    only by discretization and solver error.
    """
    model = mask.model
    if model.kind == TORUS:
        raise ValidationError("conformal check applies to the rectangle model only")
    s = check_positive(s, "s")
    if mask.shape is None:
        raise ValidationError("conformal check needs a mask built from a shape")
    n_s = s * mask.resolution
    if abs(n_s - round(n_s)) > 1e-9 or round(n_s) < 4:
        raise ValidationError(f"s * resolution = {n_s} must be an integer >= 4")
    scaled = DomainMask.from_shape(model.scaled(s), int(round(n_s)), mask.shape, mask.region)
    opts = dict(dual=None, **solver_options)
    c0 = solve_capacity_primal(model, mask, tol, **opts).primal
    c1 = solve_capacity_primal(scaled.model, scaled, tol, **opts).primal
    return c0, c1


class CapacitySolver(BaseEstimator):
    """Estimator wrapper: ``fit(mask)`` solves the primal and attaches the dual bound."""

    def __init__(self, tol=1e-8, max_sweeps=100_000, omega=None, dual="equilibrium"):
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.omega = omega
        self.dual = dual

    def fit(self, mask, y=None):
        res = solve_capacity_primal(
            mask.model, mask, self.tol, self.max_sweeps, self.omega, dual=self.dual
        )
        self.result_ = res
        self.capacity_ = res.primal
        self.dual_ = res.dual
        self.h_ = res.h
        return self

    def predict(self, f):
        """Dual lower bound for witness grid(s) ``f`` on the fitted mask."""
        check_is_fitted(self, "result_")
        f = np.asarray(f, dtype=float)
        mask = self.result_.mask
        if f.ndim == 2:
            return dual_capacity(mask.model, mask, f)
        return np.array([dual_capacity(mask.model, mask, g) for g in f])
