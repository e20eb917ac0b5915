"""Sampling of the cut-off Gaussian free field and the discrete GFF.

The cut-off field with band ``(lo, hi]`` is

    phi = sum_{lo < lambda_n <= hi} xi_n / sqrt(lambda_n) * psi_n

with ``xi_n`` i.i.d. standard normals indexed by the eigenpair ordinal, so a
band is a sub-stream of the seed and ``phi_L = phi_{(0, L^a]} + phi_{(L^a, L]}``
holds per seed.  Grid synthesis goes through an FFT (torus) or a type-I sine
transform (rectangle).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import CGFF_STREAM, DGFF_STREAM, standard_normals
from .surfaces import COS, SIN, TORUS, SurfaceModel, enumerate_eigenpairs
from .validation import (
    ValidationError,
    check_alpha,
    check_int,
    check_positive,
    check_seed,
    is_power_of_two,
)


@dataclass(frozen=True, eq=False)
class FieldSample:
    """One realization of a band-limited field on the model grid.

    ``values[i, j]`` is the field at ``(x_i, y_j)`` of ``model.grid_axes``.
    ``coefficients`` (when retained) holds ``xi_n`` for ordinals
    ``start, start + 1, ...`` of the basis.
    """

    model: SurfaceModel
    band: tuple
    seed: int
    resolution: int
    values: np.ndarray
    coefficients: np.ndarray = None
    start: int = 0

    @property
    def basis(self):
        return enumerate_eigenpairs(self.model, self.band[1])

    @property
    def band_slice(self):
        return self.basis.band(*self.band)

    def evaluate(self, points):
        """Direct evaluation of the spectral sum at arbitrary points."""
        if self.coefficients is None:
            raise ValidationError("sample was drawn without retaining coefficients")
        basis = self.basis
        sl = self.band_slice
        amp = self.coefficients / np.sqrt(basis.eigenvalues[sl])
        return basis.evaluate(points, index=sl) @ amp


@dataclass(frozen=True, eq=False)
class DgffSample:
    """Discrete GFF on the ``N x N`` box; the outer ring of nodes is the zero boundary."""

    N: int
    seed: int
    values: np.ndarray


def check_resolution(model, L, resolution):
    """Reject grids that cannot resolve band ``(0, L]`` without aliasing."""
    need = model.min_resolution(L)
    if resolution is None:
        return need
    resolution = check_int(resolution, "resolution", minimum=2)
    if not is_power_of_two(resolution) or resolution < need:
        raise ValidationError(
            f"resolution {resolution} cannot represent eigenvalues up to L={L} without "
            f"aliasing; use a power of two >= {need}"
        )
    return resolution


class _Plan:
    """Index bookkeeping for synthesizing ``basis[sl]`` on an ``n``-grid."""

    def __init__(self, model, L, lo, resolution):
        self.model = model
        self.resolution = n = resolution
        basis = enumerate_eigenpairs(model, L)
        self.basis = basis
        self.slice = sl = basis.band(lo, L)
        self.sqrt_lam = np.sqrt(basis.eigenvalues[sl])
        k1 = basis.k1[sl]
        k2 = basis.k2[sl]
        if model.kind == TORUS:
            par = basis.parity[sl]
            self.cos_sel = np.flatnonzero(par == COS)
            self.sin_sel = np.flatnonzero(par == SIN)
            self.cos_idx = (np.mod(k1[self.cos_sel], n), np.mod(k2[self.cos_sel], n))
            self.sin_idx = (np.mod(k1[self.sin_sel], n), np.mod(k2[self.sin_sel], n))
        else:
            self.idx = (k1 - 1, k2 - 1)

    def synthesize(self, amplitudes, workers=1):
        """Grid values of ``sum_n amplitudes[n] * psi_n``."""
        n = self.resolution
        norm = self.basis.norm
        if self.model.kind == TORUS:
            # sum a_c cos(t) + a_s sin(t) = Re sum (a_c - i a_s) e^{it}
            C = np.zeros((n, n), dtype=complex)
            C.real[self.cos_idx] = amplitudes[self.cos_sel]
            C.imag[self.sin_idx] = -amplitudes[self.sin_sel]
            out = scipy.fft.ifft2(C, workers=workers).real
            out *= norm * n * n
            return out
        C = np.zeros((n - 1, n - 1))
        C[self.idx] = amplitudes
        out = np.zeros((n + 1, n + 1))
        out[1:-1, 1:-1] = scipy.fft.dstn(C, type=1, workers=workers) * (norm / 4.0)
        return out


@lru_cache(maxsize=32)
def _plan(model, L, lo, resolution):
    return _Plan(model, L, lo, resolution)


def sample_band(model, lo, hi, seed, resolution=None, keep_coefficients=True):
    """Sample the field restricted to eigenvalues in ``(lo, hi]``."""
    hi = check_positive(hi, "L")
    lo = check_positive(lo, "band lower edge", strict=False)
    if lo > hi:
        raise ValidationError("band lower edge exceeds upper edge")
    seed = check_seed(seed)
    resolution = check_resolution(model, hi, resolution)
    plan = _plan(model, hi, lo, resolution)
    sl = plan.slice
    xi = standard_normals(seed, sl.start, sl.stop, CGFF_STREAM)
    values = plan.synthesize(xi / plan.sqrt_lam)
    return FieldSample(
        model,
        (lo, hi),
        seed,
        resolution,
        values,
        xi if keep_coefficients else None,
        sl.start,
    )


def sample_cgff(model, L, seed, resolution=None, keep_coefficients=True):
    """One realization of ``phi_L`` on the grid of the given resolution.

    ``resolution`` defaults to the smallest alias-free power of two; smaller
    grids are rejected with the required size in the message.
    """
    return sample_band(model, 0.0, L, seed, resolution, keep_coefficients)


def sample_two_scale(model, L, alpha, seed, resolution=None):
    """Split ``phi_L`` into the low band ``(0, L^alpha]`` and the high band ``(L^alpha, L]``.

    Both parts use the coefficients ``sample_cgff`` would use for the same seed,
    so ``low.values + high.values`` reproduces it up to rounding.
    """
    alpha = check_alpha(alpha)
    L = check_positive(L, "L")
    resolution = check_resolution(model, L, resolution)
    cut = L**alpha
    low = sample_band(model, 0.0, cut, seed, resolution)
    high = sample_band(model, cut, L, seed, resolution)
    return low, high


def dgff_eigenvalues(N):
    """Eigenvalues of the 4-neighbour Dirichlet Laplacian on the ``(N-2)^2`` interior."""
    M = N - 2
    c = 2.0 - 2.0 * np.cos(np.pi * np.arange(1, M + 1) / (M + 1))
    return c[:, None] + c[None, :]


def sample_dgff(N, seed):
    """Discrete GFF on ``V_N`` with zero boundary, via the discrete sine basis."""
    N = check_int(N, "N", minimum=3)
    seed = check_seed(seed)
    M = N - 2
    xi = standard_normals(seed, 0, M * M, DGFF_STREAM).reshape(M, M)
    values = np.zeros((N, N))
    values[1:-1, 1:-1] = scipy.fft.dstn(xi / np.sqrt(dgff_eigenvalues(N)), type=1, norm="ortho")
    return DgffSample(N, seed, values)


def shift_field(sample, h_coefficients, t):
    """Cameron-Martin shift of ``sample`` by ``t * h``.

    ``h = sum_n c_n psi_n / sqrt(lambda_n)`` over the sample's band.  Returns
    the shifted sample and the log density ratio
    ``-t <c, xi> - t^2 |c|^2 / 2`` evaluated at the original coefficients, so
    that ``E[exp(logw) F(shifted)] = E[F(original)]``.
    """
    if sample.coefficients is None:
        raise ValidationError("shift_field needs a sample with retained coefficients")
    c = np.asarray(h_coefficients, dtype=float)
    if c.shape != sample.coefficients.shape:
        raise ValidationError(
            f"h has {c.size} coefficients but the sample band has {sample.coefficients.size}"
        )
    t = float(t)
    xi = sample.coefficients
    log_weight = -t * float(np.dot(c, xi)) - 0.5 * t * t * float(np.dot(c, c))
    if t == 0.0:
        return sample, 0.0
    plan = _plan(sample.model, sample.band[1], sample.band[0], sample.resolution)
    h_grid = plan.synthesize(c / plan.sqrt_lam)
    shifted = FieldSample(
        sample.model,
        sample.band,
        sample.seed,
        sample.resolution,
        sample.values + t * h_grid,
        xi + t * c,
        sample.start,
    )
    return shifted, log_weight


class CGFFSampler(BaseEstimator):
    """Reusable sampler for ``phi`` restricted to a band, sklearn style.

    ``fit`` builds the basis and synthesis plan; ``transform`` maps an array of
    seeds to the stacked grids.  ``alpha`` selects the high band
    ``(L^alpha, L]`` and ``band='low'`` the low band ``(0, L^alpha]``.

    Results are independent of ``n_jobs``: every sample is a pure function of
    its seed.
    """

    def __init__(self, model="torus", L=100.0, resolution=None, alpha=None, band="full", n_jobs=1):
        self.model = model
        self.L = L
        self.resolution = resolution
        self.alpha = alpha
        self.band = band
        self.n_jobs = n_jobs

    def _band_edges(self):
        L = check_positive(self.L, "L")
        if self.band == "full":
            return 0.0, L
        alpha = check_alpha(self.alpha)
        if self.band == "low":
            return 0.0, L**alpha
        if self.band == "high":
            return L**alpha, L
        raise ValidationError(f"band must be 'full', 'low' or 'high', got {self.band!r}")

    def fit(self, X=None, y=None):
        model = self.model if isinstance(self.model, SurfaceModel) else SurfaceModel(self.model)
        lo, hi = self._band_edges()
        L = check_positive(self.L, "L")
        self.model_ = model
        self.resolution_ = check_resolution(model, L, self.resolution)
        self.band_ = (lo, hi)
        self.plan_ = _plan(model, hi, lo, self.resolution_)
        self.n_features_ = len(self.plan_.sqrt_lam)
        return self

    def coefficients(self, seed):
        check_is_fitted(self, "plan_")
        sl = self.plan_.slice
        return standard_normals(check_seed(seed), sl.start, sl.stop, CGFF_STREAM)

    def sample(self, seed):
        check_is_fitted(self, "plan_")
        xi = self.coefficients(seed)
        values = self.plan_.synthesize(xi / self.plan_.sqrt_lam)
        return FieldSample(
            self.model_, self.band_, int(seed), self.resolution_, values, xi, self.plan_.slice.start
        )

    def map(self, func, seeds):
        """Apply ``func(sample)`` to each seed's sample; results keep seed order."""
        check_is_fitted(self, "plan_")
        seeds = [int(s) for s in seeds]
        if self.n_jobs in (None, 1) or len(seeds) < 2:
            return [func(self.sample(s)) for s in seeds]
        with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
            return list(pool.map(lambda s: func(self.sample(s)), seeds))

    def transform(self, X):
        """Stack of grids, one per seed in ``X``."""
        return np.stack(self.map(lambda s: s.values, np.ravel(X)))
