"""Monte Carlo estimators and exact checks built on the field and kernel layers.

Every estimator is a pure function of ``(seed, n)``: replicate ``i`` uses
``derive_seed(seed, i)`` and reductions run in replicate order with
``math.fsum``, so results do not depend on ``n_jobs``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import time

import numpy as np
from scipy.stats import norm

from ._rng import CGFF_STREAM, derive_seed, standard_normals
from .capacity import _inner_products, solve_capacity_primal
from .fields import _plan, check_resolution, sample_cgff
from .kernels import band_covariance, covariance, ln_plus
from .surfaces import TORUS, enumerate_eigenpairs, geodesic_distance
from .validation import ValidationError, check_alpha, check_int, check_positive, check_seed

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
ESS_FLOOR = 50


# confidence intervals -------------------------------------------------------


def wilson_interval(hits, n, level=0.95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValidationError("n must be positive")
    z = norm.ppf(0.5 + level / 2)
    p = hits / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == n else min(1.0, centre + half)
    return lo, hi


def zero_hit_upper(n, level=0.95):
    """One-sided upper bound when no hits were seen: ``1 - (1 - level)^(1/n)``."""
    return 1.0 - (1.0 - level) ** (1.0 / n)


def weighted_interval(values, level=0.95):
    """Estimate, delta-method CI on the log scale, and effective sample size.

    ``values`` are the per-replicate products weight x indicator.  Returns
    ``(estimate, (lo, hi), ess, low_ess)``.  When the effective sample size
    falls below ``ESS_FLOOR`` the log-scale standard error is inflated to at
    least ``1/sqrt(ess)`` times ``sqrt(ESS_FLOOR/ess)`` and ``low_ess`` is set.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    s1 = math.fsum(v)
    est = s1 / n
    if s1 <= 0:
        return 0.0, (0.0, float("nan")), 0.0, True
    s2 = math.fsum(v * v)
    ess = s1 * s1 / s2
    var = max(s2 / n - est * est, 0.0) * n / max(n - 1, 1)
    se_log = math.sqrt(var / n) / est
    low = ess < ESS_FLOOR
    if low:
        se_log = max(se_log, 1.0 / math.sqrt(ess)) * math.sqrt(ESS_FLOOR / ess)
    z = norm.ppf(0.5 + level / 2)
    return est, (est * math.exp(-z * se_log), est * math.exp(z * se_log)), ess, low


@dataclass
class TailEstimate:
    """Probability estimate of a field event with its interval and rescaled log.

    ``log_statistic`` is ``ln(estimate) / ln(sqrt L)^2`` for hole events and
    ``median(sup) / ln(sqrt L)`` for sup events.
    """

    event: str
    L: float
    n: int
    estimate: float
    ci: tuple
    log_statistic: float
    method: str
    hits: int = None
    ess: float = None
    flags: tuple = ()
    details: dict = field(default_factory=dict)

    def as_row(self):
        return {
            "event": self.event,
            "L": self.L,
            "n": self.n,
            "method": self.method,
            "estimate": self.estimate,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "log_statistic": self.log_statistic,
            "hits": "" if self.hits is None else self.hits,
            "ess": "" if self.ess is None else self.ess,
            "flags": ";".join(self.flags),
        }


def _map(func, items, n_jobs):
    if n_jobs in (None, 1) or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, items))


# supremum --------------------------------------------------------------------


def sup_inf_samples(model, L, n, seed, resolution=None, oversample=2, n_jobs=1):
    """Grid max and min of ``n`` independent samples of ``phi_L``.

    The default grid is ``oversample`` times the alias-free minimum, which
    shrinks the gap between the grid maximum and the true supremum.
    """
    n = check_int(n, "n", minimum=1)
    seed = check_seed(seed)
    if resolution is None:
        resolution = oversample * model.min_resolution(L)
    resolution = check_resolution(model, L, resolution)

    def one(i):
        v = sample_cgff(model, L, derive_seed(seed, i), resolution, keep_coefficients=False).values
        return v.max(), v.min()

    out = np.array(_map(one, list(range(n)), n_jobs))
    return out[:, 0], out[:, 1]


def estimate_sup_tail(model, L, threshold, n, seed, resolution=None, oversample=2, n_jobs=1):
    """Fraction of samples whose grid maximum exceeds ``threshold``."""
    n = check_int(n, "n", minimum=100)
    L = check_positive(L, "L")
    sups, infs = sup_inf_samples(model, L, n, seed, resolution, oversample, n_jobs)
    hits = int(np.count_nonzero(sups > threshold))
    log_scale = math.log(math.sqrt(L))
    median = float(np.median(sups))
    return TailEstimate(
        event=f"sup > {threshold:.17g}",
        L=L,
        n=n,
        estimate=hits / n,
        ci=wilson_interval(hits, n),
        log_statistic=median / log_scale if log_scale > 0 else float("nan"),
        method="plain",
        hits=hits,
        details={"sups": sups, "infs": infs, "median_sup": median},
    )


def sup_growth_slope(Ls, medians):
    """Least-squares slope of median sup against ``ln sqrt L``."""
    x = np.log(np.sqrt(np.asarray(Ls, dtype=float)))
    return float(np.polyfit(x, np.asarray(medians, dtype=float), 1)[0])


# hole probability ------------------------------------------------------------


def hole_resolution(model, L):
    """Grid used for positivity checks: four times the alias-free minimum."""
    return 4 * model.min_resolution(L)


def capacity_coefficients(model, L, h):
    """Coefficients ``c_n = sqrt(lambda_n) <h, psi_n>`` of the projection of h onto band ``(0, L]``.

    With these, ``h_L = sum c_n psi_n / sqrt(lambda_n)`` is the form
    ``shift_field`` expects.
    """
    c, lam, _ = _inner_products(model, h, L)
    return np.sqrt(lam) * c


def estimate_hole_probability(
    model,
    L,
    mask,
    n,
    seed,
    method="plain",
    h=None,
    t=None,
    batch=2000,
    n_jobs=1,
):
    """Estimate ``P(phi_L > 0 at every grid node of D)``.

    ``plain`` counts hits directly.  ``importance`` shifts each sample by
    ``t h_L`` with ``h_L`` the band projection of the capacity minimizer ``h``
    (solved on ``mask`` when not given) and ``t = sqrt(2/pi) ln sqrt L``, then
    averages weight times indicator.

    The field is evaluated at the D nodes only, from the coefficients, which
    is exact and far cheaper than whole-grid synthesis.
    """
    L = check_positive(L, "L")
    n = check_int(n, "n", minimum=1)
    seed = check_seed(seed)
    if method not in ("plain", "importance"):
        raise ValidationError(f"method must be 'plain' or 'importance', got {method!r}")
    if mask.model != model:
        raise ValidationError("mask was built for a different model")
    mask.validate()
    need = hole_resolution(model, L)
    if mask.resolution < need:
        raise ValidationError(
            f"hole runs need resolution >= {need} (4x alias-free) but the mask uses {mask.resolution}"
        )
    basis = enumerate_eigenpairs(model, L)
    m = len(basis)
    pts = model.grid_points(mask.resolution)[mask.inside.ravel()]
    # field at D nodes = xi @ design
    design = (basis.evaluate(pts) / np.sqrt(basis.eigenvalues)).T
    log_scale = math.log(math.sqrt(L))

    shift = None
    c = None
    if method == "importance":
        t = SQRT_2_OVER_PI * log_scale if t is None else float(t)
        if h is None:
            h = solve_capacity_primal(model, mask, dual=None).h
        elif hasattr(h, "h"):
            h = h.h
        c = capacity_coefficients(model, L, np.asarray(h, dtype=float))
        shift = t * (c @ design)

    def run_batch(start):
        stop = min(start + batch, n)
        xi = np.stack(
            [standard_normals(derive_seed(seed, i), 0, m, CGFF_STREAM) for i in range(start, stop)]
        )
        vals = xi @ design
        if shift is None:
            return np.all(vals > 0, axis=1), None
        ok = np.all(vals + shift > 0, axis=1)
        logw = -t * (xi @ c) - 0.5 * t * t * float(c @ c)
        return ok, logw

    parts = _map(run_batch, list(range(0, n, batch)), n_jobs)
    ok = np.concatenate([p[0] for p in parts])
    hits = int(ok.sum())
    flags = []
    if method == "plain":
        est = hits / n
        if hits == 0:
            ci = (0.0, zero_hit_upper(n))
            flags.append("use importance")
        else:
            ci = wilson_interval(hits, n)
        ess = None
    else:
        logw = np.concatenate([p[1] for p in parts])
        est, ci, ess, low = weighted_interval(np.where(ok, np.exp(logw), 0.0))
        if low:
            flags.append("low effective sample size")
        if hits == 0:
            flags.append("no hits under the shifted law")
    stat = math.log(est) / log_scale**2 if est > 0 else float("-inf")
    details = {"nodes": int(mask.inside.sum()), "modes": m}
    if c is not None:
        details.update(t=t, h_energy=float(c @ c) / 2)
    return TailEstimate(
        event="phi > 0 on D",
        L=L,
        n=n,
        estimate=est,
        ci=ci,
        log_statistic=stat,
        method=method,
        hits=hits,
        ess=ess,
        flags=tuple(flags),
        details=details,
    )


# lattice embedding -----------------------------------------------------------


@dataclass(frozen=True)
class BoxEmbedding:
    """Affine map of the lattice box ``{0..N-1}^2`` into the surface.

    ``x -> origin + (delta / sqrt L) x``.  ``ratio_range`` is the observed
    range of ``sqrt L d_g(i(x), i(y)) / |x - y|`` and ``exhaustive`` tells
    whether every pair was checked.
    """

    model: object
    delta: float
    alpha: float
    L: float
    N: int
    origin: tuple
    ratio_range: tuple
    pairs_checked: int
    exhaustive: bool

    @property
    def spacing(self):
        return self.delta / math.sqrt(self.L)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.origin) + self.spacing * x

    def ratio(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        d = np.atleast_1d(geodesic_distance(self.model, self(x), self(y)))
        return math.sqrt(self.L) * d / np.linalg.norm(x - y, axis=1)


def _ratio_check(emb, exhaustive_limit, n_random, rng_seed):
    N = emb.N
    if N < 2:
        return (emb.delta, emb.delta), 0, True
    if N <= exhaustive_limit:
        g = np.stack(np.meshgrid(np.arange(N), np.arange(N), indexing="ij"), -1).reshape(-1, 2)
        lo, hi, count = math.inf, -math.inf, 0
        for i in range(len(g) - 1):
            r = emb.ratio(np.repeat(g[i : i + 1], len(g) - i - 1, 0), g[i + 1 :])
            lo, hi, count = min(lo, r.min()), max(hi, r.max()), count + len(r)
        return (float(lo), float(hi)), count, True
    rng = np.random.default_rng(rng_seed)
    x = rng.integers(0, N, size=(n_random, 2))
    y = rng.integers(0, N, size=(n_random, 2))
    same = np.all(x == y, axis=1)
    y[same, 0] = (y[same, 0] + 1) % N
    r = emb.ratio(x, y)
    return (float(r.min()), float(r.max())), n_random, False


def embed_box(model, delta, alpha, L, origin=None, exhaustive_limit=64, n_random=10_000, rng_seed=0):
    """Build and verify the lattice embedding at spacing ``delta / sqrt L``.

    The box side is ``floor(L^((1 - alpha) / 2))``.  On the torus the box must
    span less than half a period so distances do not wrap; on the rectangle it
    must fit inside.  The default origin centres the box.
    """
    delta = float(delta)
    if not 0 < delta < 1 / (2 * math.sqrt(2)):
        raise ValidationError("delta must lie in (0, 1/(2 sqrt 2))")
    alpha = check_alpha(alpha, allow_zero=True)
    L = check_positive(L, "L")
    N = max(1, int(math.floor(L ** ((1 - alpha) / 2) + 1e-9)))
    extent = (N - 1) * delta / math.sqrt(L)
    a, b = model.sides
    if model.kind == TORUS:
        if extent >= min(a, b) / 2:
            raise ValidationError(
                f"box extent {extent:.4g} reaches half the torus period; distances would wrap"
            )
    elif extent > min(a, b):
        raise ValidationError(f"box extent {extent:.4g} does not fit in the rectangle")
    if origin is None:
        origin = ((a - extent) / 2, (b - extent) / 2)
    origin = tuple(float(v) for v in origin)
    if model.kind != TORUS:
        model.reduce([origin, (origin[0] + extent, origin[1] + extent)])
    emb = BoxEmbedding(model, delta, alpha, L, N, origin, (math.nan, math.nan), 0, False)
    rr, count, exh = _ratio_check(emb, exhaustive_limit, n_random, rng_seed)
    emb = BoxEmbedding(model, delta, alpha, L, N, origin, rr, count, exh)
    if not (delta / 2 <= rr[0] and rr[1] <= 2 * delta):
        raise ValidationError(f"distance ratios {rr} leave [delta/2, 2 delta]")
    return emb


@dataclass
class LogCorrelationReport:
    """Exact band covariance on lattice pairs against the log-correlated form."""

    L: float
    alpha: float
    offsets: np.ndarray
    cov: np.ndarray
    predicted: np.ndarray
    residual: np.ndarray
    rescaled_residual: np.ndarray = None

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.residual)))

    @property
    def mean_abs(self):
        return float(np.mean(np.abs(self.residual)))


def check_log_correlated(model, L, alpha, embedding, pairs):
    """Residual ``|C(x, y) - (1-alpha)/(2 pi) ln sqrt L + ln_+|x - y| / (2 pi)|`` per lattice pair.

    ``C`` is the exact covariance of the band ``(L^alpha, L]`` (the whole field
    for ``alpha = 0``).  For ``alpha = 0`` the report also carries residuals
    of ``X = sqrt(2 pi) phi_L`` against ``ln t - ln_+|x - y|`` with ``t = sqrt L``.
    """
    alpha = check_alpha(alpha, allow_zero=True)
    if abs(embedding.L - L) > 1e-12 * L or abs(embedding.alpha - alpha) > 1e-15:
        raise ValidationError("embedding was built for a different (L, alpha)")
    x, y = pairs
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    P, Q = embedding(x), embedding(y)
    if alpha == 0:
        cov = np.atleast_1d(covariance(model, L, P, Q))
    else:
        cov = np.atleast_1d(band_covariance(model, L, alpha, P, Q))
    offset = np.linalg.norm(x - y, axis=1)
    pred = ((1 - alpha) * math.log(math.sqrt(L)) - ln_plus(offset)) / (2 * math.pi)
    res = np.abs(cov - pred)
    rescaled = 2 * math.pi * res if alpha == 0 else None
    return LogCorrelationReport(L, alpha, offset, cov, pred, res, rescaled)


# low band statistics ------------------------------------------------------------


def low_point_area(low, mask, eta, L):
    """Area of D where the low-band field lies below ``(sqrt(2/pi) - eta) ln sqrt L``."""
    if low.resolution != mask.resolution or low.model != mask.model:
        raise ValidationError("field and mask must share model and resolution")
    thr = (SQRT_2_OVER_PI - float(eta)) * math.log(math.sqrt(check_positive(L, "L")))
    count = int(np.count_nonzero(mask.inside & (low.values < thr)))
    return count * mask.model.cell_area(mask.resolution)


def modulus_of_continuity(low, delta, alpha, L):
    """Largest ``|phi(p) - phi(q)|`` over grid pairs with ``d_g(p, q) <= delta L^(-alpha/2)``.

    The grid must resolve the scale ``L^(-alpha/2)``: spacing at most a quarter
    of it.  A radius below the grid spacing admits no pairs and gives 0.
    """
    delta = check_positive(delta, "delta", strict=False)
    alpha = check_alpha(alpha, allow_zero=True)
    L = check_positive(L, "L")
    model = low.model
    hx, hy = model.grid_spacing(low.resolution)
    scale = L ** (-alpha / 2)
    if max(hx, hy) > scale / 4:
        raise ValidationError(
            f"grid spacing {max(hx, hy):.4g} is too coarse for the scale {scale:.4g}"
        )
    r = delta * scale
    v = low.values
    best = 0.0
    kx, ky = int(r / hx), int(r / hy)
    for di in range(0, kx + 1):
        for dj in range(-ky, ky + 1):
            if (di == 0 and dj <= 0) or (di * hx) ** 2 + (dj * hy) ** 2 > r * r:
                continue
            if model.kind == TORUS:
                diff = np.roll(v, (-di, -dj), axis=(0, 1)) - v
            else:
                a = v[di:, max(dj, 0) : v.shape[1] + min(dj, 0)]
                b = v[: v.shape[0] - di, max(-dj, 0) : v.shape[1] - max(dj, 0)]
                diff = a - b
            best = max(best, float(np.abs(diff).max()))
    return best


# synthesis benchmark -------------------------------------------------------------


def synthesis_benchmark(model, L, n, seed, resolution=None, n_jobs=1):
    """Wall time to synthesize ``n`` samples, and order-independent aggregate statistics."""
    resolution = check_resolution(model, L, resolution)
    plan = _plan(model, L, 0.0, resolution)
    sl = plan.slice

    def one(i):
        xi = standard_normals(derive_seed(seed, i), sl.start, sl.stop, CGFF_STREAM)
        v = plan.synthesize(xi / plan.sqrt_lam)
        return v.max(), math.fsum(v.ravel() ** 2) / v.size

    start = time.perf_counter()
    out = _map(one, list(range(n)), n_jobs)
    elapsed = time.perf_counter() - start
    stats = {
        "mean_max": math.fsum(o[0] for o in out) / n,
        "mean_square": math.fsum(o[1] for o in out) / n,
    }
    return elapsed, stats
