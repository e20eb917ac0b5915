import math

import numpy as np
import pytest
from scipy.stats import ks_2samp
from sklearn.base import clone

from cgfflab._rng import DGFF_STREAM, derive_seed, standard_normals
from cgfflab.fields import (
    CGFFSampler,
    check_resolution,
    sample_band,
    sample_cgff,
    sample_dgff,
    sample_two_scale,
    shift_field,
)
from cgfflab.kernels import covariance
from cgfflab.surfaces import SurfaceModel, enumerate_eigenpairs
from cgfflab.validation import ValidationError

from oracles import dense_grid_laplacian, gaussian_tail, naive_field

TORUS = SurfaceModel.torus()
RECT = SurfaceModel.rectangle()


@pytest.mark.parametrize("L", [1.5, 12.0, 50.0])
@pytest.mark.parametrize("which", ["torus", "rect"])
def test_fast_synthesis_equals_naive_sum(L, which):
    model = TORUS if which == "torus" else RECT
    s = sample_cgff(model, L, 11)
    pts = model.grid_points(s.resolution)
    ref = naive_field(which, model.sides[0], L, s.coefficients, pts)
    scale = np.abs(ref).max()
    assert np.abs(s.values.ravel() - ref).max() <= 1e-10 * scale


def test_direct_evaluation_matches_grid():
    s = sample_cgff(TORUS, 200, 4)
    pts = TORUS.grid_points(s.resolution)[::37]
    np.testing.assert_allclose(s.evaluate(pts), s.values.ravel()[::37], atol=1e-12)


def test_determinism_and_seed_sensitivity():
    a = sample_cgff(TORUS, 100, 9)
    b = sample_cgff(TORUS, 100, 9)
    c = sample_cgff(TORUS, 100, 10)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_torus_grid_mean_vanishes():
    s = sample_cgff(TORUS, 400, 1)
    assert abs(s.values.mean()) < 1e-12


def test_rectangle_boundary_is_zero():
    s = sample_cgff(RECT, 100, 2)
    assert np.all(s.values[0] == 0) and np.all(s.values[:, -1] == 0)


def test_coarse_resolution_rejected_with_suggestion():
    with pytest.raises(ValidationError, match="power of two >= 16"):
        sample_cgff(TORUS, 25, 0, resolution=8)
    with pytest.raises(ValidationError):
        check_resolution(TORUS, 25, 24)


def test_two_scale_is_exact_split():
    low, high = sample_two_scale(TORUS, 2000, 0.5, 77)
    full = sample_cgff(TORUS, 2000, 77)
    assert np.array_equal(np.concatenate([low.coefficients, high.coefficients]), full.coefficients)
    err = np.abs(low.values + high.values - full.values).max()
    assert err <= 1e-12 * np.abs(full.values).max()


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
def test_two_scale_rejects_bad_alpha(alpha):
    with pytest.raises(ValidationError, match=r"\(0, 1\)"):
        sample_two_scale(TORUS, 100, alpha, 0)


def _point_values(model, lo, hi, p, seeds):
    b = enumerate_eigenpairs(model, hi)
    sl = b.band(lo, hi)
    row = (b.evaluate(np.atleast_2d(p), index=sl) / np.sqrt(b.eigenvalues[sl]))[0]
    xi = np.stack([standard_normals(s, sl.start, sl.stop) for s in seeds])
    return xi @ row


def test_band_variance_and_independence():
    L, alpha = 100.0, 0.5
    seeds = [derive_seed(5, i) for i in range(10_000)]
    p, q = np.array([1.0, 2.0]), np.array([1.3, 2.4])
    hi_p = _point_values(TORUS, L**alpha, L, p, seeds)
    lo_q = _point_values(TORUS, 0, L**alpha, q, seeds)
    target = covariance(TORUS, L, p, p) - covariance(TORUS, L**alpha, p, p)
    se = np.sqrt(np.var(hi_p**2) / len(seeds))
    assert abs(np.mean(hi_p**2) - target) < 3 * se
    prod = hi_p * lo_q
    assert abs(prod.mean()) < 3 * prod.std() / math.sqrt(len(seeds))


def test_sign_symmetry_of_extremes():
    sampler = CGFFSampler(L=100.0).fit()
    ext = np.array(sampler.map(lambda s: (s.values.max(), -s.values.min()), range(400)))
    assert ks_2samp(ext[:, 0], ext[:, 1]).pvalue > 1e-3


def test_dgff_boundary_and_size():
    d = sample_dgff(9, 3)
    v = d.values
    assert v.shape == (9, 9)
    assert np.all(v[0] == 0) and np.all(v[-1] == 0) and np.all(v[:, 0] == 0) and np.all(v[:, -1] == 0)
    with pytest.raises(ValidationError):
        sample_dgff(2, 0)


def test_dgff_synthesis_is_explicit_sine_expansion():
    N, seed = 7, 21
    M = N - 2
    j = np.arange(1, M + 1)
    S = math.sqrt(2 / (M + 1)) * np.sin(np.pi * np.outer(j, j) / (M + 1))
    mu1 = 2 - 2 * np.cos(np.pi * j / (M + 1))
    mu = mu1[:, None] + mu1[None, :]
    xi = standard_normals(seed, 0, M * M, DGFF_STREAM).reshape(M, M)
    expected = S @ (xi / np.sqrt(mu)) @ S.T
    np.testing.assert_allclose(sample_dgff(N, seed).values[1:-1, 1:-1], expected, atol=1e-12)
    # and the sine basis diagonalizes the Dirichlet Laplacian, so the covariance is its inverse
    A = dense_grid_laplacian((M, M), 1.0, 1.0, False)
    A += np.diag(4 - np.diag(A))
    SS = np.kron(S, S)
    np.testing.assert_allclose(SS @ np.diag(mu.ravel()) @ SS.T, A, atol=1e-12)


def test_shift_identity_at_zero():
    s = sample_cgff(TORUS, 25, 3)
    c = np.ones_like(s.coefficients)
    shifted, lw = shift_field(s, c, 0.0)
    assert shifted is s and lw == 0.0


def test_shift_adds_function_and_weight_formula():
    s = sample_cgff(TORUS, 25, 3)
    rng = np.random.default_rng(0)
    c = rng.normal(size=s.coefficients.shape)
    shifted, lw = shift_field(s, c, 0.7)
    b = s.basis
    pts = TORUS.grid_points(s.resolution)[::5]
    h = b.evaluate(pts) @ (c / np.sqrt(b.eigenvalues))
    np.testing.assert_allclose(shifted.values.ravel()[::5] - s.values.ravel()[::5], 0.7 * h, atol=1e-12)
    assert lw == pytest.approx(-0.7 * c @ s.coefficients - 0.5 * 0.49 * c @ c)
    with pytest.raises(ValidationError):
        shift_field(s, c[:-1], 1.0)


def test_weight_has_unit_mean():
    sampler = CGFFSampler(L=25.0).fit()
    c = np.zeros(sampler.n_features_)
    c[:3] = [0.5, -0.3, 0.2]
    w = np.array([math.exp(-1.0 * c @ sampler.coefficients(s) - 0.5 * c @ c) for s in range(10_000)])
    assert abs(w.mean() - 1) < 3 * w.std() / math.sqrt(len(w))


def test_shifted_tail_estimate_agrees_with_plain_and_closed_form():
    L = 25.0
    p0 = np.array([1.0, 1.0])
    b = enumerate_eigenpairs(TORUS, L)
    row = (b.evaluate(p0[None]) / np.sqrt(b.eigenvalues))[0]
    var = float(row @ row)
    a = 2.0 * math.sqrt(var)
    n = 10_000
    xi = np.stack([standard_normals(derive_seed(8, i), 0, len(b)) for i in range(n)])
    plain = (xi @ row > a).astype(float)
    # shift along h = G_L(p0, .) / sqrt(var): the unit-norm direction of largest variance at p0
    c = row / math.sqrt(var)
    t = a / math.sqrt(var)
    shifted = xi + t * c
    w = np.exp(-t * (xi @ c) - 0.5 * t * t) * (shifted @ row > a)
    exact = gaussian_tail(a, var)
    for est, sd in ((plain.mean(), plain.std()), (w.mean(), w.std())):
        assert abs(est - exact) < 3 * sd / math.sqrt(n)
    # overlapping 95% intervals
    assert abs(plain.mean() - w.mean()) < 1.96 * (plain.std() + w.std()) / math.sqrt(n)
    assert w.std() < plain.std()


def test_sampler_estimator_api():
    est = CGFFSampler(L=50.0, alpha=0.5, band="high")
    assert est.get_params()["alpha"] == 0.5
    twin = clone(est).set_params(band="low").fit()
    est.fit()
    X = est.transform([1, 2])
    assert X.shape == (2, est.resolution_, est.resolution_)
    low = twin.transform([1, 2])
    full = sample_cgff(TORUS, 50.0, 1, est.resolution_).values
    assert np.abs(X[0] + low[0] - full).max() < 1e-12


def test_sampler_map_is_worker_invariant():
    est = CGFFSampler(L=400.0).fit()
    a = est.map(lambda s: s.values.max(), range(12))
    est.set_params(n_jobs=4)
    b = est.map(lambda s: s.values.max(), range(12))
    assert a == b


def test_sampler_rejects_bad_band():
    with pytest.raises(ValidationError):
        CGFFSampler(band="middle", alpha=0.5).fit()


def test_band_edges_validated():
    with pytest.raises(ValidationError):
        sample_band(TORUS, 10, 5, 0)
