import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgfflab.surfaces import (
    SurfaceModel,
    enumerate_eigenpairs,
    eval_eigenfunction,
    geodesic_distance,
    gram_matrix,
)
from cgfflab.validation import ValidationError

from oracles import lattice_eigenvalues

TORUS = SurfaceModel.torus()
RECT = SurfaceModel.rectangle()


@settings(max_examples=40, deadline=None)
@given(L=st.floats(0.5, 600), which=st.sampled_from(["torus", "rect"]), side=st.sampled_from([1.0, math.pi, 2 * math.pi, 5.0]))
def test_eigenvalues_match_lattice_enumeration(L, which, side):
    model = SurfaceModel.torus(side) if which == "torus" else SurfaceModel.rectangle(side)
    basis = enumerate_eigenpairs(model, L)
    expected = lattice_eigenvalues("torus" if which == "torus" else "rect", side, L)
    assert len(basis) == len(expected)
    np.testing.assert_allclose(basis.eigenvalues, expected, rtol=1e-12)


def test_small_cutoffs():
    assert len(enumerate_eigenpairs(TORUS, 1.0)) == 4
    assert len(enumerate_eigenpairs(RECT, 2.0)) == 1
    assert len(enumerate_eigenpairs(TORUS, 0.5)) == 0


def test_basis_is_sorted_and_positive():
    b = enumerate_eigenpairs(TORUS, 300)
    assert np.all(np.diff(b.eigenvalues) >= 0)
    assert np.all(b.eigenvalues > 0)


def test_vectorized_evaluation_matches_single_pairs():
    rng = np.random.default_rng(0)
    for model in (TORUS, RECT):
        b = enumerate_eigenpairs(model, 60)
        pts = rng.uniform(0, model.sides[0], size=(7, 2))
        M = b.evaluate(pts)
        for n in range(len(b)):
            for i, p in enumerate(pts):
                assert M[i, n] == pytest.approx(eval_eigenfunction(b[n], p), abs=1e-13)


@pytest.mark.parametrize("model", [TORUS, RECT], ids=["torus", "rect"])
def test_gram_matrix_identity_small(model):
    b = enumerate_eigenpairs(model, 80)
    G = gram_matrix(b, len(b), 128)
    assert np.abs(G - np.eye(len(b))).max() < 1e-12


@pytest.mark.parametrize("model", [TORUS, RECT], ids=["torus", "rect"])
def test_eigen_equation_via_derivatives(model):
    b = enumerate_eigenpairs(model, 40)
    pts = np.array([[0.3, 1.1], [2.0, 0.7]])
    lap = b.evaluate(pts, (2, 0)) + b.evaluate(pts, (0, 2))
    np.testing.assert_allclose(-lap, b.evaluate(pts) * b.eigenvalues, atol=1e-11)


def test_derivative_matches_finite_difference():
    b = enumerate_eigenpairs(TORUS, 30)
    p = np.array([[0.4, 0.9]])
    h = 1e-6
    fd = (b.evaluate(p + [h, 0]) - b.evaluate(p - [h, 0])) / (2 * h)
    np.testing.assert_allclose(b.evaluate(p, (1, 0)), fd, atol=1e-7)


def test_geodesic_examples():
    assert geodesic_distance(TORUS, [0.05, 0.0], [2 * math.pi - 0.05, 0.0]) == pytest.approx(0.1)
    assert geodesic_distance(RECT, [0.1, 0.2], [0.4, 0.6]) == pytest.approx(0.5)


pt = st.tuples(st.floats(0, 2 * math.pi, allow_nan=False), st.floats(0, 2 * math.pi, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(p=pt, q=pt, r=pt)
def test_torus_distance_is_a_metric(p, q, r):
    d = lambda a, b: geodesic_distance(TORUS, a, b)
    assert d(p, q) == pytest.approx(d(q, p), abs=1e-12)
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-12
    assert d(p, q) <= math.pi * math.sqrt(2) + 1e-12


@pytest.mark.parametrize("L", [25, 16, 100, 1e4])
def test_min_resolution_resolves_every_mode(L):
    for model in (TORUS, RECT):
        n = model.min_resolution(L)
        b = enumerate_eigenpairs(model, L)
        assert n & (n - 1) == 0
        if model is TORUS:
            assert np.abs(b.k1).max() < n / 2 and np.abs(b.k2).max() < n / 2
        else:
            assert b.k1.max() < n and b.k2.max() < n
        assert n >= 2 * math.ceil(math.sqrt(L)) * model.sides[0] / (2 * math.pi)


def test_min_resolution_examples():
    assert TORUS.min_resolution(25) == 16
    assert TORUS.min_resolution(1e5) == 1024
    assert RECT.min_resolution(25) == 8


def test_reduce():
    out = TORUS.reduce([[7.0, -1.0]])
    np.testing.assert_allclose(out, [[7.0 - 2 * math.pi, 2 * math.pi - 1.0]])
    with pytest.raises(ValidationError):
        RECT.reduce([[4.0, 1.0]])


def test_invalid_cutoff_rejected():
    with pytest.raises(ValidationError):
        enumerate_eigenpairs(TORUS, -1.0)
