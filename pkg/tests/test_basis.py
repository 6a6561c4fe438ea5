import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funcdp.basis import (
    Basis,
    BoxDomain,
    analyze,
    build_basis,
    gradient,
    graded_lex_indices,
    hessian,
    l2_norm,
    monomial_moment,
    synthesize,
)
from funcdp.errors import DomainError
from funcdp.optim import LogisticObjective
from funcdp.regularity import smoothen_truncate

from oracles import independent_eval, independent_quadrature


def test_monomial_moments_closed_form():
    line = BoxDomain((-1.0,), (1.0,))
    assert monomial_moment(line, (0,), (0,)) == 2.0
    assert monomial_moment(line, (1,), (0,)) == 0.0
    sq = BoxDomain.cube(5.0)
    expected = (2 * 5**3 / 3) * 10
    assert monomial_moment(sq, (2, 0), (0, 0)) == pytest.approx(expected, rel=1e-15)
    pts, W = independent_quadrature(sq, 6)
    assert np.sum(W * pts[:, 0] ** 2) == pytest.approx(expected, rel=1e-12)


def test_graded_lex_order():
    idx = graded_lex_indices(2, 2)
    assert idx == [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]


@pytest.mark.parametrize("degree,dim", [(2, 6), (4, 15), (6, 28), (14, 120)])
def test_dimensions(square, degree, dim):
    assert build_basis(square, degree).dim == dim


def test_hand_gram_schmidt_on_interval():
    B = build_basis(BoxDomain((-1.0,), (1.0,)), 1)
    x = np.array([[-0.7], [0.0], [0.4]])
    E = B.eval_matrix(x)
    np.testing.assert_allclose(E[:, 0], 1 / math.sqrt(2), rtol=1e-15)
    np.testing.assert_allclose(E[:, 1], math.sqrt(1.5) * x[:, 0], rtol=1e-14, atol=1e-16)


def test_degree14_orthonormal_under_independent_quadrature(basis14):
    pts, W = independent_quadrature(basis14.domain, 20)
    E = independent_eval(basis14, pts)
    G = E.T @ (W[:, None] * E)
    assert np.max(np.abs(G - np.eye(basis14.dim))) < 1e-8


def test_ortho_matrix_lower_triangular(basis6):
    R = basis6.ortho_matrix
    assert np.all(np.triu(R, 1) == 0)
    assert np.all(np.diag(R) > 0)


def test_constant_function(basis6):
    c = np.zeros(basis6.dim)
    c[0] = 1.0
    x = np.random.default_rng(0).uniform(-5, 5, (20, 2))
    np.testing.assert_allclose(synthesize(basis6, c, x), 0.1, rtol=1e-14)


def test_zero_function(basis6):
    c = np.zeros(basis6.dim)
    x = np.array([1.0, -2.0])
    assert synthesize(basis6, c, x) == 0.0
    assert np.all(gradient(basis6, c, x) == 0)
    assert np.all(hessian(basis6, c, x) == 0)


def test_synthesize_matches_independent_evaluation(basis14):
    rng = np.random.default_rng(1)
    x = rng.uniform(-5, 5, (50, 2))
    for _ in range(5):
        c = rng.normal(size=basis14.dim)
        expected = independent_eval(basis14, x) @ c
        np.testing.assert_allclose(synthesize(basis14, c, x), expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())


def test_derivatives_match_finite_differences(basis6):
    rng = np.random.default_rng(2)
    c = rng.normal(size=basis6.dim)
    x = rng.uniform(-4, 4, 2)
    h = 1e-5
    fd = np.array([(synthesize(basis6, c, x + h * e) - synthesize(basis6, c, x - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(gradient(basis6, c, x), fd, rtol=1e-6)
    fdH = np.array([(gradient(basis6, c, x + h * e) - gradient(basis6, c, x - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(hessian(basis6, c, x), fdH, rtol=1e-6)


def test_evaluation_outside_domain_raises(basis6):
    with pytest.raises(DomainError):
        synthesize(basis6, np.ones(basis6.dim), [6.0, 0.0])


def test_analyze_recovers_basis_elements(basis6):
    for k in (0, 3, 27):
        col = np.eye(basis6.dim)[k]
        c = analyze(basis6, lambda x, col=col: synthesize(basis6, col, x))
        np.testing.assert_allclose(c, col, atol=1e-12)
    np.testing.assert_array_equal(analyze(basis6, lambda x: np.zeros(len(x))), 0.0)


def test_analyze_logistic_is_near_best_approximation(basis6, basis14):
    obj = LogisticObjective(np.array([[0.3, 0.8]]), np.array([1.0]), 0.01)
    c6 = analyze(basis6, obj.value)
    c14 = analyze(basis14, obj.value)
    x = np.random.default_rng(3).uniform(-5, 5, (100, 2))
    f = obj.value(x)
    err6 = np.linalg.norm(synthesize(basis6, c6, x) - f) / np.linalg.norm(f)
    # the degree-14 tail is the approximation error the degree-6 projection must not exceed
    K = basis14.truncation_dim(6)
    tail = np.linalg.norm(c14[K:]) / np.linalg.norm(c14)
    np.testing.assert_allclose(c6, c14[:K], atol=1e-9 * np.linalg.norm(c14))
    assert err6 < 3 * tail


def test_parseval(basis14):
    rng = np.random.default_rng(4)
    for _ in range(100):
        c = rng.normal(size=basis14.dim) / np.arange(1, basis14.dim + 1)
        norm = l2_norm(basis14.domain, lambda x: synthesize(basis14, c, x), quad_order=20)
        assert abs(norm - np.linalg.norm(c)) <= 1e-9 * np.linalg.norm(c)


def test_truncation_distance_two_ways(basis14):
    c = np.random.default_rng(5).normal(size=basis14.dim)
    kept, dist = smoothen_truncate(basis14, c, 6)
    quad = l2_norm(basis14.domain, lambda x: synthesize(basis14, c - kept, x), quad_order=20)
    assert abs(dist - quad) <= 1e-9 * dist


def test_serialization_round_trip(tmp_path, basis6):
    path = tmp_path / "b.json"
    basis6.save(path)
    again = Basis.load(path)
    np.testing.assert_array_equal(again.ortho_matrix, basis6.ortho_matrix)
    assert again.index_map == basis6.index_map


@settings(max_examples=25, deadline=None)
@given(
    lo=st.floats(-3, 2),
    width=st.floats(0.5, 4),
    degree=st.integers(0, 5),
)
def test_orthonormal_on_arbitrary_boxes(lo, width, degree):
    D = BoxDomain((lo, -width), (lo + width, 2 * width))
    B = build_basis(D, degree)
    pts, W = independent_quadrature(D, degree + 4)
    E = independent_eval(B, pts)
    assert np.max(np.abs(E.T @ (W[:, None] * E) - np.eye(B.dim))) < 1e-10


def test_round_trip_and_linearity(basis6):
    rng = np.random.default_rng(6)
    c, d = rng.normal(size=(2, basis6.dim))
    back = analyze(basis6, lambda x: synthesize(basis6, c, x))
    np.testing.assert_allclose(back, c, atol=1e-9 * np.linalg.norm(c))
    f = lambda x: np.exp(0.1 * x[:, 0]) * np.cos(0.2 * x[:, 1])
    g = lambda x: np.log1p(x[:, 0] ** 2 + x[:, 1] ** 2)
    lhs = analyze(basis6, lambda x: 2.5 * f(x) - 0.7 * g(x))
    np.testing.assert_allclose(lhs, 2.5 * analyze(basis6, f) - 0.7 * analyze(basis6, g), atol=1e-9 * np.linalg.norm(lhs))


def test_index_map_is_graded(basis14):
    assert basis14.index_map[0] == (0, 0)
    assert np.all(np.diff(basis14.degrees) >= 0)
