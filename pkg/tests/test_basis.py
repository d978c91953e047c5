"""Monomial basis: ordering, evaluation, differentiation operators."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dctube.dc_core import (MonomialBasis, monomial_interval, poly_interval)


def test_graded_lex_order_n2_d2():
    b = MonomialBasis(2, 2)
    expect = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert [tuple(e) for e in b.exponents] == expect
    assert b.size == 6
    assert b.index((1, 1)) == 4


def test_size_formula():
    # binomial(n + d, d) monomials
    from math import comb
    for n, d in [(1, 3), (2, 6), (3, 4), (4, 2)]:
        assert MonomialBasis(n, d).size == comb(n + d, d)


def test_eval_matches_naive():
    b = MonomialBasis(2, 3)
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(5, 2))
    Y = b.eval(Z)
    for m in range(5):
        for p, e in enumerate(b.exponents):
            assert Y[m, p] == pytest.approx(Z[m, 0] ** e[0] * Z[m, 1] ** e[1])


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 1),
       st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_diff_matrix_is_derivative(j, zl):
    b = MonomialBasis(2, 4)
    D = b.diff_matrix(j)
    z = np.array(zl)
    eps = 1e-6
    dz = np.zeros(2)
    dz[j] = eps
    num = (b.eval((z + dz)[None])[0] - b.eval((z - dz)[None])[0]) / (2 * eps)
    np.testing.assert_allclose(D @ b.eval(z[None])[0], num,
                               rtol=1e-4, atol=1e-4)


def test_diff_matrices_commute():
    b = MonomialBasis(3, 4)
    D = [b.diff_matrix(j) for j in range(3)]
    for j in range(3):
        for k in range(3):
            np.testing.assert_allclose(D[j] @ D[k], D[k] @ D[j], atol=1e-12)


def test_monomial_interval_even_power_straddle():
    lo, hi = monomial_interval([2], np.array([-1.0]), np.array([2.0]))
    assert lo == 0.0 and hi == 4.0
    lo, hi = monomial_interval([3], np.array([-2.0]), np.array([1.0]))
    assert lo == -8.0 and hi == 1.0


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 10 ** 6))
def test_poly_interval_contains_samples(seed):
    rng = np.random.default_rng(seed)
    b = MonomialBasis(2, 3)
    coeffs = rng.normal(size=b.size)
    lo = np.array([-1.5, -0.5])
    hi = np.array([0.5, 2.0])
    bound_lo, bound_hi = poly_interval(b.exponents, coeffs, lo, hi)
    Z = rng.uniform(lo, hi, size=(200, 2))
    vals = b.eval(Z) @ coeffs
    assert vals.min() >= bound_lo - 1e-9
    assert vals.max() <= bound_hi + 1e-9
