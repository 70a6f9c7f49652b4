from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as sla

from bchd_orbit.bchd import (
    LieSeries,
    LieSeriesTerm,
    UnsupportedOrder,
    bind,
    build_series,
    canonical_word,
    canonicalize,
    coefficient_checksum,
    dump_series,
    dynkin_product,
    generator,
    parse_series,
    recursive_F,
    series_equal,
    terms_general,
    terms_n2_appendix,
)
from bchd_orbit.lie import VectorField, lie_bracket, word_length

DATA = Path(__file__).parent / "data"


def coeff_of(series, word, alpha):
    """Coefficient of a word (up to antisymmetry sign) in a series."""
    sign, w = canonical_word(word)
    return sign * series.as_mapping().get((w, tuple(alpha)), Fraction(0))


def linear_matrix(series, mats, alphas, tau):
    """Matrix of the bound series for linear fields x -> A_k x."""

    def mat(word):
        if isinstance(word, int):
            return mats[word - 1]
        L, R = mat(word[0]), mat(word[1])
        return R @ L - L @ R

    total = np.zeros_like(mats[0])
    for t in series:
        w = float(t.coeff) * np.prod([a**e for a, e in zip(alphas, t.alpha)]) * tau**t.tau_degree
        total = total + w * mat(t.word)
    return total


def test_general_order1_and_n1():
    assert [str(t) for t in terms_general(1, 3)] == ["1 * alpha^(1) * tau^1 * f1"]
    s = terms_general(3, 1)
    assert len(s) == 3 and all(t.coeff == 1 for t in s)


def test_general_order2():
    s = terms_general(2, 2)
    assert coeff_of(s, 1, (1, 0)) == 1 and coeff_of(s, 2, (0, 1)) == 1
    assert coeff_of(s, (1, 2), (1, 1)) == Fraction(1, 2)
    assert len(s) == 3


def test_general_triple_family():
    s = terms_general(3, 3)
    assert coeff_of(s, (3, (1, 2)), (1, 1, 1)) == Fraction(-1, 4)
    assert coeff_of(s, (1, (1, 2)), (2, 1, 0)) == Fraction(1, 12)
    assert coeff_of(s, (2, (1, 2)), (1, 2, 0)) == Fraction(-1, 12)


def test_general_rejects_high_order():
    with pytest.raises(UnsupportedOrder):
        terms_general(2, 4)


def test_tabulated_examples():
    s4 = terms_n2_appendix(4)
    deg4 = s4.degree_part(4)
    assert len(deg4) == 1
    assert coeff_of(deg4, (2, (1, (1, 2))), (2, 2)) == Fraction(-1, 24)
    s5 = terms_n2_appendix(5)
    assert coeff_of(s5, (2, (2, (2, (2, 1)))), (1, 4)) == Fraction(-1, 720)
    s6 = terms_n2_appendix(6)
    assert coeff_of(s6, (1, (2, (1, (2, (1, 2))))), (3, 3)) == Fraction(1, 240)
    with pytest.raises(UnsupportedOrder):
        terms_n2_appendix(7)


@pytest.mark.parametrize("order", range(1, 7))
def test_recursive_matches_tabulated(order):
    assert series_equal(recursive_F(2, order), terms_n2_appendix(order))


@pytest.mark.parametrize("N", [2, 3, 4])
def test_general_matches_recursive(N):
    assert series_equal(terms_general(N, 3), recursive_F(N, 3))


def test_dynkin_order2():
    s = dynkin_product(generator(2, 1), generator(2, 2), 2)
    assert s.as_mapping() == {(1, (1, 0)): 1, (2, (0, 1)): 1, ((1, 2), (1, 1)): Fraction(1, 2)}


def test_dynkin_of_equal_generators():
    g = generator(1, 1)
    s = dynkin_product(g, g, 6)
    assert len(s) == 1 and s.terms[0].coeff == 2 and s.terms[0].word == 1


def test_dynkin_raw_degree4_needs_jacobi():
    raw = dynkin_product(generator(2, 1), generator(2, 2), 4).degree_part(4)
    # antisymmetry alone leaves two words; they collapse to the tabulated one
    assert len(raw) == 2
    assert canonicalize(raw).terms == canonicalize(terms_n2_appendix(4).degree_part(4)).terms


def test_dynkin_errors():
    with pytest.raises(ValueError):
        dynkin_product(generator(2, 1), generator(3, 1), 2)
    with pytest.raises(ValueError):
        dynkin_product(generator(2, 1), generator(2, 2), 9)


def test_recursive_n1_and_order1():
    assert recursive_F(1, 4).terms == generator(1, 1).terms
    s = recursive_F(2, 1)
    assert {(t.word, t.alpha) for t in s} == {(1, (1, 0)), (2, (0, 1))}


def test_term_invariants():
    for s in (terms_n2_appendix(6), canonicalize(recursive_F(3, 4))):
        keys = [(t.word, t.alpha) for t in s]
        assert len(keys) == len(set(keys))
        for t in s:
            assert t.coeff != 0 and t.tau_degree == word_length(t.word) <= s.order


def test_canonicalize_is_idempotent():
    s = canonicalize(recursive_F(3, 4))
    assert canonicalize(s).terms == s.terms


def test_dump_round_trip_and_golden():
    s = terms_n2_appendix(6)
    text = dump_series(s)
    assert parse_series(text).terms == s.terms
    # regression guard for the dump format of the tabulated series
    assert text == (DATA / "appendix_n2_order6.txt").read_text()
    assert dump_series(terms_general(3, 3)) == (DATA / "general_n3_order3.txt").read_text()


def test_parse_rejects_inconsistent_lines():
    with pytest.raises(ValueError):
        parse_series("1/2 * alpha^(1,1) * tau^3 * [f1,f2]")
    with pytest.raises(ValueError):
        parse_series("1/2 * alpha^(2,0) * tau^2 * [f1,f2]")


def test_build_series_methods():
    assert build_series(2, 4).terms == terms_n2_appendix(4).terms
    assert build_series(2, 6, "recursive").terms == canonicalize(terms_n2_appendix(6)).terms
    assert build_series(3, 3).terms == terms_general(3, 3).terms
    with pytest.raises(UnsupportedOrder):
        build_series(3, 2, "appendix")
    assert coefficient_checksum(terms_n2_appendix(4)) == Fraction(65, 24)


@pytest.mark.parametrize(
    "N, order, build",
    [(2, 6, lambda: terms_n2_appendix(6)), (3, 3, lambda: terms_general(3, 3)), (3, 4, lambda: build_series(3, 4))],
)
def test_matrix_logarithm_oracle(N, order, build):
    # linear fields: composing flows multiplies matrix exponentials (first field acts first)
    rng = np.random.default_rng(7)
    mats = [rng.normal(size=(3, 3)) for _ in range(N)]
    alphas = rng.dirichlet(np.ones(N))
    series = build()
    errs = []
    for tau in (0.05, 0.1):
        prod = np.eye(3)
        for A, a in zip(mats, alphas):
            prod = sla.expm(tau * a * A) @ prod
        exact = np.real(sla.logm(prod))
        errs.append(np.linalg.norm(linear_matrix(series, mats, alphas, tau) - exact))
    slope = np.log(errs[1] / errs[0]) / np.log(2.0)
    assert slope > order + 0.5


def test_bound_series_examples(cstr2_fields):
    f = cstr2_fields[0]
    F = bind(terms_general(1, 1), [f], [1.0], 2.0)
    x = np.array([0.1, 0.02])
    assert np.allclose(F(x), 2 * f(x), rtol=1e-15)

    f1, f2 = cstr2_fields
    F2 = bind(terms_general(2, 2), cstr2_fields, [0.5, 0.5], 1.0)
    x = np.zeros(2)
    by_hand = (f1(x) + f2(x)) / 2 + lie_bracket(f1, f2, x) / 8
    assert np.allclose(F2(x), by_hand, rtol=1e-13, atol=1e-15)


def test_bound_series_validation(cstr2_fields):
    with pytest.raises(ValueError):
        bind(terms_general(3, 2), cstr2_fields, [0.5, 0.5], 1.0)
    with pytest.raises(ValueError):
        bind(terms_general(2, 2), cstr2_fields, [0.5, 0.5], 0.0)
