import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlve.grassmann import (
    GrassmannElement,
    PairSpace,
    berezin_integrate,
    configuration_element,
    minor_sum,
    wick_expectation,
)


def random_psd_unit(B, rng):
    A = rng.normal(size=(B, B + 2))
    Y = A @ A.T
    d = np.sqrt(np.diag(Y))
    return Y / np.outer(d, d)


def test_normalization_one_pair():
    sp = PairSpace([0])
    assert berezin_integrate(sp.one(), np.array([[1.0]])) == pytest.approx(1.0)


def test_two_point_identity_covariance():
    sp = PairSpace([0])
    e = GrassmannElement.monomial(2, [sp.x(0), sp.xbar(0)])
    assert berezin_integrate(e, np.eye(1)) == pytest.approx(1.0)


def test_weight_integral_is_determinant():
    rng = np.random.default_rng(3)
    for K in (1, 2, 3, 4):
        M = rng.normal(size=(K, K))
        sp = PairSpace(range(K))
        assert berezin_integrate(sp.one(), M) == pytest.approx(
            np.linalg.det(M), rel=1e-12)


def test_dimension_mismatch():
    sp = PairSpace([0, 1])
    with pytest.raises(ValueError):
        berezin_integrate(sp.one(), np.eye(3))


def test_generators_square_to_zero():
    e = GrassmannElement.monomial(4, [1, 1])
    assert e.terms == {}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5))
def test_anticommutativity_of_generators(a, b):
    n = 6
    ga = GrassmannElement.monomial(n, [a])
    gb = GrassmannElement.monomial(n, [b])
    lhs = ga * gb
    rhs = gb * ga
    if a == b:
        assert lhs.terms == {}
    else:
        assert (lhs + rhs).terms == {}


@settings(max_examples=20, deadline=None)
@given(st.data())
def test_odd_elements_anticommute(data):
    n = 6
    rng = np.random.default_rng(data.draw(st.integers(0, 10 ** 6)))
    singles = [GrassmannElement.monomial(n, [g], rng.normal()) for g in range(n)]
    A = singles[0] + singles[1] + singles[3]
    Bm = singles[2] + singles[4] + singles[5]
    assert (A * Bm + Bm * A).terms == {}


def test_product_associativity():
    rng = np.random.default_rng(5)
    n = 6
    def rand_elem():
        e = GrassmannElement(n, {})
        for _ in range(5):
            m = int(rng.integers(0, 1 << n))
            e = e + GrassmannElement(n, {m: complex(rng.normal(), rng.normal())})
        return e
    a, b, c = rand_elem(), rand_elem(), rand_elem()
    lhs = (a * b) * c
    rhs = a * (b * c)
    assert (lhs - rhs).terms == {}


def test_exp_of_commuting_quadratics_factorizes():
    sp = PairSpace(range(2))
    qa = GrassmannElement.monomial(4, [sp.xbar(0), sp.x(0)], -0.7)
    qb = GrassmannElement.monomial(4, [sp.xbar(1), sp.x(1)], -1.3)
    both = (qa + qb).exp()
    split = qa.exp() * qb.exp()
    diff = both - split
    assert all(abs(c) < 1e-14 for c in diff.terms.values())


def test_derivative_left_convention():
    # d/dg0 (g0 g1) = g1 ; d/dg1 (g0 g1) = -g0
    e = GrassmannElement.monomial(2, [0, 1])
    assert e.derivative(0).terms == {2: 1.0 + 0j}
    assert e.derivative(1).terms == {1: -1.0 + 0j}


# -- Wick expectation (normalized covariance semantics) -----------------------

def test_wick_normalization_and_two_point():
    rng = np.random.default_rng(9)
    C = random_psd_unit(3, rng)
    sp = PairSpace(range(3))
    assert wick_expectation(sp.one(), C) == pytest.approx(1.0)
    for a in range(3):
        for b in range(3):
            e = GrassmannElement.monomial(6, [sp.x(a), sp.xbar(b)])
            assert wick_expectation(e, C) == pytest.approx(C[a, b], rel=1e-12)


def test_wick_four_point_determinant():
    rng = np.random.default_rng(10)
    C = random_psd_unit(3, rng)
    sp = PairSpace(range(3))
    a, b, c, d = 0, 1, 2, 0
    e = (GrassmannElement.monomial(6, [sp.x(a), sp.xbar(b)])
         * GrassmannElement.monomial(6, [sp.x(c), sp.xbar(d)]))
    want = C[a, b] * C[c, d] - C[a, d] * C[c, b]
    assert wick_expectation(e, C) == pytest.approx(want, rel=1e-12)


def test_wick_agrees_with_weighted_berezin():
    # normalized covariance-C expectation == weight-(C^-1) integral / det(C^-1)
    rng = np.random.default_rng(11)
    C = random_psd_unit(2, rng) + 0.5 * np.eye(2)
    M = np.linalg.inv(C)
    sp = PairSpace(range(2))
    e = sp.pair_element(0) + GrassmannElement.monomial(
        4, [sp.x(0), sp.xbar(1)], 0.3)
    lhs = wick_expectation(e, C) * np.linalg.det(M)
    rhs = berezin_integrate(e, M)
    assert lhs == pytest.approx(rhs, rel=1e-12)


# -- minor formula ------------------------------------------------------------

def test_hardcore_overlap_returns_zero():
    Y = np.eye(1)
    # two vertices in one block with overlapping slice sets
    val = minor_sum(Y, [], {0: {0, 1}, 1: {1}}, block_of={0: 0, 1: 0},
                    n_slices=2)
    assert val == 0.0
    space, elem, cov = configuration_element(
        Y, [], {0: {0, 1}, 1: {1}}, block_of={0: 0, 1: 0}, n_slices=2)
    assert berezin_integrate(elem, cov) == 0.0


def test_no_edges_disjoint_sets_give_one():
    rng = np.random.default_rng(13)
    Y = random_psd_unit(3, rng)
    val = minor_sum(Y, [], {0: {0}, 1: {1}, 2: {2}}, n_slices=3)
    assert val == pytest.approx(1.0, rel=1e-12)


def test_three_block_edge_pattern_cofactor_oracle():
    # 3 blocks, 2 slices, one Fermionic edge: algebra vs cofactor route
    rng = np.random.default_rng(14)
    Y = random_psd_unit(3, rng)
    slice_sets = {0: {0, 1}, 1: {0}, 2: {1}}
    edges = [(0, 2, 1)]
    space, elem, cov = configuration_element(Y, edges, slice_sets, n_slices=2)
    lhs = berezin_integrate(elem, cov)
    rhs = minor_sum(Y, edges, slice_sets, n_slices=2)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert lhs != 0.0


def _random_config(rng, max_blocks=4, max_slices=3):
    B = int(rng.integers(1, max_blocks + 1))
    ns = int(rng.integers(1, max_slices + 1))
    Y = random_psd_unit(B, rng)
    slice_sets = {a: set() for a in range(B)}
    for a in range(B):
        for j in range(ns):
            if rng.random() < 0.6:
                slice_sets[a].add(j)
    edges, consumed = [], set()
    for _ in range(int(rng.integers(0, 4))):
        a, b = map(int, rng.integers(0, B, size=2))
        j = int(rng.integers(0, ns))
        if (a != b and j in slice_sets[a] and j in slice_sets[b]
                and (a, j) not in consumed and (b, j) not in consumed):
            edges.append((a, b, j))
            consumed |= {(a, j), (b, j)}
    return Y, edges, slice_sets, ns


def test_berezin_equals_minor_sum_sweep():
    rng = np.random.default_rng(2024)
    nonzero = 0
    for _ in range(150):
        Y, edges, slice_sets, ns = _random_config(rng)
        space, elem, cov = configuration_element(Y, edges, slice_sets,
                                                 n_slices=ns)
        lhs = berezin_integrate(elem, cov)
        rhs = minor_sum(Y, edges, slice_sets, n_slices=ns)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
        nonzero += lhs != 0
    assert nonzero > 50


def test_multi_vertex_blocks():
    rng = np.random.default_rng(15)
    Y = random_psd_unit(2, rng)
    # 3 vertices in 2 blocks; edge endpoints are vertices
    block_of = {0: 0, 1: 0, 2: 1}
    slice_sets = {0: {0}, 1: {1}, 2: {0, 1}}
    edges = [(1, 2, 1)]
    space, elem, cov = configuration_element(Y, edges, slice_sets,
                                             block_of=block_of, n_slices=2)
    lhs = berezin_integrate(elem, cov)
    rhs = minor_sum(Y, edges, slice_sets, block_of=block_of, n_slices=2)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert lhs != 0.0


def test_minor_bound_psd_unit_diagonal():
    # every minor of a PSD matrix with unit diagonal is <= 1 in modulus
    rng = np.random.default_rng(99)
    for _ in range(500):
        n = int(rng.integers(2, 7))
        Y = random_psd_unit(n, rng)
        m = int(rng.integers(1, n + 1))
        rows = sorted(rng.permutation(n)[:m])
        cols = sorted(rng.permutation(n)[:m])
        assert abs(np.linalg.det(Y[np.ix_(rows, cols)])) <= 1.0 + 1e-12
