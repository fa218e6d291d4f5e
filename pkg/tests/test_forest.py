import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlve.forest import (
    BlockPartition,
    Forest,
    TwoLevelJungle,
    bkar_check,
    enumerate_forests,
    jungle_derivative_structure,
    jungle_term_count,
    jungle_terms,
    jungles_to_jsonl,
    model_product_plus_one,
    model_random,
    model_square,
    spanning_trees,
    x_matrix,
    y_matrix,
)

# forests on n labelled vertices (OEIS A001858)
FOREST_COUNTS = {1: 1, 2: 2, 3: 7, 4: 38, 5: 291, 6: 2932}


def test_forest_validation():
    with pytest.raises(ValueError):
        Forest(3, frozenset({(1, 2), (2, 3), (1, 3)}))  # cycle
    with pytest.raises(ValueError):
        Forest(2, frozenset({(1, 1)}))  # self loop
    with pytest.raises(ValueError):
        Forest(2, frozenset({(1, 3)}))  # out of range
    f = Forest(3, frozenset({(2, 1)}))
    assert (1, 2) in f.edges  # normalized


def test_enumerate_forest_counts():
    for n, count in FOREST_COUNTS.items():
        if n <= 5:
            assert len(enumerate_forests(n)) == count


def test_single_vertex_single_empty_forest():
    out = enumerate_forests(1)
    assert len(out) == 1 and not out[0].edges


def test_n3_decomposition():
    out = enumerate_forests(3)
    by_size = {k: sum(1 for f in out if len(f.edges) == k) for k in (0, 1, 2)}
    assert by_size == {0: 1, 1: 3, 2: 3}


def test_cayley_spanning_trees_n4():
    assert len(spanning_trees(4)) == 16  # 4^{4-2}


def test_enumerate_out_of_range():
    with pytest.raises(ValueError):
        enumerate_forests(8)


# -- X matrix ------------------------------------------------------------------

def test_x_matrix_empty_forest_identity():
    f = Forest(4, frozenset())
    assert np.allclose(x_matrix(f), np.eye(4))


def test_x_matrix_single_edge():
    f = Forest(2, frozenset({(1, 2)}), w=(0.3,))
    assert np.allclose(x_matrix(f), [[1.0, 0.3], [0.3, 1.0]])


def test_x_matrix_path_min():
    f = Forest(3, frozenset({(1, 2), (2, 3)})).with_w({(1, 2): 0.7, (2, 3): 0.2})
    X = x_matrix(f)
    assert X[0, 2] == pytest.approx(0.2)
    assert np.linalg.eigvalsh(X).min() >= -1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_x_matrix_psd_and_bounded(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    forests = enumerate_forests(n)
    f = forests[int(rng.integers(0, len(forests)))]
    f = f.with_w({e: float(rng.random()) for e in sorted(f.edges)})
    X = x_matrix(f)
    assert np.linalg.eigvalsh(X).min() >= -1e-12
    assert np.all(X <= 1.0 + 1e-15)


def test_x_matrix_psd_1000_draws():
    rng = np.random.default_rng(17)
    pool = {n: enumerate_forests(n) for n in range(2, 7)}
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        f = pool[n][int(rng.integers(0, len(pool[n])))]
        f = f.with_w({e: float(rng.random()) for e in sorted(f.edges)})
        assert np.linalg.eigvalsh(x_matrix(f)).min() >= -1e-12


# -- Y matrix ------------------------------------------------------------------

def test_y_matrix_empty_fermionic_identity():
    fb = Forest(4, frozenset({(1, 2), (3, 4)}))
    j = TwoLevelJungle(fb, frozenset())
    assert np.allclose(y_matrix(j), np.eye(2))


def test_y_matrix_single_edge():
    fb = Forest(4, frozenset({(1, 2), (3, 4)}))
    j = TwoLevelJungle(fb, frozenset({(2, 3)}), w={(2, 3): 0.5})
    Y = y_matrix(j)
    assert np.allclose(Y, [[1.0, 0.5], [0.5, 1.0]])


def test_y_matrix_three_block_path_and_minors():
    fb = Forest(3, frozenset())
    j = TwoLevelJungle(fb, frozenset({(1, 2), (2, 3)}),
                       w={(1, 2): 0.9, (2, 3): 0.1})
    Y = y_matrix(j)
    assert Y[0, 2] == pytest.approx(0.1)
    # all minors bounded by 1 in absolute value
    n = 3
    import itertools
    for m in (1, 2, 3):
        for rows in itertools.combinations(range(n), m):
            for cols in itertools.combinations(range(n), m):
                assert abs(np.linalg.det(Y[np.ix_(rows, cols)])) <= 1.0 + 1e-12


def test_jungle_rejects_intra_block_fermionic_edge():
    fb = Forest(3, frozenset({(1, 2)}))
    with pytest.raises(ValueError):
        TwoLevelJungle(fb, frozenset({(1, 2)}))  # not disjoint
    with pytest.raises(ValueError):
        # union has a cycle 1-2-3-1
        TwoLevelJungle(Forest(3, frozenset({(1, 2), (2, 3)})),
                       frozenset({(1, 3)}))


def test_block_partition():
    fb = Forest(5, frozenset({(1, 2), (4, 5)}))
    bp = BlockPartition.from_forest(fb)
    assert bp.blocks == (frozenset({1, 2}), frozenset({3}), frozenset({4, 5}))
    assert bp.block_of(3) == 1


# -- BKAR ----------------------------------------------------------------------

def test_bkar_single_vertex():
    m = model_random(1, seed=0)
    assert bkar_check(m, 1) == pytest.approx(0.0, abs=1e-14)


def test_bkar_square_fundamental_theorem():
    assert bkar_check(model_square(2), 2) < 1e-12


def test_bkar_product_n3_direct_is_8():
    m = model_product_plus_one(3)
    assert m.value({p: 1.0 for p in m.pairs}) == pytest.approx(8.0)
    assert bkar_check(m, 3) < 1e-10


def test_bkar_random_models():
    for n in (2, 3, 4):
        m = model_random(n, seed=n + 10, deg=3, nterms=5)
        assert bkar_check(m, n) < 1e-10


def test_bkar_factorizes_over_components():
    # disconnected product model: forest sum equals product of per-pair sums
    m = model_product_plus_one(3)
    assert bkar_check(m, 3) < 1e-10


# -- jungles -------------------------------------------------------------------

def test_jungle_terms_n1():
    terms = list(jungle_terms(1, 2))
    assert len(terms) == 1
    assert not terms[0].FB.edges and not terms[0].FF


def test_jungle_terms_n2_jmax0():
    terms = list(jungle_terms(2, 0))
    assert len(terms) == 2
    kinds = {(len(t.FB.edges), len(t.FF)) for t in terms}
    assert kinds == {(1, 0), (0, 1)}
    ferm = next(t for t in terms if t.FF)
    assert ferm.fermionic_slices[(1, 2)] == 0


def test_jungle_spanning_edge_count():
    for t in jungle_terms(3, 1):
        assert len(t.FB.edges) + len(t.FF) == t.n - 1
        assert t.is_spanning_tree()


def test_jungle_term_count_formula():
    # spanning trees n^{n-2} times 2-colorings, F edges weighted by slices
    # n=2: 1 tree, colorings: B or F with (j_max+1) choices
    assert jungle_term_count(2, 2) == 1 + 3
    # n=3: 3 trees, each 2 edges: sum over colorings (1+s)^2 with s = slices
    assert jungle_term_count(3, 1) == 3 * (1 + 2) ** 2


def test_jungle_derivative_structure():
    t = next(t for t in jungle_terms(2, 1) if t.FF)
    d = jungle_derivative_structure(t)
    assert d[0]["kind"] == "fermionic"
    assert d[0]["blocks"] == (0, 1)


def test_jungle_jsonl_roundtrip(tmp_path):
    import json
    path = tmp_path / "jungles.jsonl"
    jungles_to_jsonl(jungle_terms(3, 0), path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == jungle_term_count(3, 0)
    rec = json.loads(lines[0])
    assert set(rec) == {"n", "FB", "FF", "blocks"}
