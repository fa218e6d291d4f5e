import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from mlve.propagator import (
    DiscretizedOperator,
    Grid,
    SliceFamily,
    cumulative_kernel_r,
    decay_fit,
    discretize,
    kernel_table_csv,
    load_operator,
    save_operator,
    single_slice_matrix,
    slice_kernel,
    slice_kernel_r,
    tadpole,
    tadpole_cumulative,
)

FAM = SliceFamily(M=2, j_max=3, mass=1.0)

# int_{1/4}^{1} e^-a da/a = E1(1/4) - E1(1), frozen from an mpmath oracle
T1_ORACLE = 0.82489870004821786


def test_family_validation():
    with pytest.raises(ValueError):
        SliceFamily(M=1, j_max=2, mass=1.0)
    with pytest.raises(ValueError):
        SliceFamily(M=2, j_max=-1, mass=1.0)
    with pytest.raises(ValueError):
        SliceFamily(M=2, j_max=2, mass=0.0)
    assert len(FAM.slice_indices) == 1 + FAM.j_max


def test_kernel_index_errors():
    with pytest.raises(IndexError):
        slice_kernel(FAM, 4, (0.1, 0.1), (0.2, 0.2))
    with pytest.raises(IndexError):
        tadpole(FAM, -1)


def test_coinciding_points_x_independent():
    vals = [slice_kernel(FAM, 1, (x, y), (x, y))
            for x in (0.1, 0.5, 0.9) for y in (0.2, 0.7)]
    assert np.ptp(vals) == 0.0
    assert vals[0] == pytest.approx(tadpole(FAM, 1), rel=1e-14)


def test_tadpole_j1_against_quadrature_oracle():
    assert tadpole(FAM, 1) == pytest.approx(T1_ORACLE, rel=1e-10)


def test_tadpole_j0_is_exponential_integral():
    # T_0 = int_1^inf e^-a da/a = E1(1)
    assert tadpole(FAM, 0) == pytest.approx(float(special.exp1(1.0)), rel=1e-10)


def test_tadpole_cumulative_is_sum():
    total = sum(tadpole(FAM, k) for k in range(FAM.j_max + 1))
    assert tadpole_cumulative(FAM, FAM.j_max) == pytest.approx(total, abs=1e-12)


def test_kernel_symmetry_100_pairs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x, y = rng.random(2), rng.random(2)
        j = int(rng.integers(0, FAM.j_max + 1))
        assert slice_kernel(FAM, j, x, y) == slice_kernel(FAM, j, y, x)


def test_kernel_positivity():
    rng = np.random.default_rng(11)
    for _ in range(50):
        x, y = rng.random(2), rng.random(2)
        for j in FAM.slice_indices:
            assert slice_kernel(FAM, j, x, y) > 0.0


def test_prefactor_scales_everything():
    fam2 = SliceFamily(M=2, j_max=3, mass=1.0, prefactor=1 / (4 * math.pi))
    assert slice_kernel_r(fam2, 1, 0.3) == pytest.approx(
        slice_kernel_r(FAM, 1, 0.3) / (4 * math.pi), rel=1e-13)


def test_decay_fit_zero_separation_lower_bound():
    K, c = decay_fit(FAM, 2)
    assert K >= tadpole(FAM, 2)


def test_decay_fit_within_twice_tadpole():
    # scan oracle: K_j <= 2 T_j for c = 1/4, M=2, m=1, j in {1,2,3}
    for j in (1, 2, 3):
        K, c = decay_fit(FAM, j, n_sep=200)
        assert c == 0.25
        assert K <= 2.0 * tadpole(FAM, j)


def test_decay_fit_uniformly_bounded():
    Ks = [decay_fit(FAM, j)[0] for j in (1, 2, 3)]
    assert max(Ks) <= 2.0 * max(tadpole(FAM, j) for j in (1, 2, 3))


def test_decay_fit_rejects_infrared_slice():
    with pytest.raises(IndexError):
        decay_fit(FAM, 0)


def test_higher_slices_decay_faster():
    r = 0.5
    ratios = [slice_kernel_r(FAM, j + 1, r) / slice_kernel_r(FAM, j, r)
              for j in (0, 1, 2)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))


def test_slice_partition_of_parametric_domain():
    # sum_j C_j = int_{M^{-2 j_max}}^{inf} for a few separations
    for r in (0.0, 0.15, 0.6):
        total = sum(slice_kernel_r(FAM, j, r) for j in FAM.slice_indices)
        assert total == pytest.approx(cumulative_kernel_r(FAM, FAM.j_max, r), rel=1e-9)


def test_cumulative_monotone_in_j():
    for r in (0.05, 0.3):
        vals = [cumulative_kernel_r(FAM, j, r) for j in FAM.slice_indices]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0.0, 1.4), j=st.integers(0, 3))
def test_kernel_radial_matches_pointwise(r, j):
    x = np.array([0.2, 0.3])
    y = x + np.array([r / math.sqrt(2), r / math.sqrt(2)])
    assert slice_kernel(FAM, j, x, y) == pytest.approx(
        slice_kernel_r(FAM, j, r), rel=1e-12, abs=1e-300)


# -- discretization ----------------------------------------------------------

def test_discretize_zero_weights_gives_zero_operator():
    op = discretize(FAM, {}, Grid(4))
    assert np.all(op.entries == 0.0)


def test_discretize_linearity():
    grid = Grid(4)
    full = discretize(FAM, None, grid)
    parts = sum(single_slice_matrix(FAM, j, grid) for j in FAM.slice_indices)
    assert np.allclose(full.entries, parts, rtol=1e-13, atol=0)


def test_discretize_symmetric_and_psd():
    grid = Grid(16)
    op = discretize(FAM, "<=3", grid)
    assert np.allclose(op.entries, op.entries.T, atol=0)
    w = np.linalg.eigvalsh(op.gmat)
    assert w.min() >= -1e-8


def test_discretized_diagonal_is_tadpole():
    grid = Grid(4)
    op = discretize(FAM, [2], grid)
    assert np.allclose(np.diag(op.entries), tadpole(FAM, 2), rtol=1e-13)


def test_compose_and_trace_conventions():
    grid = Grid(3)
    A = discretize(FAM, [0], grid)
    t = A.trace()
    assert t == pytest.approx(grid.h ** 2 * np.trace(A.entries))
    AB = A.compose(A)
    assert np.allclose(AB.entries, grid.h ** 2 * A.entries @ A.entries)


def test_trace_grid_refinement_order():
    # trace of C_1 at N and 2N should agree to O(1/N)
    t8 = discretize(FAM, [1], Grid(8)).trace()
    t16 = discretize(FAM, [1], Grid(16)).trace()
    exact = tadpole(FAM, 1)  # trace = T_1 * area exactly, diagonal is constant
    assert t8 == pytest.approx(exact, rel=1e-12)
    assert t16 == pytest.approx(exact, rel=1e-12)


def test_grid_weights_sum_to_unit_square():
    g = Grid(7)
    assert g.npoints * g.h ** 2 == pytest.approx(1.0, rel=1e-12)
    assert g.points.shape == (49, 2)


# -- external interfaces -----------------------------------------------------

def test_kernel_table_csv(tmp_path):
    path = tmp_path / "kernels.csv"
    kernel_table_csv(FAM, path, n_sep=5)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "j,separation,value"
    assert len(lines) == 1 + 5 * (FAM.j_max + 1)
    j, r, v = lines[1].split(",")
    assert float(v) == pytest.approx(slice_kernel_r(FAM, int(j), float(r)))


def test_operator_binary_roundtrip(tmp_path):
    op = discretize(FAM, "<=2", Grid(4))
    path = tmp_path / "op.bin"
    save_operator(op, path)
    back = load_operator(path)
    assert np.allclose(back.entries, op.entries.real, atol=0)
    assert back.meta["M"] == FAM.M and back.meta["N"] == 4
    assert back.meta["t"] == [1.0, 1.0, 1.0, 0.0]
