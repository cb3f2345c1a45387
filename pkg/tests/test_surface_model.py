import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nuhcode.surface_model import (cat_map, cocycle, exp_chart, iterate, log_chart, make_map,
                                   precise_orbit, torus_distance, wrap)

ZOO = [cat_map(), make_map("perturbed", delta=0.05), make_map("perturbed", delta=0.3),
       make_map("standard", K=2.0), make_map("standard", K=6.0)]
coord = st.floats(0.0, 1.0, allow_nan=False, exclude_max=True)
point = st.tuples(coord, coord).map(np.array)


def test_cat_fixed_point():
    assert np.allclose(iterate(cat_map(), (0.0, 0.0), 5), (0.0, 0.0))


def test_cat_one_step():
    # (2*0.3 + 0.7, 0.3 + 0.7) mod 1
    x = iterate(cat_map(), (0.3, 0.7), 1)
    assert torus_distance(x, (0.3, 0.0)) < 1e-12


@pytest.mark.parametrize("fmap", ZOO, ids=repr)
def test_zero_steps_is_identity(fmap):
    x = np.array([0.123, 0.456])
    assert np.array_equal(iterate(fmap, x, 0), x)


def test_linear_cocycle_is_matrix_power():
    A = np.array([[2, 1], [1, 1]])
    assert np.allclose(cocycle(cat_map(), (0.3, 0.2), 3), np.linalg.matrix_power(A, 3))
    assert np.array_equal(cocycle(cat_map(), (0.3, 0.2), 0), np.eye(2))


def test_standard_map_cocycle_against_finite_differences():
    fm = make_map("standard", K=2.0)
    rng = np.random.default_rng(4)
    h = 1e-6
    for x in rng.random((20, 2)):
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            J[:, j] = (np.asarray(iterate(fm, x + e, 2)) - iterate(fm, x - e, 2) + 0.5) % 1 - 0.5
        J /= 2 * h
        assert np.allclose(cocycle(fm, x, 2), J, atol=1e-5)


def test_chart_maps():
    assert np.allclose(exp_chart((0.9, 0.9), (0.2, 0.2)), (0.1, 0.1))
    assert np.allclose(log_chart((0.9, 0.9), (0.1, 0.1)), (0.2, 0.2))
    assert np.array_equal(log_chart((0.4, 0.4), (0.4, 0.4)), (0.0, 0.0))
    with pytest.raises(ValueError):
        log_chart((0.0, 0.0), (0.5, 0.5))


def test_precise_orbit_agrees_with_float_iteration():
    fm = make_map("perturbed", delta=0.05)
    _, pts = precise_orbit(fm, (0.2, 0.3), 0, 10)
    x = np.array([0.2, 0.3])
    for k in range(4):
        assert torus_distance(pts[k], x) < 1e-12
        x = fm.forward(x)


def test_global_constants_are_sane():
    cat = cat_map()
    assert cat.lip_f == pytest.approx((3 + 5 ** 0.5) / 2, rel=1e-12)
    assert cat.hoelder_df == 0.0
    pert = make_map("perturbed", delta=0.05)
    # |d^2 f| = 2 pi delta for the sine perturbation
    assert 2 * np.pi * 0.05 <= pert.hoelder_df <= 1.2 * 2 * np.pi * 0.05 * 2 ** 0.5


@pytest.mark.property
@settings(max_examples=60, deadline=None)
@given(x=point, y=point)
def test_distance_bounds(x, y):
    d = torus_distance(x, y)
    assert 0.0 <= d <= 2 ** 0.5 / 2 + 1e-15
    assert np.all((wrap(x + 3.7) >= 0) & (wrap(x + 3.7) < 1))


@pytest.mark.property
@settings(max_examples=40, deadline=None)
@given(x=point, i=st.integers(0, len(ZOO) - 1))
def test_inverse_and_derivative_inverse(x, i):
    fm = ZOO[i]
    assert torus_distance(fm.backward(fm.forward(x)), x) < 1e-12
    assert np.allclose(fm.d_forward(x) @ fm.d_backward(fm.forward(x)), np.eye(2), atol=1e-10)
    if not repr(fm).startswith("Perturbed"):
        # area preserving members
        assert abs(np.linalg.det(fm.d_forward(x))) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.property
@settings(max_examples=25, deadline=None)
@given(x=point, i=st.integers(0, len(ZOO) - 1))
def test_derivative_matches_finite_differences(x, i):
    fm = ZOO[i]
    h = 1e-6
    J = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        J[:, j] = ((np.asarray(fm.forward(x + e)) - fm.forward(x - e) + 0.5) % 1 - 0.5) / (2 * h)
    assert np.allclose(fm.d_forward(x), J, atol=1e-5)


@pytest.mark.property
@settings(max_examples=25, deadline=None)
@given(x=point, m=st.integers(-6, 6), n=st.integers(-6, 6), i=st.integers(0, len(ZOO) - 1))
def test_cocycle_identity(x, m, n, i):
    fm = ZOO[i]
    lhs = cocycle(fm, x, m + n)
    left, right = cocycle(fm, iterate(fm, x, n), m), cocycle(fm, x, n)
    # rounding scales with the factors, which may cancel to a small product
    scale = np.linalg.norm(left, 2) * np.linalg.norm(right, 2)
    assert np.allclose(lhs, left @ right, rtol=0, atol=1e-10 * scale)
