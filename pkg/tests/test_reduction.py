import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nuhcode.reduction import (ChartSize, DegenerateCocycleError, EpsilonLattice,
                               WindowTooShortError, build_C, chart_size, estimate_splitting,
                               lyapunov_scales, point_reduction, q_epsilon, q_window, quantize_Iε,
                               reduce, reduce_orbit)
from nuhcode.surface_model import cat_map, make_map

CHI, EPS = 0.5, 0.01
LAM_S = (3 - 5 ** 0.5) / 2
LAM_U = (3 + 5 ** 0.5) / 2
S_CAT = math.sqrt(2 / (1 - math.exp(2 * CHI) * LAM_S ** 2))


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def _same_line(a, b):
    return abs(abs(float(np.dot(_unit(a), _unit(b)))) - 1.0) < 1e-12


def test_cat_frame_is_the_eigenframe():
    fr = estimate_splitting(cat_map(), (0.31, 0.77), 1, chi=CHI)
    assert _same_line(fr.e_u, (1, (5 ** 0.5 - 1) / 2))
    assert _same_line(fr.e_s, (1, -(1 + 5 ** 0.5) / 2))
    assert fr.lam_hat == pytest.approx(math.log(LAM_S), abs=1e-12)
    assert fr.mu_hat == pytest.approx(math.log(LAM_U), abs=1e-12)
    assert fr.alpha == pytest.approx(math.pi / 2, abs=1e-12)
    # positively oriented, unit vectors
    assert fr.e_s[0] * fr.e_u[1] - fr.e_s[1] * fr.e_u[0] > 0
    assert np.linalg.norm(fr.e_s) == pytest.approx(1, abs=1e-12)


def test_integrable_standard_map_is_rejected():
    fm = make_map("standard", K=0.0)
    rng = np.random.default_rng(0)
    assert not any(estimate_splitting(fm, x, 64, chi=CHI).accepted for x in rng.random((10, 2)))


def test_cat_scales_closed_form():
    fr = estimate_splitting(cat_map(), (0.1, 0.2), 64, chi=CHI)
    sc = lyapunov_scales(cat_map(), fr, CHI)
    assert sc.s_chi == pytest.approx(S_CAT, abs=1e-8)
    assert sc.u_chi == pytest.approx(S_CAT, abs=1e-8)
    sc0 = lyapunov_scales(cat_map(), fr, 1e-9)
    assert sc0.s_chi == pytest.approx(math.sqrt(2 / (1 - LAM_S ** 2)), abs=1e-7)


def test_frobenius_identity_and_cat_value():
    _, sc, C, size = point_reduction(cat_map(), (0.4, 0.1), CHI, EPS)
    assert C.frob_inv == pytest.approx(math.sqrt(2) * sc.s_chi, rel=1e-12)
    assert C.op_inv <= C.frob_inv <= math.sqrt(2) * C.op_inv * (1 + 1e-12)
    # independent evaluation of eps^3 (sqrt(2) s)^-12
    assert size.Q_tilde == pytest.approx(EPS ** 3 * (math.sqrt(2) * S_CAT) ** -12, rel=1e-9)
    assert size.Q_eps <= size.Q_tilde < math.exp(EPS / 3) * size.Q_eps


def test_C_is_a_contraction_with_the_right_columns():
    fm = make_map("perturbed", delta=0.05)
    fr, sc, C, _ = point_reduction(fm, (0.2, 0.6), CHI, EPS)
    assert np.allclose(C.C[:, 0], fr.e_s / sc.s_chi, atol=1e-12)
    assert np.allclose(C.C[:, 1], fr.e_u / sc.u_chi, atol=1e-12)
    assert np.linalg.det(C.C) > 0
    v = np.random.default_rng(1).normal(size=(1000, 2))
    assert np.all(np.linalg.norm(v @ C.C.T, axis=1) <= np.linalg.norm(v, axis=1) * (1 + 1e-12))


def test_cat_reduction_is_diagonal():
    fm = cat_map()
    x = np.array([0.3, 0.45])
    _, _, Cx, _ = point_reduction(fm, x, CHI, EPS)
    _, _, Cfx, _ = point_reduction(fm, fm.forward(x), CHI, EPS)
    lam, mu, off = reduce(fm, x, Cx, Cfx, CHI)
    assert abs(lam) == pytest.approx(LAM_S, abs=1e-12)
    assert abs(mu) == pytest.approx(LAM_U, abs=1e-12)
    assert off < 1e-12
    assert abs(lam) < math.exp(-CHI) and abs(mu) > math.exp(CHI)


def test_perturbed_reduction_off_diagonal_small():
    fm = make_map("perturbed", delta=0.05)
    rng = np.random.default_rng(2)
    orbit = [rng.random(2)]
    for _ in range(500):
        orbit.append(fm.forward(orbit[-1]))
    red = reduce_orbit(fm, np.array(orbit), CHI, EPS)
    k = np.flatnonzero(red.valid[:-1] & red.valid[1:] & red.accepted[:-1])
    assert len(k) >= 100
    D = red.C_inv[k + 1] @ fm.d_forward(red.points[k]) @ red.C[k]
    assert np.max(np.abs(D[:, [0, 1], [1, 0]])) < 1e-6


def test_orbit_route_matches_point_route():
    fm = make_map("perturbed", delta=0.05)
    rng = np.random.default_rng(3)
    orbit = [rng.random(2)]
    for _ in range(600):
        orbit.append(fm.forward(orbit[-1]))
    orbit = np.array(orbit)
    red = reduce_orbit(fm, orbit, CHI, EPS)
    for k in (200, 300, 400):
        fr, sc, C, size = point_reduction(fm, orbit[k], CHI, EPS)
        assert _same_line(fr.e_s, red.e_s[k]) or np.allclose(fr.e_s, red.e_s[k], atol=1e-8)
        assert np.allclose(fr.e_u, red.e_u[k], atol=1e-8)
        assert sc.s_chi == pytest.approx(red.s_chi[k], rel=1e-6)
        assert sc.u_chi == pytest.approx(red.u_chi[k], rel=1e-6)
        assert C.frob_inv == pytest.approx(red.frob_inv[k], rel=1e-6)


def test_degenerate_frame_rejected():
    fr = estimate_splitting(cat_map(), (0.1, 0.1), 8, chi=CHI)
    bad = type(fr)(**{**fr.__dict__, "e_u": fr.e_s, "alpha": 0.0})
    with pytest.raises(DegenerateCocycleError):
        build_C(bad, lyapunov_scales(cat_map(), fr, CHI))


def test_lattice_quantization_examples():
    lat = EpsilonLattice(EPS)
    assert quantize_Iε(math.exp(-EPS / 3), lat) == pytest.approx(math.exp(-EPS / 3), rel=1e-15)
    assert quantize_Iε(1.0, lat) == 1.0
    assert lat.level(quantize_Iε(0.005, lat)) == math.ceil(300 * math.log(200)) == 1590
    with pytest.raises(ValueError):
        quantize_Iε(0.0, lat)


def test_unit_frobenius_gives_eps_cubed():
    C = type("C", (), {"frob_inv": 1.0})()
    assert chart_size(C, EPS).Q_tilde == pytest.approx(EPS ** 3, rel=1e-12)


def test_q_epsilon_constant_sequence():
    K = q_window(EPS)
    Q = 1e-7
    q = q_epsilon(np.full(2 * K + 1, Q), EPS)
    weights = np.exp(-np.abs(np.arange(-K, K + 1)) * EPS / 3)
    assert q == pytest.approx(EPS * Q / weights.sum(), rel=1e-12)
    assert q < EPS * Q
    with pytest.raises(WindowTooShortError):
        q_epsilon(np.full(11, Q), EPS)


def test_q_epsilon_ratio_along_a_sequence():
    rng = np.random.default_rng(5)
    K = q_window(EPS)
    lat = EpsilonLattice(EPS)
    Q = lat.value(7550 + np.cumsum(rng.integers(-3, 4, 2 * K + 3)))
    a = q_epsilon(Q[:-2], EPS)
    b = q_epsilon(Q[1:-1], EPS)
    assert math.exp(-EPS / 3) <= b / a <= math.exp(EPS / 3)


def test_linear_map_data_is_constant():
    fm = cat_map()
    rng = np.random.default_rng(6)
    orbit = [rng.random(2)]
    for _ in range(300):
        orbit.append(fm.forward(orbit[-1]))
    red = reduce_orbit(fm, np.array(orbit), CHI, EPS)
    v = red.valid
    assert np.ptp(red.C[v], axis=0).max() < 1e-10


def test_scale_recursion_along_an_orbit():
    fm = make_map("perturbed", delta=0.05)
    rng = np.random.default_rng(7)
    orbit = [rng.random(2)]
    for _ in range(500):
        orbit.append(fm.forward(orbit[-1]))
    red = reduce_orbit(fm, np.array(orbit), CHI, EPS)
    for k in range(150, 300, 10):
        g = np.linalg.norm(fm.d_forward(red.points[k]) @ red.e_s[k])
        rhs = 2 + math.exp(2 * CHI) * g ** 2 * red.s_chi[k + 1] ** 2
        assert red.s_chi[k] ** 2 == pytest.approx(rhs, rel=1e-8)


def test_slow_growth_of_C_inverse():
    fm = make_map("perturbed", delta=0.05)
    rng = np.random.default_rng(8)
    orbit = [rng.random(2)]
    for _ in range(500):
        orbit.append(fm.forward(orbit[-1]))
    red = reduce_orbit(fm, np.array(orbit), CHI, EPS)
    n = 64
    k0 = 150
    for a, b in ((red.op_inv, None), (np.abs(np.linalg.det(red.C)), None)):
        assert abs(math.log(a[k0 + n]) - math.log(a[k0])) / n < 0.05


@pytest.mark.property
@settings(max_examples=50, deadline=None)
@given(s=st.floats(1.5, 50), u=st.floats(1.5, 50), alpha=st.floats(0.01, math.pi - 0.01),
       rot=st.floats(0, 2 * math.pi))
def test_frobenius_identity(s, u, alpha, rot):
    e_s = np.array([math.cos(rot), math.sin(rot)])
    e_u = np.array([math.cos(rot + alpha), math.sin(rot + alpha)])
    fr = type("F", (), {"e_s": e_s, "e_u": e_u, "alpha": alpha})()
    sc = type("S", (), {"s_chi": s, "u_chi": u})()
    C = build_C(fr, sc)
    assert C.frob_inv == pytest.approx(math.sqrt(s * s + u * u) / abs(math.sin(alpha)), rel=1e-10)
    assert C.op_inv == pytest.approx(np.linalg.norm(C.C_inv, 2), rel=1e-9)
    v = np.array([math.cos(rot * 3), math.sin(rot * 3)])
    assert np.linalg.norm(C.C @ v) <= 1 + 1e-12


@pytest.mark.property
@settings(max_examples=80, deadline=None)
@given(value=st.floats(1e-30, 1.0), eps=st.floats(1e-3, 0.2))
def test_quantization_brackets_value(value, eps):
    lat = EpsilonLattice(eps)
    q = quantize_Iε(value, lat)
    assert lat.contains(q)
    assert q <= value * (1 + 1e-12)
    assert value < q * math.exp(eps / 3) * (1 + 1e-12)


@pytest.mark.property
@settings(max_examples=20, deadline=None)
@given(x=st.tuples(st.floats(0, 0.999), st.floats(0, 0.999)))
def test_accepted_frames_have_large_scales(x):
    fm = make_map("perturbed", delta=0.05)
    fr = estimate_splitting(fm, np.array(x), 64, chi=CHI)
    if fr.accepted:
        sc = lyapunov_scales(fm, fr, CHI)
        assert sc.s_chi > math.sqrt(2) and sc.u_chi > math.sqrt(2)
