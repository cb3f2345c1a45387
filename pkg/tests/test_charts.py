import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nuhcode.charts import (DoubleChart, FrameMismatchError, PesinChart, edge, lattice_conditions,
                            local_map, local_map_inverse, neighbor_chart, overlap_consequences,
                            overlaps, validate_epsilon)
from nuhcode.reduction import ChartSize, point_reduction
from nuhcode.surface_model import PRECISE_DPS, cat_map, make_map, to_mp, wrap

CHI, EPS = 0.5, 0.01
LAM_S = (3 - 5 ** 0.5) / 2


def _big_chart(x, eta=0.5, fmap=None):
    """Chart with an artificially large window, so distances are representable in floats."""
    _, _, C, size = point_reduction(fmap or cat_map(), np.asarray(x, float), CHI, EPS)
    big = replace(size, Q_eps=1.0, Q_tilde=1.0)
    return PesinChart(x=np.asarray(x, float), C=C, Q=big, eta=eta)


def test_overlap_is_reflexive(perturbed_sample):
    c = perturbed_sample.chart(next(perturbed_sample.sites()))
    w = overlaps(c, c, EPS)
    assert w and w.distance == 0 and w.ratio_margin == EPS


def test_ratio_outside_window_fails(perturbed_sample):
    c = perturbed_sample.chart(next(perturbed_sample.sites()))
    c2 = c.with_eta(c.eta * math.exp(-2 * EPS))
    assert not overlaps(c, c2, EPS)


def test_translated_cat_charts_overlap_large_window():
    a = _big_chart((0.2, 0.3))
    d = a.eta ** 8 / 2
    b = _big_chart((0.2 + d, 0.3))
    w = overlaps(a, b, EPS)
    assert w and w.C_gap < 1e-15
    assert w.distance == pytest.approx(d, rel=1e-9)
    far = _big_chart((0.2 + 2.5 * d, 0.3))
    assert not overlaps(a, far, EPS)


def test_translated_cat_charts_overlap_at_true_size(cat_sample):
    c = cat_sample.chart(next(cat_sample.sites(margin=1)))
    d = c.eta ** 8 / 2
    with mpmath.workdps(PRECISE_DPS):
        shifted = (c.anchor[0] + mpmath.mpf(d), c.anchor[1])
    moved = replace(c, anchor=shifted, key=None)
    w = overlaps(c, moved, EPS)
    assert w and w.distance == pytest.approx(d, rel=1e-9)
    with mpmath.workdps(PRECISE_DPS):
        shifted = (c.anchor[0] + mpmath.mpf(3 * d), c.anchor[1])
    assert not overlaps(c, replace(c, anchor=shifted, key=None), EPS)


def test_consequences_for_identical_charts(perturbed_sample):
    c = perturbed_sample.chart(next(perturbed_sample.sites()))
    rep = overlap_consequences(c, c, EPS)
    assert rep.ok and rep.c0_distance == 0 and rep.c1_distance == 0


def test_consequences_along_a_sampled_orbit(perturbed_sample):
    for o, k in list(perturbed_sample.sites(margin=1))[::25]:
        c = perturbed_sample.chart((o, k))
        nxt = perturbed_sample.chart((o, k + 1))
        img = neighbor_chart(c, "image", nxt.eta)
        assert overlaps(img, nxt, EPS)
        rep = overlap_consequences(img, nxt, EPS)
        assert rep.ok, rep.failures
        assert rep.nesting_margin > 0
        assert abs(math.log(rep.s_ratio)) <= rep.scale_bound


def test_consequences_with_big_windows():
    a = _big_chart((0.2, 0.3), fmap=make_map("perturbed", delta=0.05))
    b = replace(a, x=a.x + np.array([a.eta ** 8 / 4, 0.0]))
    rep = overlap_consequences(a, b, EPS)
    assert rep.nesting_margin > 0
    assert rep.c1_distance == 0.0


def test_cat_local_map_is_linear(cat_sample):
    site = next(cat_sample.sites(margin=1))
    c = cat_sample.chart(site)
    nxt = cat_sample.chart((site[0], site[1] + 1))
    lm = local_map(cat_map(), c, nxt, c.eta, validate=True, eps=EPS, chi=CHI)
    assert abs(lm.A) == pytest.approx(LAM_S, abs=1e-12)
    assert abs(lm.B) == pytest.approx(1 / LAM_S, abs=1e-12)
    rng = np.random.default_rng(0)
    xi = (rng.random((50, 2)) - 0.5) * 20 * c.Q.Q_eps
    assert np.max(np.abs(lm.h(xi))) <= 1e-12 * c.Q.Q_eps
    assert np.max(np.abs(lm.grad_h(xi))) < 1e-12


def test_perturbed_local_map_bounds(perturbed_sample):
    fm = perturbed_sample.fmap
    for o, k in list(perturbed_sample.sites(margin=1))[::60]:
        c = perturbed_sample.chart((o, k))
        nxt = perturbed_sample.chart((o, k + 1))
        lm = local_map(fm, c, nxt, c.eta, validate=False, chi=CHI)
        rep = lm.validate(EPS)
        assert np.all(rep["h0"] < EPS * c.eta)
        assert rep["hoelder"] <= EPS
        back = local_map_inverse(fm, nxt, c, nxt.eta)
        assert abs(back.A) > math.exp(CHI) and abs(back.B) < math.exp(-CHI)


def test_local_map_composes_back(perturbed_sample):
    fm = perturbed_sample.fmap
    o, k = list(perturbed_sample.sites(margin=1))[30]
    c = perturbed_sample.chart((o, k))
    nxt = perturbed_sample.chart((o, k + 1))
    lm = local_map(fm, c, nxt, c.eta)
    rng = np.random.default_rng(1)
    xi = (rng.random((40, 2)) - 0.5) * 20 * c.Q.Q_eps
    lhs = nxt.C.C @ lm(xi).T
    rhs = (fm.forward(c.apply(xi)) - nxt.x[None, :]).T
    rhs = rhs - np.round(rhs)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_frame_mismatch_raised():
    fm = make_map("perturbed", delta=0.05)
    a = _big_chart((0.2, 0.3), fmap=fm)
    b = _big_chart((0.7, 0.1), fmap=fm)
    with pytest.raises(FrameMismatchError):
        local_map(fm, a, b, 1e-3, validate=True, eps=EPS)


def test_charts_have_lipschitz_constant_at_most_one(perturbed_sample):
    for site in list(perturbed_sample.sites())[::7]:
        assert np.linalg.norm(perturbed_sample.chart(site).C.C, 2) <= 1 + 1e-12


def _fixed_double(cat_sample):
    site = next(s for s in cat_sample.sites(margin=1) if s[0] == 0)
    c = cat_sample.chart(site)
    assert np.allclose(c.x, 0.0)
    return DoubleChart(c, lu=c.Q.level, ls=c.Q.level)


def test_fixed_point_self_loop(cat_sample):
    u = _fixed_double(cat_sample)
    assert edge(u, u, EPS)
    assert u.p_u == pytest.approx(u.chart.Q.Q_eps, rel=1e-12)


def test_lattice_step_off_breaks_edge(cat_sample):
    u = _fixed_double(cat_sample)
    v = DoubleChart(u.chart, lu=u.lu + 1, ls=u.ls)
    assert not lattice_conditions(u, v)
    assert not edge(u, v, EPS)


def test_orbit_edges_and_window_ratio(perturbed_sample):
    rec = perturbed_sample.record(0)
    found = 0
    for o, k in list(perturbed_sample.sites(margin=1)):
        if o != 0 or not rec.stored[k + 1]:
            continue
        u = DoubleChart(perturbed_sample.chart((o, k)), lu=rec.lu[k], ls=rec.ls[k])
        v = DoubleChart(perturbed_sample.chart((o, k + 1)), lu=rec.lu[k + 1], ls=rec.ls[k + 1])
        if edge(u, v, EPS):
            found += 1
            r = v.p_min / u.p_min
            assert math.exp(-EPS) * (1 - 1e-12) <= r <= math.exp(EPS) * (1 + 1e-12)
    assert found > 0


def test_epsilon_ledger():
    assert validate_epsilon(cat_map(), 0.01, 1.0, 0.5).passed
    bad = validate_epsilon(cat_map(), 0.3, 1.0, 0.5)
    assert not bad.passed
    assert "chart atlas size" in [c.name for c in bad.failures()]
    tight = validate_epsilon(cat_map(), 0.01, 1.0, 1e-4)
    assert "stable distance decay" in [c.name for c in tight.failures()]
    assert validate_epsilon(cat_map(), 0.01, 1.0, 0.5).residual


@pytest.mark.property
@settings(max_examples=60, deadline=None)
@given(dx=st.floats(-0.01, 0.01), e1=st.floats(0.3, 1.0), e2=st.floats(0.3, 1.0))
def test_overlap_symmetric(dx, e1, e2):
    a = _big_chart((0.2, 0.3), eta=e1)
    b = _big_chart((wrap(np.array([0.2 + dx, 0.3]))[0], 0.3), eta=e2)
    assert bool(overlaps(a, b, EPS)) == bool(overlaps(b, a, EPS))


@pytest.mark.property
@settings(max_examples=60, deadline=None)
@given(dx=st.floats(0, 0.005), e=st.floats(0.5, 0.9), grow=st.floats(1.0, 1.1),
       skew=st.floats(-0.009, 0.009))
def test_overlap_monotone_in_windows(dx, e, grow, skew):
    a = _big_chart((0.2, 0.3), eta=e)
    b = _big_chart((0.2 + dx, 0.3), eta=e)
    if overlaps(a, b, EPS):
        xi1 = min(e * grow, 1.0)
        xi2 = min(xi1 * math.exp(skew), 1.0)
        # only growth of both windows preserves overlap
        if xi2 >= e and abs(math.log(xi1 / xi2)) < EPS:
            assert overlaps(a.with_eta(xi1), b.with_eta(xi2), EPS)


@pytest.mark.property
@settings(max_examples=30, deadline=None)
@given(x=st.tuples(st.floats(0, 0.999), st.floats(0, 0.999)))
def test_local_map_composition_property(x):
    fm = make_map("perturbed", delta=0.05)
    a = _big_chart(x, eta=1e-3, fmap=fm)
    fx = fm.forward(np.asarray(x, float))
    b = _big_chart(fx, eta=1e-3, fmap=fm)
    lm = local_map(fm, a, b, 1e-3)
    xi = np.array([[1e-4, -2e-4], [-3e-4, 5e-5]])
    lhs = b.C.C @ lm(xi).T
    rhs = (fm.forward(a.apply(xi)) - b.x[None, :]).T
    assert np.max(np.abs(lhs - (rhs - np.round(rhs)))) < 1e-10
