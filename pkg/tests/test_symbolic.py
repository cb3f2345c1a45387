import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nuhcode.markov import build_cover, refine
from nuhcode.surface_model import cat_map, iterate, lift
from nuhcode.symbolic import (MarkovShift, NotRecurrentError, PathError, angle_between,
                              build_hat_graph, count_loops, cylinder_point, gurevich_entropy,
                              loops, periodic_points, polish_periodic, preimage_bound,
                              splitting_from_coding)

CHI, EPS = 0.5, 0.01
A = np.array([[2, 1], [1, 1]])


@pytest.fixture(scope="module")
def cat_parts(cat_coded):
    cover = build_cover(cat_coded)
    part = refine(cover, cat_coded)
    return part, build_hat_graph(part, cat_coded)


def _complete(k):
    return MarkovShift.from_edges(range(k), product(range(k), repeat=2))


def _fixed_rect(part):
    return next(R.id for R in part.rectangles
                if any(np.max(np.abs(lift(m.point))) < 1e-12 for m in R.members))


def _orbit_path(part, coded, length):
    """Rectangle ids along a sampled orbit run, with the coded points."""
    for x in coded:
        seq, pts = [part.rect_of[x.index]], [x]
        cur = x
        while len(seq) < length:
            hits = coded.find(coded.image(cur))
            if not hits or hits[0].index not in part.rect_of:
                break
            cur = hits[0]
            seq.append(part.rect_of[cur.index])
            pts.append(cur)
        if len(seq) == length and np.max(np.abs(lift(x.point))) > 1e-3:
            return seq, pts
    raise LookupError("no orbit run of that length")


def _periodic_set(n):
    """All points of period n of the cat map, by exact rational solve."""
    M = np.linalg.matrix_power(A, n) - np.eye(2, dtype=int)
    d = abs(round(np.linalg.det(M)))
    Minv = np.linalg.inv(M)
    pts = set()
    for m in product(range(d), repeat=2):
        x = np.mod(Minv @ np.array(m, float), 1.0)
        pts.add((round(x[0] * d) % d, round(x[1] * d) % d))
    return d, {(a / d, b / d) for a, b in pts}


def test_hat_graph_basics(cat_parts, cat_coded):
    part, shift = cat_parts
    fixed = _fixed_rect(part)
    assert shift.has_edge(fixed, fixed)
    st_ = shift.degree_stats()
    assert st_["max_out"] <= len(part.rectangles)
    for x, fx in cat_coded.transitions():
        assert shift.has_edge(part.rect_of[x.index], part.rect_of[fx.index])
    assert shift.n_transitions == len(cat_coded.transitions())


def test_single_vertex_cylinder(cat_parts, cat_coded):
    part, _ = cat_parts
    R = part.rectangles[3]
    cp = cylinder_point([R.id], part, cat_coded)
    assert any(m.point is cp.point for m in R.members)


def test_fixed_point_cylinder(cat_parts, cat_coded):
    part, shift = cat_parts
    f = _fixed_rect(part)
    for L in (2, 5, 9):
        cp = cylinder_point([f] * L, part, cat_coded, center=L // 2, shift=shift)
        assert np.max(np.abs(lift(cp.point))) < 1e-8


def test_invalid_path_rejected(cat_parts, cat_coded):
    part, shift = cat_parts
    f = _fixed_rect(part)
    other = next(r for r in shift.vertices if not shift.has_edge(f, r))
    with pytest.raises(PathError):
        cylinder_point([f, other], part, cat_coded, shift=shift)
    with pytest.raises(PathError):
        cylinder_point([], part, cat_coded)


def test_cylinder_diameters_and_equivariance(cat_parts, cat_coded):
    part, shift = cat_parts
    path, pts = _orbit_path(part, cat_coded, 9)
    bounds = []
    for half in (1, 2, 3, 4):
        c = 4
        sub = path[c - half:c + half + 1]
        cp = cylinder_point(sub, part, cat_coded, center=half, shift=shift)
        d = np.linalg.norm(lift(cp.point - pts[c].point))
        assert d <= cp.bound
        bounds.append(cp.bound)
    assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:]))
    a = cylinder_point(path, part, cat_coded, center=4, shift=shift)
    b = cylinder_point(path, part, cat_coded, center=5, shift=shift)
    fa = cat_map().forward(a.point)
    assert np.linalg.norm(lift(fa - b.point)) <= 2 * max(a.bound, b.bound)


def test_self_loop_counts():
    s = MarkovShift.from_edges([0], [(0, 0)])
    assert [count_loops(s, 0, n) for n in range(1, 8)] == [1] * 7
    assert gurevich_entropy(s, 0) == 0.0


@pytest.mark.parametrize("k", [2, 3, 4])
def test_complete_graph_entropy(k):
    s = _complete(k)
    assert [count_loops(s, 0, n) for n in range(1, 7)] == [k ** (n - 1) for n in range(1, 7)]
    assert gurevich_entropy(s, 0) == pytest.approx(math.log(k), abs=1e-12)


def test_vertex_off_cycles_rejected():
    s = MarkovShift.from_edges([0, 1], [(0, 1)])
    with pytest.raises(NotRecurrentError):
        count_loops(s, 0, 3)


def test_loops_one_per_rotation_class():
    s = _complete(2)
    # binary necklaces of length 4: 6
    assert len(loops(s, 4)) == 6
    assert len(loops(s, 1)) == 2


def test_polish_finds_exact_periodic_points():
    fm = cat_map()
    for n in (1, 2, 3):
        d, pts = _periodic_set(n)
        assert d == round(abs((np.trace(np.linalg.matrix_power(A, n))) - 2))
        assert len(pts) == d
        rng = np.random.default_rng(n)
        for p in list(pts)[:5]:
            seed = np.array(p) + rng.normal(scale=1e-9, size=2)
            x, res, _ = polish_periodic(fm, seed, n)
            assert res < 1e-12
            assert min(np.linalg.norm(lift(x - np.array(q))) for q in pts) < 1e-12


def test_pipeline_periodic_points(cat_parts, cat_coded):
    part, shift = cat_parts
    fm = cat_map()
    one = periodic_points(fm, shift, 1, part, cat_coded)
    assert any(np.max(np.abs(lift(c.point))) < 1e-12 for c in one)
    two = periodic_points(fm, shift, 2, part, cat_coded)
    assert len(two) <= _periodic_set(2)[0]
    for c in one + two:
        assert c.residual < 1e-6 and c.in_start_rectangle
        assert np.linalg.norm(lift(iterate(fm, c.point, c.n) - c.point)) < 1e-6


def test_finite_to_one(cat_parts, cat_coded):
    part, _ = cat_parts
    checked = 0
    for x, fx in cat_coded.transitions()[:15]:
        R, S = part.of(x), part.of(fx)
        bound, emp = preimage_bound(x, R, S, part, cat_coded)
        assert 1 <= emp <= bound < math.inf
        checked += 1
    assert checked > 0


def test_splitting_is_the_eigenframe(cat_parts, cat_coded):
    part, _ = cat_parts
    path, _ = _orbit_path(part, cat_coded, 5)
    sp = splitting_from_coding(path, part, cat_coded)
    e_u = np.array([1, (5 ** 0.5 - 1) / 2])
    e_s = np.array([1, -(1 + 5 ** 0.5) / 2])
    assert angle_between(sp.E_u, e_u) < 1e-8
    assert angle_between(sp.E_s, e_s) < 1e-8
    grow = splitting_from_coding(path, part, cat_coded, k_growth=2)
    assert grow.log_growth_s <= -CHI / 2


def test_splitting_hoelder_in_the_window(perturbed_alphabet):
    from nuhcode.alphabet import orbit_to_chain
    from nuhcode.manifolds import shadow
    fm = perturbed_alphabet.sample.fmap
    site = list(perturbed_alphabet.sample.sites(margin=22))[10]
    ch = orbit_to_chain(perturbed_alphabet, site, 21)

    def e_s(sh):
        return sh.chart.chart.C.C @ np.array([1.0, float(sh.V_s.derivative(sh.xi[0]))])

    ref = e_s(shadow(ch, fm, EPS, CHI, 20))
    # windows of radius N agree with the radius-20 window on [-N, N]
    for N in (2, 4, 8, 12):
        gap = angle_between(e_s(shadow(ch, fm, EPS, CHI, N)), ref)
        assert gap <= math.exp(-CHI / 2) ** (N / 3)


def _digraph(n, bits):
    edges = [(i, j) for i in range(n) for j in range(n) if bits[i * n + j]]
    return MarkovShift.from_edges(range(n), edges), edges


@pytest.mark.property
@settings(max_examples=80, deadline=None)
@given(n=st.integers(1, 5), bits=st.lists(st.booleans(), min_size=25, max_size=25),
       L=st.integers(1, 9))
def test_loop_counts_match_matrix_powers(n, bits, L):
    s, _ = _digraph(n, bits)
    rec = s.recurrent_vertices()
    if not rec:
        return
    v = rec[0]
    comp = sorted(s.component(v))
    M = np.zeros((len(comp), len(comp)), dtype=object)
    for a, i in enumerate(comp):
        for b, j in enumerate(comp):
            M[a, b] = int(s.has_edge(i, j))
    P = np.identity(len(comp), dtype=object)
    for _ in range(L):
        P = P.dot(M)
    assert count_loops(s, v, L) == P[comp.index(v), comp.index(v)]


@pytest.mark.property
@settings(max_examples=80, deadline=None)
@given(n=st.integers(1, 5), bits=st.lists(st.booleans(), min_size=25, max_size=25),
       extra=st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=5))
def test_loop_counts_grow_on_supergraphs(n, bits, extra):
    s, edges = _digraph(n, bits)
    bigger = MarkovShift.from_edges(range(n), edges + [(a % n, b % n) for a, b in extra])
    for v in s.recurrent_vertices():
        for L in range(1, 8):
            assert count_loops(s, v, L) <= count_loops(bigger, v, L)
