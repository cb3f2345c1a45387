"""The cover by shadowed sets, fibers and brackets, and its refinement into a partition.

All set operations work on a finite coded sample and are quantized by two
resolutions: points closer than ``IDENTITY_RES`` are the same point, and a
point belongs to a fiber when it lies within ``MEMBERSHIP_RES`` of the curve.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .alphabet import ChainWindow, CoverageGapError, SubordinationError, orbit_to_chain
from .charts import edge
from .manifolds import (ShadowResult, curve_distance, forward_local_map, backward_local_map,
                        intersect, shadow)
from .surface_model import lift, mp_lift_difference, wrap

IDENTITY_RES = 1e-8
MEMBERSHIP_RES = 1e-7
# window lowering used for the second coding of each point
VARIANT_OFFSET = 64


@dataclass(eq=False)
class Coding:
    chain: ChainWindow
    shadow: ShadowResult

    @property
    def center(self):
        return self.chain[self.chain.center]


@dataclass(eq=False)
class CodedPoint:
    """A sampled point with every coding that shadows it."""

    index: int
    point: np.ndarray
    codings: list
    source: tuple | None = None

    @property
    def base(self):
        """Pesin chart and chart coordinates of the first coding."""
        sh = self.codings[0].shadow
        return sh.chart.chart, sh.xi

    def displacement_from(self, chart):
        """Torus vector from the centre of ``chart`` to this point."""
        c, xi = self.base
        if chart.anchor is not None and c.anchor is not None:
            return mp_lift_difference(chart.anchor, c.anchor) + c.C.C @ xi
        return lift(self.point - chart.x)

    def centers(self):
        return {cd.center for cd in self.codings}

    def __repr__(self):
        return f"CodedPoint({self.index}, {self.point.tolist()}, codings={len(self.codings)})"


def _variant(alphabet, site, n):
    """A second chain along the same orbit with lowered windows at both ends."""
    return orbit_to_chain(alphabet, site, n, offsets=(VARIANT_OFFSET, VARIANT_OFFSET))


def code_sample(alphabet, fmap, sites, n, eps, chi, variants=True, seed_value=0.0):
    """Code every site by the chain of its orbit (and a lowered variant).

    Chains have radius ``n + 1`` so that the shifted windows used by the
    Markov checks are available; shadows use radius ``n``. Codings whose
    shadows agree within ``IDENTITY_RES`` are merged into one coded point.
    """
    raw = []
    skipped = 0
    for s in sites:
        try:
            chains = [orbit_to_chain(alphabet, s, n + 1)]
        except (CoverageGapError, SubordinationError):
            skipped += 1
            continue
        if variants:
            try:
                chains.append(_variant(alphabet, s, n + 1))
            except (CoverageGapError, SubordinationError):
                pass
        for ch in chains:
            if not ch.edges_ok(eps):
                raise AssertionError(f"chain at {s} has an invalid edge")
            raw.append((s, Coding(ch, shadow(ch, fmap, eps, chi, n, seed_value))))
    pts = np.array([c.shadow.point for _, c in raw]) if raw else np.zeros((0, 2))
    groups = _cluster(pts, IDENTITY_RES)
    coded = []
    for g in groups:
        s0, c0 = raw[g[0]]
        coded.append(CodedPoint(index=len(coded), point=c0.shadow.point,
                                codings=[raw[i][1] for i in g], source=s0))
    return CodedSample(coded, skipped, n, eps, chi, fmap)


def _cluster(pts, res):
    if len(pts) == 0:
        return []
    tree = cKDTree(np.mod(pts, 1.0), boxsize=1.0)
    seen = np.zeros(len(pts), dtype=bool)
    groups = []
    for i in range(len(pts)):
        if seen[i]:
            continue
        g = [j for j in sorted(tree.query_ball_point(np.mod(pts[i], 1.0), r=res)) if not seen[j]]
        seen[g] = True
        groups.append(g)
    return groups


@dataclass
class CodedSample:
    points: list
    skipped: int
    n: int
    eps: float
    chi: float
    fmap: object
    _tree: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def find(self, p, res=None):
        """Coded points within ``res`` (default ``IDENTITY_RES``) of a float torus point."""
        res = IDENTITY_RES if res is None else res
        if self._tree is None:
            self._tree = cKDTree(np.mod([c.point for c in self.points], 1.0), boxsize=1.0)
        return [self.points[i] for i in sorted(self._tree.query_ball_point(np.mod(p, 1.0), r=res))]

    def image(self, x):
        """``f(x)`` as a float point, via the local map along the first coding."""
        cd = x.codings[0]
        ch = cd.chain
        c = ch.center
        lm = forward_local_map(self.fmap, ch[c], ch[c + 1])
        xi1 = lm(cd.shadow.xi[None, :])[0]
        nxt = ch[c + 1].chart
        return wrap(nxt.x + nxt.C.C @ xi1)

    def transitions(self):
        """Pairs ``(x, f(x))`` of coded points whose image is also coded."""
        out = []
        for x in self.points:
            hits = self.find(self.image(x))
            if hits:
                out.append((x, hits[0]))
        return out


# ---------------------------------------------------------------------------
# the cover

@dataclass(eq=False)
class ZSet:
    vertex: object
    members: list
    fibers: dict = field(default_factory=dict)

    def __contains__(self, x):
        return any(m is x for m in self.members)

    @property
    def chart(self):
        return self.vertex.chart


@dataclass
class Cover:
    zsets: list
    by_vertex: dict
    member_of: dict
    neighbors: dict
    filter_violations: list
    eps: float

    @property
    def max_degree(self):
        return max((len(v) for v in self.neighbors.values()), default=0)

    def containing(self, x):
        return [self.zsets[i] for i in self.member_of.get(x.index, ())]

    def index_of(self, Z):
        return self.by_vertex[Z.vertex]


def _filter_ok(v, w, eps):
    """Window comparison for intersecting cover elements, in lattice levels."""
    lim = eps ** (1.0 / 3.0) / (eps / 3.0)
    return (w.lu - v.lu <= lim and w.ls - v.ls <= lim
            and v.lu - w.lu <= lim and v.ls - w.ls <= lim)


def build_cover(coded, eps=None):
    """Group coded points by the centre vertex of their codings."""
    eps = coded.eps if eps is None else eps
    by_vertex = {}
    zsets = []
    member_of = defaultdict(list)
    for x in coded:
        for v in x.centers():
            if v not in by_vertex:
                by_vertex[v] = len(zsets)
                zsets.append(ZSet(vertex=v, members=[]))
            i = by_vertex[v]
            zsets[i].members.append(x)
            member_of[x.index].append(i)
    neighbors = defaultdict(set)
    for ids in member_of.values():
        for i in ids:
            neighbors[i].add(i)
        for i, j in combinations(sorted(set(ids)), 2):
            neighbors[i].add(j)
            neighbors[j].add(i)
    violations = [(i, j) for i in neighbors for j in neighbors[i]
                  if i < j and not _filter_ok(zsets[i].vertex, zsets[j].vertex, eps)]
    return Cover(zsets=zsets, by_vertex=by_vertex, member_of=dict(member_of),
                 neighbors=dict(neighbors), filter_violations=violations, eps=eps)


# ---------------------------------------------------------------------------
# fibers and brackets

def _curve_offsets(V):
    """Torus vectors from the chart centre to the grid points of a curve."""
    return V.points() @ V.chart.chart.C.C.T


def distance_to_curve(x, V):
    d = x.displacement_from(V.chart.chart)
    return float(np.min(np.linalg.norm(_curve_offsets(V) - d, axis=1)))


@dataclass
class Fibers:
    V_s: object
    V_u: object
    W_s: list
    W_u: list
    coding_spread: float

    @property
    def well_defined(self):
        return self.coding_spread < MEMBERSHIP_RES


def _codings_at(x, Z):
    cds = [cd for cd in x.codings if cd.center == Z.vertex]
    if not cds:
        raise ValueError("point is not in this cover element")
    return cds


def fibers(x, Z):
    """``V^s, V^u`` of ``x`` in ``Z`` and the members lying on them."""
    key = x.index
    if key in Z.fibers:
        return Z.fibers[key]
    cds = _codings_at(x, Z)
    Vs, Vu = cds[0].shadow.V_s, cds[0].shadow.V_u
    spread = 0.0
    for cd in cds[1:]:
        spread = max(spread, curve_distance(Vs, cd.shadow.V_s), curve_distance(Vu, cd.shadow.V_u))
    Ws = [y for y in Z.members if distance_to_curve(y, Vs) <= MEMBERSHIP_RES]
    Wu = [y for y in Z.members if distance_to_curve(y, Vu) <= MEMBERSHIP_RES]
    res = Fibers(V_s=Vs, V_u=Vu, W_s=Ws, W_u=Wu, coding_spread=spread)
    Z.fibers[key] = res
    return res


def splice(past, future):
    """Chain following ``past`` for indices ``<= 0`` and ``future`` for indices ``>= 0``."""
    if past.center - past.lo != future.center - future.lo or len(past) != len(future):
        raise ValueError("codings must share their window layout")
    c = past.center - past.lo
    if past.symbols[c] != future.symbols[c]:
        raise ValueError("codings do not share the centre symbol")
    return ChainWindow(past.symbols[:c] + future.symbols[c:], past.lo, past.center, "spliced")


def bracket(x, y, Z, coded=None, record=True):
    """``[x, y]_Z``: intersection of ``V^u(x, Z)`` with ``V^s(y, Z)``."""
    cx, cy = _codings_at(x, Z)[0], _codings_at(y, Z)[0]
    Vu = cx.shadow.V_u
    Vs = cy.shadow.V_s
    P = intersect(Vu, Vs)
    chain = splice(cx.chain, cy.chain)
    c = chain.center
    if not (edge(chain[c - 1], chain[c], Z.vertex.chart.Q.epsilon)
            and edge(chain[c], chain[c + 1], Z.vertex.chart.Q.epsilon)):
        raise AssertionError("spliced chain breaks an edge")
    sh = ShadowResult(point=P.point, xi=P.xi, chart=Z.vertex, V_u=Vu, V_s=Vs,
                      n_used=min(cx.shadow.n_used, cy.shadow.n_used),
                      convergence_gap=max(cx.shadow.convergence_gap, cy.shadow.convergence_gap))
    z = CodedPoint(index=-1, point=P.point, codings=[Coding(chain, sh)])
    for m in Z.members:
        if np.linalg.norm(m.displacement_from(Z.chart) - z.displacement_from(Z.chart)) < IDENTITY_RES:
            return m
    if record:
        z.index = (max((p.index for p in coded), default=-1) + 1) if coded is not None else -1
        Z.members.append(z)
        Z.fibers.clear()
        if coded is not None:
            coded.points.append(z)
            coded._tree = None
    return z


def bracket_commutes(x, y, Z0, cover, coded):
    """Distance between ``f([x, y]_{Z0})`` and ``[f x, f y]_{Z1}`` (``None`` if not applicable)."""
    cx, cy = _codings_at(x, Z0)[0], _codings_at(y, Z0)[0]
    c = cx.chain.center
    v1 = cx.chain[c + 1]
    if cy.chain[c + 1] != v1 or v1 not in cover.by_vertex:
        return None
    fx = [p for p in coded.find(coded.image(x)) if v1 in p.centers()]
    fy = [p for p in coded.find(coded.image(y)) if v1 in p.centers()]
    if not fx or not fy:
        return None
    Z1 = cover.zsets[cover.by_vertex[v1]]
    z = bracket(x, y, Z0, record=False)
    lm = forward_local_map(coded.fmap, Z0.vertex, v1)
    fz = lm(z.codings[0].shadow.xi[None, :])[0]
    w = bracket(fx[0], fy[0], Z1, record=False)
    C1 = v1.chart.C.C
    return float(np.linalg.norm(C1 @ (fz - w.codings[0].shadow.xi)))


@dataclass
class MarkovReport:
    checked: int
    violations: int
    worst: float


def symbolic_markov_check(x, cover, coded):
    """``f[W^s(x, Z(v0))] ⊂ W^s(f x, Z(v1))`` and the mirror statement for ``W^u``."""
    fm = coded.fmap
    eps, chi = coded.eps, coded.chi
    checked = violations = 0
    worst = 0.0
    for cd in x.codings:
        ch = cd.chain
        c = ch.center
        v0, v1, vm = ch[c], ch[c + 1], ch[c - 1]
        Z0 = cover.zsets[cover.by_vertex[v0]]
        fib = fibers(x, Z0)
        n = cd.shadow.n_used
        Vs1 = shadow(ch.shift(1), fm, eps, chi, n).V_s
        Vu1 = shadow(ch.shift(-1), fm, eps, chi, n).V_u
        fwd = forward_local_map(fm, v0, v1)
        bwd = backward_local_map(fm, vm, v0)
        C0inv = v0.chart.C.C_inv
        for ys, lm, V in ((fib.W_s, fwd, Vs1), (fib.W_u, bwd, Vu1)):
            for y in ys:
                xi = C0inv @ y.displacement_from(v0.chart)
                img = lm(xi[None, :])[0]
                d = float(np.min(np.linalg.norm((V.points() - img) @ V.chart.chart.C.C.T, axis=1)))
                checked += 1
                worst = max(worst, d)
                if d > MEMBERSHIP_RES:
                    violations += 1
    return MarkovReport(checked, violations, worst)


# ---------------------------------------------------------------------------
# refinement

@dataclass(eq=False)
class Rectangle:
    id: int
    profile: frozenset
    members: list

    def __contains__(self, x):
        return any(m is x for m in self.members)

    @property
    def defining_sets(self):
        return sorted(self.profile)


@dataclass
class Partition:
    rectangles: list
    rect_of: dict
    cover: Cover
    disjoint: bool
    containment_violations: list
    count_violations: list
    tii_violations: int
    unstable_profiles: int

    def of(self, x):
        return self.rectangles[self.rect_of[x.index]]


def _meets(V, Zj):
    return any(distance_to_curve(y, V) <= MEMBERSHIP_RES for y in Zj.members)


def profile(x, cover):
    """T-sets containing ``x``, as tuples ``(i, j, alpha, beta)``."""
    out = set()
    for i in cover.member_of.get(x.index, ()):
        Zi = cover.zsets[i]
        fib = fibers(x, Zi)
        for j in sorted(cover.neighbors.get(i, ())):
            Zj = cover.zsets[j]
            a = "u" if _meets(fib.V_u, Zj) else "-"
            b = "s" if _meets(fib.V_s, Zj) else "-"
            out.add((i, j, a, b))
    return frozenset(out)


def refine(cover, coded):
    """Classes of coded points with identical T-set profiles."""
    classes = {}
    rect_of = {}
    tii_bad = 0
    for x in coded:
        if x.index not in cover.member_of:
            continue
        pr = profile(x, cover)
        for i in cover.member_of[x.index]:
            if (i, i, "u", "s") not in pr:
                tii_bad += 1
        classes.setdefault(pr, []).append(x)
    rects = [Rectangle(id=k, profile=pr, members=ms) for k, (pr, ms) in enumerate(classes.items())]
    for R in rects:
        for m in R.members:
            rect_of[m.index] = R.id
    # no point in two rectangles, also at the identity resolution
    disjoint = True
    pts = [(R.id, m) for R in rects for m in R.members]
    if pts:
        tree = cKDTree(np.mod([m.point for _, m in pts], 1.0), boxsize=1.0)
        for a, b in tree.query_pairs(IDENTITY_RES):
            if pts[a][0] != pts[b][0]:
                disjoint = False
    containment = []
    count_bad = []
    per_z = defaultdict(set)
    for R in rects:
        zs = set()
        for m in R.members:
            zs.update(cover.member_of[m.index])
        for i in zs:
            per_z[i].add(R.id)
            Zi = cover.zsets[i]
            if not all(m in Zi for m in R.members):
                containment.append((R.id, i))
    for i, rs in per_z.items():
        n_t = 4 * len(cover.neighbors.get(i, ()))
        if n_t < 60 and len(rs) > 2 ** n_t:
            count_bad.append(i)
    unstable = sum(1 for Z in cover.zsets for x in Z.members if not fibers(x, Z).well_defined)
    return Partition(rectangles=rects, rect_of=rect_of, cover=cover, disjoint=disjoint,
                     containment_violations=containment, count_violations=count_bad,
                     tii_violations=tii_bad, unstable_profiles=unstable)


@dataclass
class RectangleFiberReport:
    W_s: list
    W_u: list
    product_ok: bool
    bracket_ok: bool
    markov_checked: int
    markov_violations: int
    contraction_ratio: float


def rectangle_fibers(x, R, partition, coded, k_max=10):
    """Fibers of ``x`` in ``R`` and a report on the product and Markov structure."""
    cover = partition.cover
    zs = cover.containing(x)
    Ws = [y for y in R.members if all(y in fibers(x, Z).W_s for Z in zs)]
    Wu = [y for y in R.members if all(y in fibers(x, Z).W_u for Z in zs)]
    both = [y for y in Ws if any(y is w for w in Wu)]
    product_ok = len(both) == 1 and both[0] is x
    bracket_ok = True
    for y in R.members:
        common = [Z for Z in zs if y in Z]
        if not common:
            continue
        z = bracket(x, y, common[0], record=False)
        hits = [m for m in R.members
                if np.linalg.norm(m.displacement_from(common[0].chart)
                                  - z.displacement_from(common[0].chart)) < IDENTITY_RES]
        bracket_ok &= bool(hits)
    checked = bad = 0
    fx = coded.find(coded.image(x))
    if fx and fx[0].index in partition.rect_of:
        R1 = partition.of(fx[0])
        target = rectangle_members_on(fx[0], R1, partition, "s")
        for y in Ws:
            img = coded.find(coded.image(y))
            checked += 1
            if not img or not any(img[0] is t for t in target):
                bad += 1
    ratio = 0.0
    for y in Ws:
        if y is x:
            continue
        d0 = np.linalg.norm(lift(y.point - x.point))
        a, b = x.point, y.point
        for _ in range(k_max):
            a, b = coded.fmap.forward(a), coded.fmap.forward(b)
        ratio = max(ratio, float(np.linalg.norm(lift(b - a)) / d0))
    return RectangleFiberReport(W_s=Ws, W_u=Wu, product_ok=product_ok, bracket_ok=bracket_ok,
                                markov_checked=checked, markov_violations=bad,
                                contraction_ratio=ratio)


def rectangle_members_on(x, R, partition, kind):
    zs = partition.cover.containing(x)
    attr = "W_s" if kind == "s" else "W_u"
    return [y for y in R.members if all(y in getattr(fibers(x, Z), attr) for Z in zs)]


def fiber_dichotomy_violations(cover):
    """Pairs of members whose ``W^u`` (or ``W^s``) sets overlap without being equal."""
    bad = 0
    for Z in cover.zsets:
        for attr in ("W_u", "W_s"):
            sets = [frozenset(y.index for y in getattr(fibers(x, Z), attr)) for x in Z.members]
            for a, b in combinations(sets, 2):
                if a != b and a & b:
                    bad += 1
    return bad
