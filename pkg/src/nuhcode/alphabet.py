"""Sampled orbits, the chart alphabet, the chart graph and chains built from true orbits.

Orbits are generated forward from random seeds at high precision, reduced by
the orbit sweep of :mod:`nuhcode.reduction`, and stored together with their
chart sizes, the window weights ``q_eps`` and the maximal subordinated window
sequences. Everything that refers to a window size is kept as an integer level
of the lattice ``{exp(-l eps / 3)}``; one factor ``e^eps`` is three levels.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, fields

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree

from .charts import DoubleChart, Neighbor, PesinChart, edge, overlaps
from .reduction import (ChartSize, EpsilonLattice, LinearizationC, OrbitReduction,
                        DEFAULT_HORIZON, q_window, reduce_orbit)
from .surface_model import ToralAutomorphism, mp_lift_difference, precise_orbit

# levels per factor e^eps
STEP = 3
# extra steps kept around each stored point for the window recursions
CONTEXT = 64
# the longest exact period looked for in a sampled orbit
MAX_PERIOD = 64
# alphabet windows reach this many levels below Q_eps
DEFAULT_DEPTH = 240


class NoHyperbolicityError(RuntimeError):
    """No sampled point passed the exponent margin test."""


class CoverageGapError(LookupError):
    """An orbit point has no alphabet chart within the net tolerance."""


class EmptyGraphError(RuntimeError):
    pass


class SubordinationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# sampling

@dataclass
class OrbitRecord:
    """One high-precision orbit with its reduction data.

    ``Q_level`` is the level of ``Q_eps``; ``q_level`` the level of the
    quantized ``q_eps`` (``-1`` where the window does not fit); ``lu``/``ls``
    the maximal window sequences subordinated to ``Q_eps`` (levels).
    ``stored`` marks points that are accepted and have full context.
    """

    orbit_id: int
    anchors: list
    points: np.ndarray
    red: OrbitReduction
    Q_level: np.ndarray
    q_level: np.ndarray
    log_q: np.ndarray
    lu: np.ndarray
    ls: np.ndarray
    stored: np.ndarray
    period: int = 0

    def __len__(self):
        return len(self.anchors)


@dataclass
class HyperbolicSample:
    fmap: object
    chi: float
    eps: float
    beta: float
    horizon: int
    window: int
    q_radius: int
    orbits: list
    accepted_fraction: float
    _charts: dict = field(default_factory=dict, repr=False)

    @property
    def lattice(self):
        return EpsilonLattice(self.eps)

    @property
    def n_points(self):
        return int(sum(r.stored.sum() for r in self.orbits))

    def sites(self, margin=0):
        """Stored ``(orbit_id, index)`` pairs whose ``margin`` neighbours are stored too."""
        for r in self.orbits:
            ok = r.stored.copy()
            if margin:
                run = np.convolve(r.stored.astype(int), np.ones(2 * margin + 1, dtype=int), "same")
                ok &= run == 2 * margin + 1
            for k in np.flatnonzero(ok):
                yield (r.orbit_id, int(k))

    def record(self, o):
        return self.orbits[o]

    def point(self, site):
        o, k = site
        return self.orbits[o].points[k]

    def _linear(self, o, k):
        r = self.orbits[o].red
        return LinearizationC(C=r.C[k], C_inv=r.C_inv[k], frob_inv=float(r.frob_inv[k]),
                              op_inv=float(r.op_inv[k]))

    def size(self, o, k):
        rec = self.orbits[o]
        lattice = self.lattice
        level = int(rec.Q_level[k])
        q_eps = math.exp(rec.log_q[k]) if rec.q_level[k] >= 0 else None
        return ChartSize(Q_tilde=math.exp(rec.red.log_Q_tilde[k]),
                         Q_eps=float(lattice.value(level)), level=level, epsilon=self.eps,
                         q_eps=q_eps, log_Q_tilde=float(rec.red.log_Q_tilde[k]))

    def neighbor(self, o, k):
        rec = self.orbits[o]
        return Neighbor(x=rec.points[k], C=self._linear(o, k), Q=self.size(o, k),
                        anchor=rec.anchors[k])

    def chart(self, site):
        """Pesin chart at an orbit point, with its image and preimage data."""
        if site in self._charts:
            return self._charts[site]
        o, k = site
        rec = self.orbits[o]
        size = self.size(o, k)
        c = PesinChart(x=rec.points[k], C=self._linear(o, k), Q=size, eta=size.Q_eps,
                       anchor=rec.anchors[k], image=self.neighbor(o, k + 1),
                       preimage=self.neighbor(o, k - 1), key=site)
        self._charts[site] = c
        return c


def _seeds(fmap, n_orbits, rng, extra_seeds):
    seeds = [tuple(s) for s in rng.random((n_orbits, 2))]
    if extra_seeds is None:
        # the origin is fixed by every automorphism; include its orbit
        extra_seeds = [(0.0, 0.0)] if isinstance(fmap, ToralAutomorphism) else []
    return list(extra_seeds) + seeds


def _exact_period(anchors, max_period=MAX_PERIOD):
    a0 = anchors[0]
    for p in range(1, min(max_period, len(anchors) - 1) + 1):
        if anchors[p][0] == a0[0] and anchors[p][1] == a0[1]:
            if all(anchors[k] == anchors[k % p] for k in range(0, len(anchors), max(1, p))):
                return p
    return 0


def _make_periodic(red, period):
    """Copy the data of one central period over the whole orbit."""
    T = red.points.shape[0]
    ref = T // 2 - (T // 2) % period
    idx = ref + (np.arange(T) % period)
    for f in fields(red):
        arr = getattr(red, f.name)
        if isinstance(arr, np.ndarray) and arr.shape[:1] == (T,):
            setattr(red, f.name, arr[idx].copy())
    red.valid[:] = red.valid[ref:ref + period].all()


def window_weights(eps, radius):
    k = np.arange(-radius, radius + 1)
    return -np.abs(k) * eps / 3.0


def q_levels(log_Q_tilde_unused, Q_level, valid, eps, radius):
    """Log ``q_eps`` and its lattice floor level along one orbit.

    ``1/q_k = (1/eps) sum_{|j| <= radius} e^{-|j| eps/3} / Q_{k+j}``, evaluated by
    a convolution with a common scale factor.
    """
    T = len(Q_level)
    lattice = EpsilonLattice(eps)
    logQ = lattice.log_value(Q_level)
    a = -logQ
    shift = a[valid].max() if valid.any() else 0.0
    vals = np.where(valid, np.exp(a - shift), 0.0)
    kern = np.exp(window_weights(eps, radius))
    s = np.convolve(vals, kern, mode="same")
    # a window is usable only if every Q in it is defined
    bad = np.convolve((~valid).astype(float), np.ones(2 * radius + 1), mode="same") > 0.5
    idx = np.arange(T)
    bad |= (idx < radius) | (idx >= T - radius)
    log_q = np.full(T, np.nan)
    ok = ~bad & (s > 0)
    log_q[ok] = math.log(eps) - (np.log(s[ok]) + shift)
    level = np.full(T, -1, dtype=np.int64)
    for k in np.flatnonzero(ok):
        level[k] = lattice.floor_level(log_q[k])
    return log_q, level


def subordinate_levels(Q_levels, floor_levels=None, step=STEP):
    """Maximal window sequences subordinated to ``Q`` (levels; larger means smaller).

    ``lu[k] = max_{n >= 0} (Q[k-n] - step n)`` and ``ls[k] = max_{n >= 0} (Q[k+n] - step n)``
    with the maximum taken over the available window. Equivalently
    ``lu[k+1] = max(lu[k] - step, Q[k+1])`` and ``ls[k-1] = max(ls[k] - step, Q[k-1])``.
    If ``floor_levels`` is given, checks ``max(lu, ls) <= floor`` (the floor is a
    lower bound on the window values).
    """
    Q = np.asarray(Q_levels, dtype=np.int64)
    if floor_levels is not None:
        fl = np.asarray(floor_levels, dtype=np.int64)
        if np.any(fl < Q):
            raise SubordinationError("floor exceeds Q")
        if len(fl) > 1 and np.any(np.abs(np.diff(fl)) > step):
            raise SubordinationError("floor ratio outside [e^-eps, e^eps]")
    n = len(Q)
    lu = Q.copy()
    for k in range(1, n):
        lu[k] = max(lu[k - 1] - step, Q[k])
    ls = Q.copy()
    for k in range(n - 2, -1, -1):
        ls[k] = max(ls[k + 1] - step, Q[k])
    if floor_levels is not None and np.any(np.maximum(lu, ls) > fl):
        raise SubordinationError("windows fall below the floor")
    return lu, ls


def subordinate(Q_seq, eps, q_floor=None):
    """Real-valued front end of :func:`subordinate_levels`.

    ``Q_seq`` and ``q_floor`` are lattice elements; returns ``(p_u, p_s)`` arrays.
    """
    lattice = EpsilonLattice(eps)
    Ql = [lattice.level(q) for q in Q_seq]
    fl = None if q_floor is None else [lattice.level(q) for q in q_floor]
    lu, ls = subordinate_levels(Ql, fl)
    return lattice.value(lu), lattice.value(ls)


def sample_orbits(fmap, chi, eps, n_orbits=100, orbit_len=1000, horizon=DEFAULT_HORIZON,
                  window=40, beta=1.0, seed=0, extra_seeds=None, q_share=0.01):
    """Sample ``n_orbits`` orbits and keep ``orbit_len`` points with full context on each.

    Each orbit is computed forward from a random seed at high precision with
    enough padding for the frame horizon, the scale truncation, the ``q_eps``
    window and the chain windows.
    """
    if min(n_orbits, orbit_len, horizon, window) <= 0 and n_orbits != 0:
        raise ValueError("parameters must be positive")
    rng = np.random.default_rng(seed)
    radius = q_window(eps, q_share)
    pad = 2 * horizon + radius + window + CONTEXT
    T = orbit_len + 2 * pad
    anchors, floats = [], []
    for s in _seeds(fmap, n_orbits, rng, extra_seeds):
        a, p = precise_orbit(fmap, s, 0, T - 1)
        anchors.append(a)
        floats.append(p)
    red_all = reduce_orbit(fmap, np.stack(floats), chi, eps, beta, horizon)

    records = []
    n_valid = n_acc = 0
    for o, a in enumerate(anchors):
        red = OrbitReduction(**{f.name: (getattr(red_all, f.name)[o]
                                         if getattr(red_all, f.name).ndim >= 1 else
                                         getattr(red_all, f.name))
                                for f in fields(red_all)})
        period = _exact_period(a)
        if period:
            _make_periodic(red, period)
        valid = red.valid.copy()
        log_q, ql = q_levels(red.log_Q_tilde, red.Q_level, valid, eps, radius)
        lu, ls = subordinate_levels(red.Q_level)
        idx = np.arange(T)
        stored = ((idx >= pad) & (idx < T - pad) & (ql >= 0) & red.accepted & valid)
        n_valid += int(((idx >= pad) & (idx < T - pad) & valid).sum())
        n_acc += int(stored.sum())
        records.append(OrbitRecord(orbit_id=o, anchors=a, points=floats[o], red=red,
                                   Q_level=red.Q_level.astype(np.int64), q_level=ql,
                                   log_q=log_q, lu=lu, ls=ls, stored=stored, period=period))
    frac = n_acc / n_valid if n_valid else 0.0
    if n_acc == 0:
        raise NoHyperbolicityError(
            f"no sampled point is hyperbolic at chi={chi} (accepted fraction 0)")
    return HyperbolicSample(fmap=fmap, chi=chi, eps=eps, beta=beta, horizon=horizon,
                            window=window, q_radius=radius, orbits=records,
                            accepted_fraction=frac)


# ---------------------------------------------------------------------------
# alphabet

def net_radius(m):
    """Log of the net tolerance ``e^{-8(m+2)}`` of bucket ``m``."""
    return -8.0 * (m + 2)


def _eta_buckets(top_level, depth, eps):
    """Buckets ``m`` with ``e^{-(m+2)} <= eta < e^{-(m-2)}`` for some window in range."""
    lattice = EpsilonLattice(eps)
    hi = -float(lattice.log_value(top_level))           # -log of the largest eta
    lo = -float(lattice.log_value(top_level + depth))   # -log of the smallest eta
    return range(max(0, math.floor(hi) - 1), math.floor(lo) + 3)


@dataclass
class Alphabet:
    """Deduplicated charts with their admissible window levels.

    ``charts[i]`` is a :class:`PesinChart`; windows ``eta`` range over lattice
    levels ``top[i] .. top[i] + depth``. ``owner`` maps every stored orbit point
    to the index of the chart that represents it.
    """

    sample: HyperbolicSample
    charts: list
    keys: list
    top: np.ndarray
    depth: int
    owner: dict
    bucket_counts: dict
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {c.site: i for i, c in enumerate(self.charts)}

    def __len__(self):
        return len(self.charts)

    @property
    def eps(self):
        return self.sample.eps

    def eta_levels(self, i):
        return range(int(self.top[i]), int(self.top[i]) + self.depth + 1)

    def admits(self, i, level):
        return int(self.top[i]) <= level <= int(self.top[i]) + self.depth

    def count_above(self, t):
        """Number of pairs (chart, eta) with ``eta > t``."""
        if t <= 0:
            raise ValueError("t must be positive")
        lattice = EpsilonLattice(self.eps)
        r = -math.log(t) / lattice.step
        # eta > t  <=>  level < r
        lim = math.ceil(r) - 1 if float(r).is_integer() else math.floor(r)
        hi = np.minimum(self.top + self.depth, lim)
        return int(np.clip(hi - self.top + 1, 0, None).sum())

    def chart_of(self, site):
        """Alphabet chart representing a stored orbit point."""
        try:
            return self.charts[self.owner[site]]
        except KeyError:
            raise CoverageGapError(f"no alphabet chart for {site}") from None


def _net_match(sample, a, b, log_tol):
    """Net condition between orbit points ``a``, ``b`` for ``i = -1, 0, 1``."""
    (oa, ka), (ob, kb) = a, b
    ra, rb = sample.orbits[oa], sample.orbits[ob]
    for i in (-1, 0, 1):
        if abs(int(ra.Q_level[ka + i]) - int(rb.Q_level[kb + i])) >= 1:
            return False
        d = float(np.linalg.norm(mp_lift_difference(ra.anchors[ka + i], rb.anchors[kb + i])))
        gap = float(np.linalg.norm(ra.red.C[ka + i] - rb.red.C[kb + i], 2))
        total = d + gap
        if total > 0 and math.log(total) >= log_tol:
            return False
    return True


def coarse_grain(sample, eps=None, depth=DEFAULT_DEPTH, sites=None):
    """Greedy net of the stored orbit points, bucket by bucket.

    Points are bucketed by ``k = round(-log Q_eps)`` and by the window scales
    ``m`` they can carry. Within a bucket a point is absorbed by an earlier kept
    point when positions and matrices agree to ``e^{-8(m+2)}`` and chart sizes
    to ``e^{eps/3}`` at ``f^{-1}x, x, f x``. A point must be kept in some bucket
    to become a chart; it is absorbed only if every bucket absorbs it.
    """
    eps = sample.eps if eps is None else eps
    if sites is None:
        sites = list(sample.sites())
    if not sites:
        raise ValueError("empty sample")
    lattice = EpsilonLattice(eps)
    pts = np.array([sample.point(s) for s in sites])
    tree = cKDTree(pts, boxsize=1.0)
    kept_by_bucket = defaultdict(list)
    kept_set = {}
    owner = {}
    counts = defaultdict(int)
    for idx, s in enumerate(sites):
        o, k = s
        top = int(sample.orbits[o].Q_level[k])
        kq = int(round(-float(lattice.log_value(top))))
        absorbed_by = None
        for m in _eta_buckets(top, depth, eps):
            log_tol = net_radius(m)
            hit = None
            near = tree.query_ball_point(pts[idx], r=max(math.exp(log_tol), 1e-300))
            near = [j for j in near if j < idx and j in kept_set]
            for j in sorted(near):
                if j in kept_by_bucket[(kq, m)] and _net_match(sample, s, sites[j], log_tol):
                    hit = j
                    break
            if hit is None:
                absorbed_by = None
                kept_by_bucket[(kq, m)].append(idx)
                counts[(kq, m)] += 1
            elif absorbed_by is None or absorbed_by == hit:
                absorbed_by = hit if absorbed_by is None else absorbed_by
        if absorbed_by is not None and all(idx not in kept_by_bucket[(kq, m)]
                                           for m in _eta_buckets(top, depth, eps)):
            owner[s] = kept_set[absorbed_by]
        else:
            kept_set[idx] = len(kept_set)
            owner[s] = kept_set[idx]
    order = sorted(kept_set, key=kept_set.get)
    charts = [sample.chart(sites[j]) for j in order]
    keys = [sites[j] for j in order]
    top = np.array([c.Q.level for c in charts], dtype=np.int64)
    return Alphabet(sample=sample, charts=charts, keys=keys, top=top, depth=depth,
                    owner=owner, bucket_counts=dict(counts))


# ---------------------------------------------------------------------------
# chains

@dataclass
class ChainWindow:
    """Symbols ``v_i`` for ``i`` in ``[lo, hi]``; ``symbols[j]`` is ``v_{lo + j}``.

    ``center`` is the index treated as 0 by :meth:`radius` and the shadowing
    code; :meth:`shift` moves it, which realizes the left shift on windows.
    """

    symbols: list
    lo: int
    center: int = 0
    source: object = None

    @property
    def hi(self):
        return self.lo + len(self.symbols) - 1

    def __getitem__(self, i):
        if not self.lo <= i <= self.hi:
            raise IndexError(i)
        return self.symbols[i - self.lo]

    def __len__(self):
        return len(self.symbols)

    @property
    def radius(self):
        return min(self.center - self.lo, self.hi - self.center)

    def shift(self, k=1):
        return ChainWindow(self.symbols, self.lo, self.center + k, self.source)

    def sub(self, a, b, center=None):
        """Sub-window over ``[a, b]``."""
        if a < self.lo or b > self.hi or a > b:
            raise IndexError("sub-window outside the window")
        c = self.center if center is None else center
        return ChainWindow(self.symbols[a - self.lo:b - self.lo + 1], a, c, self.source)

    def around(self, n):
        """The window ``[center - n, center + n]``."""
        return self.sub(self.center - n, self.center + n)

    def edges_ok(self, eps):
        return all(edge(self.symbols[j], self.symbols[j + 1], eps)
                   for j in range(len(self.symbols) - 1))

    def repeats(self):
        """Whether some symbol repeats strictly before and strictly after the centre."""
        past = self.symbols[: self.center - self.lo]
        future = self.symbols[self.center - self.lo + 1:]
        return (len(set(past)) < len(past), len(set(future)) < len(future))


def _masked(levels, valid):
    # invalid positions must not feed the recursions
    return np.where(valid, levels, 0)


def orbit_levels(alphabet, o):
    """Per-orbit window data, cached on the alphabet.

    Returns ``(QX, pu, ps, eta)``: chart-size levels of the representing
    charts, the windows subordinated to them, and the orbit windows
    subordinated to ``e^{-eps/3} Q`` used as the reference.
    """
    cache = alphabet.__dict__.setdefault("_levels", {})
    if o in cache:
        return cache[o]
    rec = alphabet.sample.orbits[o]
    valid = rec.red.valid
    QX = rec.Q_level.copy()
    for k in np.flatnonzero(rec.stored):
        i = alphabet.owner.get((o, int(k)))
        if i is not None:
            QX[k] = alphabet.charts[i].Q.level
    pu, ps = subordinate_levels(_masked(QX, valid))
    qu, qs = subordinate_levels(_masked(rec.Q_level + 1, valid))
    cache[o] = (QX, pu, ps, np.maximum(qu, qs))
    return cache[o]


def orbit_to_chain(alphabet, site, n, eps=None, *, offsets=None):
    """Chain of alphabet double charts along the orbit of a stored point.

    Windows are the maximal sequences subordinated to the chart sizes of the
    representing charts along the whole orbit. ``offsets=(du, ds)`` lowers
    the window at the left end by ``du`` levels and the one at the right end by
    ``ds`` levels, which yields another valid chain along the same orbit.
    """
    sample = alphabet.sample
    o, k = site
    rec = sample.orbits[o]
    lo, hi = k - n, k + n
    if lo < 0 or hi >= len(rec) or not rec.stored[lo:hi + 1].all():
        raise CoverageGapError(f"orbit context too short around {site}")
    QX, pu, ps, eta = orbit_levels(alphabet, o)
    if np.any(eta[lo:hi + 1] > rec.q_level[lo:hi + 1]):
        raise SubordinationError("windows fall below q_eps")
    if np.any(np.abs(QX[lo - 1:hi + 2] - rec.Q_level[lo - 1:hi + 2]) > 1):
        raise CoverageGapError("chart sizes disagree beyond e^{eps/3}")
    pu, ps = pu[lo:hi + 1].copy(), ps[lo:hi + 1].copy()
    Qw = QX[lo:hi + 1]
    if offsets is not None:
        du, ds = offsets
        pu[0] += du
        for j in range(1, len(pu)):
            pu[j] = max(pu[j - 1] - STEP, Qw[j])
        ps[-1] += ds
        for j in range(len(ps) - 2, -1, -1):
            ps[j] = max(ps[j + 1] - STEP, Qw[j])
    pmin = np.maximum(pu, ps)
    if offsets is None:
        gap = eta[lo:hi + 1] - pmin
        if np.any(gap < 0) or np.any(gap > STEP):
            raise SubordinationError("windows not within e^eps of the orbit windows")
    symbols = []
    for j in range(lo, hi + 1):
        i = alphabet.owner[(o, j)]
        if not alphabet.admits(i, int(pmin[j - lo])):
            raise CoverageGapError(f"window level {int(pmin[j - lo])} outside the alphabet")
        symbols.append(DoubleChart(alphabet.charts[i], lu=int(pu[j - lo]), ls=int(ps[j - lo])))
    return ChainWindow(symbols=symbols, lo=-n, center=0, source=site)


def orbit_overlap_ok(chain, sample, eps):
    """Each symbol overlaps the true orbit chart at its window ``p^u ∧ p^s``."""
    o, k = chain.source
    for i in range(chain.lo, chain.hi + 1):
        v = chain[i]
        true = sample.chart((o, k + i - chain.center))
        eta = v.p_min
        if not overlaps(v.pesin(eta), true.with_eta(min(eta, true.Q.Q_eps)), eps):
            return False
    return True


def chain_coverage(alphabet, n, sites=None):
    """Fraction of stored points for which :func:`orbit_to_chain` succeeds."""
    sites = list(alphabet.sample.sites()) if sites is None else list(sites)
    ok = 0
    for s in sites:
        try:
            orbit_to_chain(alphabet, s, n)
            ok += 1
        except (CoverageGapError, SubordinationError):
            pass
    return ok / len(sites) if sites else 0.0


# ---------------------------------------------------------------------------
# the chart graph

@dataclass
class ChartGraph:
    vertices: list
    index: dict
    succ: list
    pred: list
    removed: int = 0
    unpruned_size: int = 0

    @property
    def n_edges(self):
        return sum(len(s) for s in self.succ)

    @property
    def max_out_degree(self):
        return max((len(s) for s in self.succ), default=0)

    @property
    def max_in_degree(self):
        return max((len(p) for p in self.pred), default=0)

    def degree_stats(self):
        return dict(vertices=len(self.vertices), edges=self.n_edges,
                    max_out=self.max_out_degree, max_in=self.max_in_degree,
                    pruned_away=self.removed)

    def edges(self):
        for i, s in enumerate(self.succ):
            for j in s:
                yield i, j

    def to_networkx(self):
        g = nx.DiGraph()
        g.add_nodes_from(range(len(self.vertices)))
        g.add_edges_from(self.edges())
        return g

    def has_edge(self, u, v):
        return self.index.get(v) in self.succ[self.index[u]]

    def edge_list_lines(self):
        """Plain-text edge list; vertices are written as ``orbit:index:lu:ls``."""
        def name(v):
            o, k = v.chart.site
            return f"{o}:{k}:{v.lu}:{v.ls}"
        return [f"{name(self.vertices[i])} {name(self.vertices[j])}" for i, j in self.edges()]

    def vertex_records(self):
        rows = []
        for v in self.vertices:
            c = v.chart
            rows.append(dict(site=f"{c.site[0]}:{c.site[1]}", u=float(c.x[0]), v=float(c.x[1]),
                             c11=c.C.C[0, 0], c12=c.C.C[0, 1], c21=c.C.C[1, 0],
                             c22=c.C.C[1, 1], Q_level=c.Q.level, lu=v.lu, ls=v.ls))
        return rows


def prune(vertices, succ, pred):
    """Remove vertices without an in- or out-edge until none is left."""
    n = len(vertices)
    alive = np.ones(n, dtype=bool)
    indeg = np.array([len(p) for p in pred])
    outdeg = np.array([len(s) for s in succ])
    queue = deque(i for i in range(n) if indeg[i] == 0 or outdeg[i] == 0)
    while queue:
        i = queue.popleft()
        if not alive[i]:
            continue
        alive[i] = False
        for j in succ[i]:
            if alive[j]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    queue.append(j)
        for j in pred[i]:
            if alive[j]:
                outdeg[j] -= 1
                if outdeg[j] == 0:
                    queue.append(j)
    return alive


def bi_infinite_vertices(g):
    """Vertices lying on a bi-infinite path: reachable from and reaching a cycle."""
    cyc = set()
    for comp in nx.strongly_connected_components(g):
        if len(comp) > 1 or any(g.has_edge(v, v) for v in comp):
            cyc |= comp
    fwd = set(cyc)
    for v in cyc:
        fwd |= nx.descendants(g, v)
    back = set(cyc)
    for v in cyc:
        back |= nx.ancestors(g, v)
    return fwd & back


def pool_from_chains(alphabet, sites=None):
    """Symbols that occur in the chain of some stored orbit point."""
    sample = alphabet.sample
    sites = list(sample.sites()) if sites is None else sites
    pool = {}
    for o, k in sites:
        _, pu, ps, _ = orbit_levels(alphabet, o)
        c = alphabet.charts[alphabet.owner[(o, k)]]
        if max(pu[k], ps[k]) <= c.Q.level + alphabet.depth:
            pool.setdefault(DoubleChart(c, lu=int(pu[k]), ls=int(ps[k])), None)
    return list(pool)


def enumerate_vertices(alphabet, depth=None):
    """All double charts whose windows lie within ``depth`` levels of ``Q_eps``."""
    depth = alphabet.depth if depth is None else depth
    out = []
    for i, c in enumerate(alphabet.charts):
        t = int(alphabet.top[i])
        for lu in range(t, t + depth + 1):
            for ls in range(t, t + depth + 1):
                if max(lu, ls) <= t + alphabet.depth:
                    out.append(DoubleChart(c, lu=lu, ls=ls))
    return out


def build_graph(alphabet, eps=None, vertices=None, prune_graph=True, tol=1e-12):
    """Chart graph on the given vertex set (default: the chain pool).

    Edges are found constructively: for ``u`` at ``x`` the target site must
    overlap ``f(x)``, so candidates come from a KD-tree around ``f(x)``; the
    level ``q^u`` is then determined and ``q^s`` has few options. Every
    candidate is confirmed with :func:`nuhcode.charts.edge`.
    """
    eps = alphabet.eps if eps is None else eps
    verts = pool_from_chains(alphabet) if vertices is None else list(vertices)
    index = {v: i for i, v in enumerate(verts)}
    by_site = defaultdict(dict)
    for v in verts:
        by_site[v.chart.site][(v.lu, v.ls)] = v
    sites = list(by_site)
    centres = np.array([by_site[s][next(iter(by_site[s]))].chart.x for s in sites])
    tree = cKDTree(centres, boxsize=1.0) if len(sites) else None
    succ = [[] for _ in verts]
    pred = [[] for _ in verts]
    for i, u in enumerate(verts):
        img = u.chart.image
        if img is None:
            continue
        for j in tree.query_ball_point(np.mod(img.x, 1.0), r=tol):
            cand = by_site[sites[j]]
            lq_y = next(iter(cand.values())).chart.Q.level
            want_u = max(u.lu - STEP, lq_y)
            if u.ls > u.chart.Q.level:
                options = [u.ls + STEP]
            else:
                options = range(lq_y, u.chart.Q.level + STEP + 1)
            for ls in options:
                v = cand.get((want_u, ls))
                if v is not None and edge(u, v, eps):
                    succ[i].append(index[v])
                    pred[index[v]].append(i)
    n0 = len(verts)
    if prune_graph:
        alive = prune(verts, succ, pred)
        keep = np.flatnonzero(alive)
        remap = {int(old): new for new, old in enumerate(keep)}
        verts = [verts[i] for i in keep]
        succ = [[remap[j] for j in succ[i] if j in remap] for i in keep]
        pred = [[remap[j] for j in pred[i] if j in remap] for i in keep]
        if not verts:
            raise EmptyGraphError("chart graph is empty after pruning")
    index = {v: i for i, v in enumerate(verts)}
    return ChartGraph(vertices=verts, index=index, succ=succ, pred=pred,
                      removed=n0 - len(verts), unpruned_size=n0)
