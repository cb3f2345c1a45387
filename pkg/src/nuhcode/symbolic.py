"""The shift on rectangles: its graph, cylinder points, loop counts, periodic points
and the finite-to-one bound."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .alphabet import ChainWindow
from .charts import edge
from .manifolds import intersect, local_manifold_checks, shadow
from . import markov as _markov
from .surface_model import cocycle, iterate, lift, wrap

MAX_EXACT_N = 16
NEWTON_MAX = 50
DEDUP_RES = 1e-6


class NotRecurrentError(ValueError):
    """The vertex lies on no cycle."""


class PathError(ValueError):
    pass


class NoCoveringChainError(LookupError):
    pass


@dataclass
class MarkovShift:
    """Directed graph on rectangle ids."""

    vertices: list
    succ: dict
    pred: dict

    @classmethod
    def from_edges(cls, vertices, edges):
        succ = {v: set() for v in vertices}
        pred = {v: set() for v in vertices}
        for a, b in edges:
            succ[a].add(b)
            pred[b].add(a)
        return cls(list(vertices), succ, pred)

    @property
    def edges(self):
        return sorted((a, b) for a in self.vertices for b in self.succ[a])

    def has_edge(self, a, b):
        return b in self.succ.get(a, ())

    def degree_stats(self):
        out_d = [len(self.succ[v]) for v in self.vertices]
        in_d = [len(self.pred[v]) for v in self.vertices]
        return dict(vertices=len(self.vertices), edges=sum(out_d),
                    max_out=max(out_d, default=0), max_in=max(in_d, default=0))

    def to_networkx(self):
        g = nx.DiGraph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(self.edges)
        return g

    def component(self, v):
        """Strongly connected component of ``v``; raises if ``v`` is on no cycle."""
        g = self.to_networkx()
        for comp in nx.strongly_connected_components(g):
            if v in comp:
                if len(comp) == 1 and not g.has_edge(v, v):
                    raise NotRecurrentError(f"vertex {v} lies on no cycle")
                return comp
        raise KeyError(v)

    def recurrent_vertices(self):
        g = self.to_networkx()
        out = []
        for comp in nx.strongly_connected_components(g):
            if len(comp) > 1 or any(g.has_edge(v, v) for v in comp):
                out.extend(sorted(comp))
        return out

    def edge_list_lines(self):
        return [f"{a} {b}" for a, b in self.edges]


def build_hat_graph(partition, coded):
    """Edges ``R1 -> R2`` for every sampled ``x`` in ``R1`` with ``f(x)`` in ``R2``."""
    edges = set()
    n_trans = 0
    for x, fx in coded.transitions():
        if x.index in partition.rect_of and fx.index in partition.rect_of:
            edges.add((partition.rect_of[x.index], partition.rect_of[fx.index]))
            n_trans += 1
    shift = MarkovShift.from_edges([R.id for R in partition.rectangles], edges)
    shift.n_transitions = n_trans
    return shift


# ---------------------------------------------------------------------------
# cylinders

def diameter_bound(n, Q_max, chi):
    """``C theta^n`` with ``theta = e^{-chi/2}`` and ``C = 2 max Q``."""
    return 2.0 * Q_max * math.exp(-0.5 * chi * n)


@dataclass
class CylinderPoint:
    point: np.ndarray
    bound: float
    chain: ChainWindow | None
    shadow: object | None


def _centres(R):
    out = []
    for m in R.members:
        for cd in m.codings:
            if cd.center not in out:
                out.append(cd.center)
    return out


def _coding_at(R, v):
    for m in R.members:
        for cd in m.codings:
            if cd.center == v:
                return cd
    raise LookupError(v)


def covering_chain(path, partition, eps):
    """Chain ``v_i`` with ``R_i ⊂ Z(v_i)`` along ``path``, padded by sampled codings."""
    rects = [partition.rectangles[r] for r in path]
    cands = [_centres(R) for R in rects]
    # forward search for a consistent choice of centres
    back = [dict() for _ in rects]
    layer = {v: None for v in cands[0]}
    back[0] = layer
    for i in range(1, len(rects)):
        layer = {}
        for w in cands[i]:
            for v in back[i - 1]:
                if edge(v, w, eps):
                    layer[w] = v
                    break
        if not layer:
            raise NoCoveringChainError(f"no edge between path positions {i - 1} and {i}")
        back[i] = layer
    seq = [next(iter(back[-1]))]
    for i in range(len(rects) - 1, 0, -1):
        seq.append(back[i][seq[-1]])
    seq.reverse()
    left = _coding_at(rects[0], seq[0]).chain
    right = _coding_at(rects[-1], seq[-1]).chain
    past = left.symbols[: left.center - left.lo]
    future = right.symbols[right.center - right.lo + 1:]
    symbols = past + seq + future
    lo = -len(past)
    return ChainWindow(symbols, lo, 0, "cylinder")


def cylinder_point(path, partition, coded, center=0, shift=None):
    """A point in the cylinder of ``path`` (positions ``0 .. len(path) - 1``).

    The point is the shadow of a chain whose symbols cover the rectangles of
    the path, centred at path position ``center``. With ``shift`` given, the
    path is first checked against its edges.
    """
    if not path:
        raise PathError("empty path")
    for a, b in zip(path, path[1:]):
        if shift is not None and not shift.has_edge(a, b):
            raise PathError(f"{a} -> {b} is not an edge")
    if len(path) == 1:
        m = partition.rectangles[path[0]].members[0]
        sh = m.codings[0].shadow
        return CylinderPoint(m.point, 0.0, m.codings[0].chain, sh)
    chain = covering_chain(path, partition, coded.eps).shift(center)
    n = chain.radius
    sh = shadow(chain, coded.fmap, coded.eps, coded.chi, n)
    Q_max = max(v.chart.Q.Q_eps for v in chain.symbols)
    half = min(center, len(path) - 1 - center)
    return CylinderPoint(sh.point, diameter_bound(half, Q_max, coded.chi), chain, sh)


# ---------------------------------------------------------------------------
# loops and entropy

def count_loops(shift, vertex, n):
    """Number of paths of length ``n`` from ``vertex`` back to itself (exact integers)."""
    if n > MAX_EXACT_N:
        raise ValueError(f"exact counts are computed up to n = {MAX_EXACT_N}")
    comp = shift.component(vertex)
    vec = {vertex: 1}
    for _ in range(n):
        nxt = defaultdict(int)
        for v, c in vec.items():
            for w in shift.succ[v]:
                if w in comp:
                    nxt[w] += c
        vec = nxt
    return int(vec.get(vertex, 0))


def gurevich_entropy(shift, vertex, n_range=range(8, 15)):
    """Least-squares slope of ``log count_loops`` over ``n_range`` (zero counts skipped)."""
    ns, logs = [], []
    for n in n_range:
        c = count_loops(shift, vertex, n)
        if c > 0:
            ns.append(n)
            logs.append(math.log(c))
    if not ns:
        return 0.0
    if len(ns) == 1:
        return logs[0] / ns[0]
    return float(np.polyfit(ns, logs, 1)[0])


def loops(shift, n, cap=1000):
    """Closed paths of length ``n``, one per rotation class, at most ``cap``."""
    found = []
    seen = set()
    for v in sorted(shift.recurrent_vertices()):
        stack = [(v, (v,))]
        while stack:
            w, path = stack.pop()
            if len(path) == n + 1:
                if w == v:
                    cyc = path[:-1]
                    key = min(cyc[i:] + cyc[:i] for i in range(n))
                    if key not in seen:
                        seen.add(key)
                        found.append(list(cyc))
                        if len(found) >= cap:
                            return found
                continue
            for u in sorted(shift.succ[w]):
                stack.append((u, path + (u,)))
    return found


# ---------------------------------------------------------------------------
# periodic points

@dataclass
class PeriodicCertificate:
    loop: list
    point: np.ndarray
    residual: float
    n: int
    in_start_rectangle: bool
    newton_steps: int


def polish_periodic(fmap, x, n, max_steps=NEWTON_MAX, tol=1e-14):
    """Damped Newton for ``f^n(x) = x``; returns ``(x, residual, steps)``."""
    x = wrap(np.asarray(x, dtype=float))
    res = float(np.linalg.norm(lift(iterate(fmap, x, n) - x)))
    for k in range(1, max_steps + 1):
        if res < tol:
            return x, res, k - 1
        r = lift(iterate(fmap, x, n) - x)
        J = cocycle(fmap, x, n) - np.eye(2)
        step = np.linalg.solve(J, r)
        lam = 1.0
        while lam > 1e-4:
            y = wrap(x - lam * step)
            ry = float(np.linalg.norm(lift(iterate(fmap, y, n) - y)))
            if ry < res:
                break
            lam *= 0.5
        x, res = y, ry
    return x, res, max_steps


def periodic_points(fmap, shift, n, partition, coded, cap=200, repeats=None, dropped=None):
    """Certified points of period ``n`` from the loops of length ``n``.

    Each loop is repeated to a long periodic window, its cylinder point is the
    Newton seed, and the polished point is certified by its residual. Loops
    that yield no certificate are appended to ``dropped`` with a reason.
    """
    if n < 1:
        raise ValueError("n must be positive")
    reps = repeats if repeats is not None else max(3, math.ceil(24 / n))
    certs = []
    dropped = [] if dropped is None else dropped
    for lp in loops(shift, n, cap):
        path = lp * (2 * reps + 1)
        try:
            cp = cylinder_point(path, partition, coded, center=reps * n, shift=shift)
            seed = cp.point
        except (NoCoveringChainError, PathError, LookupError, ArithmeticError) as e:
            dropped.append((lp, f"cylinder: {e}"))
            continue
        x, res, steps = polish_periodic(fmap, seed, n)
        if res >= 1e-6:
            dropped.append((lp, f"residual {res:.2e}"))
            continue
        R0 = partition.rectangles[lp[0]]
        inside = any(np.linalg.norm(lift(m.point - x)) <= _markov.MEMBERSHIP_RES for m in R0.members)
        if any(np.linalg.norm(lift(c.point - x)) < DEDUP_RES for c in certs):
            continue
        certs.append(PeriodicCertificate(loop=lp, point=x, residual=res, n=n,
                                         in_start_rectangle=inside, newton_steps=steps))
    return certs


# ---------------------------------------------------------------------------
# finite-to-one

def containing_sets(R, cover):
    """``A(R)``: cover elements containing every member of ``R``."""
    ids = None
    for m in R.members:
        s = set(cover.member_of.get(m.index, ()))
        ids = s if ids is None else ids & s
    return ids or set()


def affiliated(R, partition):
    cover = partition.cover
    A = containing_sets(R, cover)
    near = set()
    for i in A:
        near |= cover.neighbors.get(i, set())
    return [Rp for Rp in partition.rectangles if containing_sets(Rp, cover) & near]


def N_of(R, partition):
    """``N(R) = sum of |A(R')|`` over rectangles affiliated to ``R``."""
    cover = partition.cover
    return sum(len(containing_sets(Rp, cover)) for Rp in affiliated(R, partition))


def itineraries(x, partition, coded, k=1):
    """Distinct rectangle windows ``R_{-k} .. R_k`` read off the codings of ``x``."""
    seqs = set()
    for cd in x.codings:
        ch = cd.chain
        seq = []
        for i in range(-k, k + 1):
            moved = ch.shift(i)
            sh = shadow(moved, coded.fmap, coded.eps, coded.chi, min(moved.radius, cd.shadow.n_used))
            hits = [p for p in coded.find(sh.point) if p.index in partition.rect_of]
            seq.append(partition.rect_of[hits[0].index] if hits else None)
        seqs.add(tuple(seq))
    return seqs


def preimage_bound(x, R, S, partition, coded, k=1):
    """``(N(R) N(S), empirical count)`` for a coded point ``x``."""
    bound = N_of(R, partition) * N_of(S, partition)
    return bound, len(itineraries(x, partition, coded, k))


# ---------------------------------------------------------------------------
# invariant splitting

@dataclass
class Splitting:
    point: np.ndarray
    E_s: np.ndarray
    E_u: np.ndarray
    log_growth_s: float


def _unit(v):
    v = v / np.linalg.norm(v)
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def splitting_from_coding(path, partition, coded, center=None, k_growth=None):
    """Tangent directions of ``V^s, V^u`` at the cylinder point of ``path``."""
    center = len(path) // 2 if center is None else center
    cp = cylinder_point(path, partition, coded, center=center)
    sh = cp.shadow
    C = sh.chart.chart.C.C
    v, w = sh.xi
    E_u = _unit(C @ np.array([float(sh.V_u.derivative(w)), 1.0]))
    E_s = _unit(C @ np.array([1.0, float(sh.V_s.derivative(v))]))
    growth = float("nan")
    if k_growth:
        rep = local_manifold_checks(cp.chain, coded.fmap, coded.eps, coded.chi, k_max=k_growth,
                                    n_pairs=1, tail=min(8, cp.chain.hi - cp.chain.center - k_growth))
        growth = rep.log_growth
    return Splitting(point=cp.point, E_s=E_s, E_u=E_u, log_growth_s=growth)


def angle_between(a, b):
    c = abs(float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return math.acos(min(1.0, c))
