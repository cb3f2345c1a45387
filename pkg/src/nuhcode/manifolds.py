"""Admissible curves in double charts, graph transforms, intersections and shadowing.

A u-curve in a chart is ``{(F(t), t) : |t| <= q}`` and an s-curve is
``{(t, F(t)) : |t| <= q}``, both in chart coordinates. Curves are stored on a
fixed grid of ``N_GRID`` nodes with values and slopes and interpolated with
cubic Hermite splines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .charts import LocalMap, scales_of
from .surface_model import mp_lift_difference, wrap

N_GRID = 65
NEWTON_STEPS = 30
EPS_MACH = np.finfo(float).eps
# relative size of the seed curves used to probe convergence
PROBE_SEED = 1e-3


class AdmissibilityError(ValueError):
    pass


class InversionError(ArithmeticError):
    """The parameter map of a graph transform could not be inverted on the grid."""


class IntersectionError(ArithmeticError):
    pass


class ShadowMismatchError(ValueError):
    pass


# (across, along) coordinate indices
_AXES = {"u": (0, 1), "s": (1, 0)}


def hoelder_seminorm(t, g, exponent):
    """Largest quotient ``|g_i - g_j| / |t_i - t_j|^exponent`` over grid pairs."""
    i, j = np.triu_indices(len(t), 1)
    dt = np.abs(t[i] - t[j])
    mask = dt > 0
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(g[i] - g[j])[mask] / dt[mask] ** exponent))


@dataclass(frozen=True, eq=False)
class RepresentedCurve:
    kind: str
    chart: object
    q: float
    grid: np.ndarray
    F_vals: np.ndarray
    F_derivs: np.ndarray
    beta: float = 1.0

    @classmethod
    def from_values(cls, kind, chart, F_vals, F_derivs, beta=1.0):
        if kind not in _AXES:
            raise ValueError("kind must be 'u' or 's'")
        q = chart.p_u if kind == "u" else chart.p_s
        vals = np.asarray(F_vals, dtype=float)
        ders = np.asarray(F_derivs, dtype=float)
        grid = np.linspace(-q, q, len(vals))
        return cls(kind, chart, q, grid, vals, ders, beta)

    @classmethod
    def constant(cls, kind, chart, value=0.0, beta=1.0, n=None):
        n = n or N_GRID
        return cls.from_values(kind, chart, np.full(n, float(value)), np.zeros(n), beta)

    @classmethod
    def from_function(cls, kind, chart, F, dF, beta=1.0, n=None):
        n = n or N_GRID
        q = chart.p_u if kind == "u" else chart.p_s
        t = np.linspace(-q, q, n)
        return cls.from_values(kind, chart, F(t), dF(t), beta)

    @property
    def axes(self):
        return _AXES[self.kind]

    @property
    def spline(self):
        sp = self.__dict__.get("_spline")
        if sp is None:
            sp = CubicHermiteSpline(self.grid, self.F_vals, self.F_derivs)
            object.__setattr__(self, "_spline", sp)
        return sp

    def __call__(self, t):
        return self.spline(t)

    def derivative(self, t):
        return self.spline(t, 1)

    @property
    def sigma(self):
        """``max |F'|`` plus the Hoelder constant of ``F'`` with exponent ``beta/3``."""
        if "_sigma" in self.__dict__:
            return self.__dict__["_sigma"]
        val = float(np.max(np.abs(self.F_derivs))
                    + hoelder_seminorm(self.grid, self.F_derivs, self.beta / 3.0))
        object.__setattr__(self, "_sigma", val)
        return val

    @property
    def gamma(self):
        return abs(float(self.derivative(0.0)))

    @property
    def phi(self):
        return abs(float(self(0.0)))

    @property
    def p_min(self):
        return self.chart.p_min

    def points(self, t=None):
        """Chart coordinates of curve points at parameters ``t`` (default: the grid)."""
        t = self.grid if t is None else np.asarray(t, dtype=float)
        across, along = self.axes
        out = np.empty(np.shape(t) + (2,))
        out[..., along] = t
        out[..., across] = self(t)
        return out

    def tangents(self, t):
        t = np.asarray(t, dtype=float)
        across, along = self.axes
        out = np.empty(np.shape(t) + (2,))
        out[..., along] = 1.0
        out[..., across] = self.derivative(t)
        return out

    def admissibility(self):
        """Margins of the admissibility conditions; all positive iff admissible."""
        pm = self.p_min
        q_expected = self.chart.p_u if self.kind == "u" else self.chart.p_s
        return dict(sigma=0.5 - self.sigma,
                    gamma=0.5 * pm ** (self.beta / 3.0) - self.gamma,
                    phi=1e-3 * pm - self.phi,
                    q=0.0 if math.isclose(self.q, q_expected, rel_tol=1e-12) else -1.0)

    def is_admissible(self, slack=0.0):
        m = self.admissibility()
        pm = self.p_min
        return (m["sigma"] >= -slack and m["gamma"] >= -slack * pm
                and m["phi"] >= -slack * pm and m["q"] == 0.0)

    def derived_bounds(self):
        """``Lip(F) < eps`` is checked by callers; returns ``(Lip, sup |F|)``."""
        t = np.linspace(-self.q, self.q, 4 * len(self.grid) + 1)
        return float(np.max(np.abs(self.derivative(t)))), float(np.max(np.abs(self(t))))

    def table(self):
        """Rows ``(t, F, F')``."""
        return np.column_stack([self.grid, self.F_vals, self.F_derivs])


def curve_distance(V1, V2, c1_metric=False):
    """Grid maximum of ``|F1 - F2|``, plus ``|F1' - F2'|`` for the C1 distance."""
    if V1.kind != V2.kind or V1.chart.chart.site != V2.chart.chart.site:
        raise ValueError("curves live in different charts or have different kinds")
    if not math.isclose(V1.q, V2.q, rel_tol=1e-12) or len(V1.grid) != len(V2.grid):
        raise ValueError("curves have mismatched domains")
    d = float(np.max(np.abs(V1.F_vals - V2.F_vals)))
    if c1_metric:
        d += float(np.max(np.abs(V1.F_derivs - V2.F_derivs)))
    return d


# ---------------------------------------------------------------------------
# graph transforms

@dataclass
class StepRecord:
    """Parameters before and after one transform step and the bounds they must meet."""

    kind: str
    before: tuple
    after: tuple
    bounds: tuple
    q_reach: float
    q_bound: float

    @property
    def violations(self):
        out = [name for name, a, b in zip(("sigma", "gamma", "phi"), self.after, self.bounds)
               if a > b]
        if self.q_reach < self.q_bound * (1 - 1e-12):
            out.append("q")
        return out


@dataclass
class StepLog:
    records: list = field(default_factory=list)
    keep: bool = False
    n_steps: int = 0
    n_violations: int = 0

    def add(self, rec):
        self.n_steps += 1
        if rec.violations:
            self.n_violations += 1
            self.records.append(rec)
        elif self.keep:
            self.records.append(rec)

    def reset(self):
        self.records.clear()
        self.n_steps = 0
        self.n_violations = 0


# every executed transform step is checked against the parameter bounds here
STEP_LOG = StepLog()


def _parameter_bounds(V, target, eps, chi):
    r = math.sqrt(eps)
    qm = target.p_min
    b = V.beta / 3.0
    sig = math.exp(r) * math.exp(-2 * chi) * (V.sigma + r)
    gam = math.exp(r) * math.exp(-2 * chi) * (V.gamma + eps ** b * qm ** b)
    phi = math.exp(r) * math.exp(-chi) * (V.phi + r * qm)
    return sig, gam, phi


def _invert(V, local, tau, E, across, along):
    """Solve ``tau = E t + h_along(point(t))`` for ``t`` on every node."""
    q = V.q
    tol = 1e-13 * q
    h0 = local.h(V.points(np.zeros(1)))[0, along]
    t = (tau - h0) / E
    for _ in range(NEWTON_STEPS):
        t = np.clip(t, -q, q)
        pts = V.points(t)
        g = E * t + local.h(pts)[:, along] - tau
        dh = local.grad_h(pts)[:, along, :]
        dg = E + np.einsum("ni,ni->n", dh, V.tangents(t))
        step = g / dg
        t = t - step
        if np.all(np.abs(step) <= tol):
            break
    else:
        t = _bisect(V, local, tau, E, along)
    if np.any(np.abs(t) > q * (1 + 1e-9)):
        raise InversionError("graph transform target node outside the image of the curve")
    return np.clip(t, -q, q)


def _bisect(V, local, tau, E, along, iters=200):
    q = V.q

    def g(t):
        return E * t + local.h(V.points(t))[:, along] - tau

    lo = np.full_like(tau, -q)
    hi = np.full_like(tau, q)
    glo, ghi = g(lo), g(hi)
    if np.any(np.sign(glo) == np.sign(ghi)):
        raise InversionError("parameter map does not bracket the target nodes")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        left = np.sign(gm) == np.sign(glo)
        lo = np.where(left, mid, lo)
        glo = np.where(left, gm, glo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def _transform(V, local, target, eps, chi, log, strict):
    across, along = V.axes
    E = float(local.D[along, along])
    K = float(local.D[across, across])
    q_new = target.p_u if V.kind == "u" else target.p_s
    tau = np.linspace(-q_new, q_new, len(V.grid))
    t = _invert(V, local, tau, E, across, along)
    pts = V.points(t)
    h = local.h(pts)
    dh = local.grad_h(pts)
    tang = V.tangents(t)
    G = K * V(t) + h[:, across]
    num = K * V.derivative(t) + np.einsum("ni,ni->n", dh[:, across, :], tang)
    den = E + np.einsum("ni,ni->n", dh[:, along, :], tang)
    out = RepresentedCurve(V.kind, target, q_new, tau, G, num / den, V.beta)

    # reach of the full image f(V) in the new chart
    ends = V.points(np.array([-V.q, V.q]))
    reach = np.abs(E * ends[:, along] + local.h(ends)[:, along])
    q_reach = float(reach.min())
    Qy = target.chart.Q.Q_eps
    q_bound = min(math.exp(-math.sqrt(eps)) * math.exp(chi) * V.q, Qy)
    rec = StepRecord(kind=V.kind, before=(V.sigma, V.gamma, V.phi),
                     after=(out.sigma, out.gamma, out.phi),
                     bounds=_parameter_bounds(V, target, eps, chi),
                     q_reach=q_reach, q_bound=q_bound)
    (STEP_LOG if log is None else log).add(rec)
    if strict and rec.violations:
        raise AdmissibilityError(f"parameter bounds violated: {rec.violations}")
    if strict and not out.is_admissible():
        raise AdmissibilityError("output curve is not admissible; eps may be too large")
    out.__dict__["step"] = rec
    return out


def forward_local_map(fmap, u, v):
    """Local form of ``f`` along the edge ``u -> v``."""
    return LocalMap(fmap, u.chart, v.chart, u.p_min)


def backward_local_map(fmap, u, v):
    """Local form of ``f^{-1}`` along the edge ``u -> v``, from ``v`` back to ``u``."""
    return LocalMap(fmap, v.chart, u.chart, v.p_min, inverse=True)


def transform_u(V, u, v, local, eps, chi, log=None, strict=False):
    """Image of a u-curve in ``u`` under ``f``, restricted to ``v``."""
    if V.kind != "u":
        raise ValueError("transform_u needs a u-curve")
    return _transform(V, local, v, eps, chi, log, strict)


def transform_s(V, u, v, local, eps, chi, log=None, strict=False):
    """Image of an s-curve in ``v`` under ``f^{-1}``, restricted to ``u``."""
    if V.kind != "s":
        raise ValueError("transform_s needs an s-curve")
    return _transform(V, local, u, eps, chi, log, strict)


# ---------------------------------------------------------------------------
# intersection

@dataclass
class Intersection:
    xi: np.ndarray
    point: np.ndarray
    iterations: int
    sin_angle: float
    cos_angle: float
    sin_alpha: float
    cos_alpha: float
    angle_bound: float

    @property
    def angle_ok(self):
        b = self.angle_bound
        ratio = self.sin_angle / self.sin_alpha
        return math.exp(-b) <= ratio <= math.exp(b) and abs(self.cos_angle - self.cos_alpha) < 2 * b


def _sin_cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    c = float(a @ b / (na * nb))
    s = float(abs(a[0] * b[1] - a[1] * b[0]) / (na * nb))
    return s, c


def intersect(Vu, Vs, max_iter=200):
    """Unique intersection of a u-curve and an s-curve in the same double chart."""
    if Vu.kind != "u" or Vs.kind != "s":
        raise ValueError("need a u-curve and an s-curve")
    if Vu.chart.chart.site != Vs.chart.chart.site:
        raise ValueError("curves live in different charts")
    pm = Vu.chart.p_min
    tol = 1e-14 * pm
    w = 0.0
    for it in range(1, max_iter + 1):
        w_new = float(Vs(float(Vu(w))))
        if abs(w_new - w) <= tol:
            w = w_new
            break
        w = w_new
    else:
        raise IntersectionError("fixed-point iteration did not converge")
    v = float(Vu(w))
    xi = np.array([v, w])
    if max(abs(v), abs(w)) > 1e-2 * pm:
        raise IntersectionError("intersection outside R_{p/100}(0)")
    C = Vu.chart.chart.C.C
    tu = C @ np.array([float(Vu.derivative(w)), 1.0])
    ts = C @ np.array([1.0, float(Vs.derivative(v))])
    s, c = _sin_cos(ts, tu)
    sa, ca = _sin_cos(C[:, 0], C[:, 1])
    chart = Vu.chart.chart
    return Intersection(xi=xi, point=wrap(chart.x + C @ xi), iterations=it, sin_angle=s,
                        cos_angle=c, sin_alpha=sa, cos_alpha=ca,
                        angle_bound=pm ** (Vu.beta / 4.0))


# ---------------------------------------------------------------------------
# shadowing

@dataclass
class ShadowResult:
    point: np.ndarray
    xi: np.ndarray
    chart: object
    V_u: RepresentedCurve
    V_s: RepresentedCurve
    n_used: int
    convergence_gap: float
    measured_gap: float = float("nan")
    equivariance_gap: float = float("nan")

    def offset_from(self, anchor):
        """``pi - p`` for a high-precision point ``p``, as a float vector."""
        c = self.chart.chart
        return mp_lift_difference(anchor, c.anchor) + c.C.C @ self.xi

    def distance_to(self, anchor):
        return float(np.linalg.norm(self.offset_from(anchor)))


def push_u(chain, fmap, start, stop, eps, chi, seed_value=0.0, log=None, keep=False,
           local_maps=None):
    """Transform a constant u-curve from symbol ``start`` forward to ``stop``."""
    V = RepresentedCurve.constant("u", chain[start], seed_value)
    out = [V]
    for i in range(start, stop):
        u, v = chain[i], chain[i + 1]
        lm = _cached(local_maps, ("f", i), lambda: forward_local_map(fmap, u, v))
        V = transform_u(V, u, v, lm, eps, chi, log)
        if keep:
            out.append(V)
    return out if keep else V


def push_s(chain, fmap, start, stop, eps, chi, seed_value=0.0, log=None, keep=False,
           local_maps=None):
    """Transform a constant s-curve from symbol ``start`` backward to ``stop``."""
    V = RepresentedCurve.constant("s", chain[start], seed_value)
    out = [V]
    for i in range(start, stop, -1):
        u, v = chain[i - 1], chain[i]
        lm = _cached(local_maps, ("b", i - 1), lambda: backward_local_map(fmap, u, v))
        V = transform_s(V, u, v, lm, eps, chi, log)
        if keep:
            out.append(V)
    return out[::-1] if keep else V


def _cached(cache, key, make):
    if cache is None:
        return make()
    if key not in cache:
        cache[key] = make()
    return cache[key]


def _gap_floor(chain_symbol):
    return 16.0 * EPS_MACH * max(chain_symbol.p_u, chain_symbol.p_s)


def shadow(chain, fmap, eps, chi, n=None, seed_value=0.0, check_equivariance=False,
           log=None, local_maps=None):
    """Shadowing point of the window ``[c - n, c + n]`` around the chain centre ``c``.

    ``convergence_gap`` compares the curves with those obtained from the
    ``n - 1`` window, floored at a few ulps of the chart size.
    """
    c = chain.center
    n = chain.radius if n is None else n
    if n < 2:
        raise ValueError("window radius must be at least 2")
    if c - n < chain.lo or c + n > chain.hi:
        raise IndexError("window exceeds the chain")
    cache = {} if local_maps is None else local_maps
    Vu = push_u(chain, fmap, c - n, c, eps, chi, seed_value, log, local_maps=cache)
    Vs = push_s(chain, fmap, c + n, c, eps, chi, seed_value, log, local_maps=cache)
    Vu1 = push_u(chain, fmap, c - n + 1, c, eps, chi, seed_value, log, local_maps=cache)
    Vs1 = push_s(chain, fmap, c + n - 1, c, eps, chi, seed_value, log, local_maps=cache)
    P = intersect(Vu, Vs)
    measured = max(curve_distance(Vu, Vu1), curve_distance(Vs, Vs1),
                   float(np.linalg.norm(P.xi - intersect(Vu1, Vs1).xi)))
    gap = max(measured, _gap_floor(chain[c]))
    res = ShadowResult(point=P.point, xi=P.xi, chart=chain[c], V_u=Vu, V_s=Vs, n_used=n,
                       convergence_gap=gap, measured_gap=measured)
    if check_equivariance:
        res.equivariance_gap = equivariance_gap(chain, fmap, eps, chi, n, res, seed_value,
                                                log, cache)
    return res


def equivariance_gap(chain, fmap, eps, chi, n, res, seed_value=0.0, log=None, local_maps=None):
    """``|f(pi(w)) - pi(shift w)|`` in the chart of the next symbol.

    ``shift w`` is the radius-``n`` window around ``c + 1``; the chain must
    extend one symbol beyond the radius-``n`` window on the right.
    """
    c = chain.center
    nxt = shadow(chain.shift(1), fmap, eps, chi, n, seed_value, log=log, local_maps=local_maps)
    lm = forward_local_map(fmap, chain[c], chain[c + 1])
    image = lm(res.xi[None, :])[0]
    C = chain[c + 1].chart.C.C
    return float(np.linalg.norm(C @ (image - nxt.xi)))


def shadow_distances(chain, fmap, eps, chi, anchor, ns, seed_value=0.0, log=None):
    """``|pi(window_n) - p|`` for every ``n`` in ``ns`` (curves only, no gap)."""
    cache = {}
    c = chain.center
    out = []
    for n in ns:
        Vu = push_u(chain, fmap, c - n, c, eps, chi, seed_value, log, local_maps=cache)
        Vs = push_s(chain, fmap, c + n, c, eps, chi, seed_value, log, local_maps=cache)
        P = intersect(Vu, Vs)
        ch = chain[c].chart
        out.append(float(np.linalg.norm(mp_lift_difference(anchor, ch.anchor) + ch.C.C @ P.xi)))
    return np.array(out)


# ---------------------------------------------------------------------------
# local stable manifolds

@dataclass
class LocalManifoldReport:
    k_max: int
    n_pairs: int
    distance_margin: float
    tangent_margin: float
    distortion_margin: float
    worst_distance_ratio: float
    worst_distortion: float
    log_growth: float = float("nan")

    @property
    def ok(self):
        return min(self.distance_margin, self.tangent_margin, self.distortion_margin) > 0


def local_manifold_checks(chain, fmap, eps, chi, k_max=30, n_pairs=8, seed=0, tail=8):
    """Forward behaviour of points on the s-curve at the chain centre.

    The s-curves at the symbols ``c .. c + k_max`` come from one backward pass
    started ``tail`` symbols further right; orbits of curve points are followed
    in chart coordinates and re-projected onto the next s-curve. Checks the
    pair distance ``6 p^s e^{-k chi/2}``, the tangent decay
    ``6 |C^{-1}| e^{-k chi/2}`` and the distortion ``Q^{beta/4}``.
    """
    c = chain.center
    stop = c + k_max + tail
    if stop > chain.hi:
        raise IndexError("chain too short for the requested horizon")
    curves = push_s(chain, fmap, stop, c, eps, chi, keep=True)
    V0 = curves[0]
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(-V0.q, V0.q, size=(n_pairs, 2))
    t0[0] = (-V0.q, V0.q)
    t = t0.reshape(-1)
    p0s = chain[c].p_s
    op0 = chain[c].chart.C.op_inv
    Q0 = chain[c].chart.Q.Q_eps
    beta = V0.beta
    logs = np.zeros(t.shape)
    dist_margin = tang_margin = dist_ratio = math.inf
    worst_ratio = 0.0
    worst_distortion = 0.0
    for k in range(k_max + 1):
        V = curves[k]
        sym = chain[c + k]
        C = sym.chart.C.C
        xi = V.points(t)
        pairs = xi.reshape(n_pairs, 2, 2)
        d = np.linalg.norm((pairs[:, 0] - pairs[:, 1]) @ C.T, axis=1)
        bound = 6.0 * p0s * math.exp(-0.5 * k * chi)
        dist_margin = min(dist_margin, float(np.min(bound - d)) / bound)
        worst_ratio = max(worst_ratio, float(np.max(d / bound)))
        tang_bound = 6.0 * op0 * math.exp(-0.5 * k * chi)
        tang_margin = min(tang_margin, float(np.min(tang_bound - np.exp(logs))) / tang_bound)
        dl = np.abs(logs.reshape(n_pairs, 2)[:, 0] - logs.reshape(n_pairs, 2)[:, 1])
        worst_distortion = max(worst_distortion, float(dl.max()))
        if k == k_max:
            break
        # one step of the unit tangents, then the points
        tv = V.tangents(t) @ C.T
        tv /= np.linalg.norm(tv, axis=1, keepdims=True)
        x = sym.chart.x + xi @ C.T
        logs = logs + np.log(np.linalg.norm(np.einsum("nij,nj->ni", fmap.d_forward(x), tv), axis=1))
        lm = forward_local_map(fmap, sym, chain[c + k + 1])
        t = lm(xi)[:, 0]
        if np.any(np.abs(t) > curves[k + 1].q):
            raise IndexError("orbit of a curve point left the window")
    distortion_margin = (Q0 ** (beta / 4.0) - worst_distortion) / Q0 ** (beta / 4.0)
    return LocalManifoldReport(k_max=k_max, n_pairs=n_pairs, distance_margin=dist_margin,
                               tangent_margin=tang_margin, distortion_margin=distortion_margin,
                               worst_distance_ratio=worst_ratio, worst_distortion=worst_distortion,
                               log_growth=float(np.max(logs)) / max(k_max, 1))


# ---------------------------------------------------------------------------
# comparing chains with the same shadow

def rotation_of(C):
    """Rotation taking ``e1`` to the direction of the first column of ``C``."""
    e = C[:, 0] / np.linalg.norm(C[:, 0])
    return np.array([[e[0], -e[1]], [e[1], e[0]]])


@dataclass
class IndexComparison:
    i: int
    position_gap: float
    position_bound: float
    sin_ratio: float
    cos_gap: float
    sign: int
    rotation_residual: float
    rotation_bound: float
    s_ratio: float
    u_ratio: float
    pu_ratio: float
    ps_ratio: float
    c_norm: float
    c_bound: float
    d_delta: float

    def failures(self, eps):
        r = math.sqrt(eps)
        cb = eps ** (1.0 / 3.0)
        out = []
        if not self.position_gap < self.position_bound:
            out.append("position")
        if not (math.exp(-r) <= self.sin_ratio <= math.exp(r)) or not self.cos_gap < r:
            out.append("angle")
        if not self.rotation_residual < self.rotation_bound:
            out.append("rotation")
        if not all(math.exp(-4 * r) <= x <= math.exp(4 * r) for x in (self.s_ratio, self.u_ratio)):
            out.append("scales")
        if not all(math.exp(-cb) <= x <= math.exp(cb) for x in (self.pu_ratio, self.ps_ratio)):
            out.append("windows")
        if not self.c_norm < self.c_bound:
            out.append("translation")
        if not self.d_delta < cb:
            out.append("linear part")
        return out


@dataclass
class ComparisonReport:
    rows: list
    shadow_gap: float
    eps: float

    @property
    def failures(self):
        return {r.i: f for r in self.rows if (f := r.failures(self.eps))}

    @property
    def ok(self):
        return not self.failures

    def worst(self, name):
        return max(getattr(r, name) for r in self.rows)


def _compare_index(i, a, b, beta):
    pa, pb = a.p_min, b.p_min
    Ca, Cb = a.chart.C.C, b.chart.C.C
    xa = a.chart
    # x - y
    if xa.anchor is not None and b.chart.anchor is not None:
        off = mp_lift_difference(b.chart.anchor, xa.anchor)
    else:
        off = np.asarray(xa.x) - np.asarray(b.chart.x)
    sa, ca = _sin_cos(Ca[:, 0], Ca[:, 1])
    sb, cb_ = _sin_cos(Cb[:, 0], Cb[:, 1])
    Rr = rotation_of(Cb).T @ rotation_of(Ca)
    sign = 0 if Rr[0, 0] >= 0 else 1
    resid = float(np.abs(Rr - (-1) ** sign * np.eye(2)).max())
    s_a, u_a = scales_of(a.chart.C)
    s_b, u_b = scales_of(b.chart.C)
    c = b.chart.C.C_inv @ off
    # Cb^-1 Ca -/+ I without the cancellation
    d_delta = float(np.linalg.norm(b.chart.C.C_inv @ (Ca - (-1) ** sign * Cb), 2))
    return IndexComparison(
        i=i, position_gap=float(np.linalg.norm(off)), position_bound=max(pa, pb) / 25.0,
        sin_ratio=sa / sb, cos_gap=abs(ca - cb_), sign=sign, rotation_residual=resid,
        rotation_bound=pa ** (beta / 5.0) + pb ** (beta / 5.0), s_ratio=s_a / s_b,
        u_ratio=u_a / u_b, pu_ratio=a.p_u / b.p_u, ps_ratio=a.p_s / b.p_s,
        c_norm=float(np.linalg.norm(c)), c_bound=0.1 * pb, d_delta=d_delta)


def compare_chains(chainA, chainB, fmap, eps, chi, n=None, margin=None, tol=1e-8, beta=1.0):
    """Compare two chains with the same shadow index by index.

    Indices within ``margin`` of the window ends are skipped, since the windows
    there are affected by truncation.
    """
    if chainA.lo != chainB.lo or chainA.hi != chainB.hi or chainA.center != chainB.center:
        raise ValueError("chains must share their index window")
    n = chainA.radius if n is None else n
    sa = shadow(chainA, fmap, eps, chi, n)
    sb = shadow(chainB, fmap, eps, chi, n)
    ca, cb = sa.chart.chart, sb.chart.chart
    if ca.anchor is not None and cb.anchor is not None:
        gap = float(np.linalg.norm(mp_lift_difference(cb.anchor, ca.anchor)
                                   + ca.C.C @ sa.xi - cb.C.C @ sb.xi))
    else:
        gap = float(np.linalg.norm(wrap(sa.point - sb.point + 0.5) - 0.5))
    if gap >= tol:
        raise ShadowMismatchError(f"shadows differ by {gap:.3e}")
    margin = 0 if margin is None else margin
    rows = [_compare_index(i, chainA[i], chainB[i], beta)
            for i in range(chainA.lo + margin, chainA.hi - margin + 1)]
    return ComparisonReport(rows=rows, shadow_gap=gap, eps=eps)
