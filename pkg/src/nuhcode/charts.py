"""Pesin charts, the overlap relation, local forms of the map, double charts and edges.

A chart is centred at ``x`` and reads ``Psi_x(xi) = x + C(x) xi`` (mod 1). Chart
sizes are around ``1e-11`` at the default parameters, so centres may carry a
high-precision ``anchor`` (an mpmath pair). Offsets between centres are then
computed at high precision and everything else stays in double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .reduction import ChartSize, EpsilonLattice, LinearizationC
from .surface_model import INJECTIVITY_RADIUS, lift, mp_lift_difference, wrap

# flat-torus constants of the chart atlas
R_M = INJECTIVITY_RADIUS
RHO_M = INJECTIVITY_RADIUS
L_CONSTANTS = (1.0, 0.0, 1.0, 1.0)

GRID_SAFETY = 1.05


class FrameMismatchError(ValueError):
    """The derivative of a local map at 0 is not close enough to diagonal."""


@dataclass(frozen=True)
class Neighbor:
    """Centre and linear data of ``f(x)`` or ``f^{-1}(x)`` for a chart at ``x``."""

    x: np.ndarray
    C: LinearizationC
    Q: ChartSize
    anchor: tuple | None = None


@dataclass(frozen=True, eq=False)
class PesinChart:
    x: np.ndarray
    C: LinearizationC
    Q: ChartSize
    eta: float
    anchor: tuple | None = None
    image: Neighbor | None = None
    preimage: Neighbor | None = None
    key: tuple | None = None

    def __post_init__(self):
        if not (0.0 < self.eta <= self.Q.Q_eps * (1 + 1e-12)):
            raise ValueError("chart window must lie in (0, Q_eps]")

    @property
    def site(self):
        return self.key if self.key is not None else (float(self.x[0]), float(self.x[1]))

    def with_eta(self, eta):
        return replace(self, eta=eta)

    def apply(self, xi):
        """``Psi_x(xi)`` as float torus points."""
        return wrap(self.x + np.asarray(xi) @ self.C.C.T)


def neighbor_chart(chart, which, eta):
    """The chart at ``f(x)`` (``which='image'``) or ``f^{-1}(x)`` with window ``eta``."""
    nb = chart.image if which == "image" else chart.preimage
    if nb is None:
        raise ValueError(f"chart has no {which} data")
    return PesinChart(x=nb.x, C=nb.C, Q=nb.Q, eta=min(eta, nb.Q.Q_eps), anchor=nb.anchor)


def centre_offset(a, b):
    """Shortest lift of ``b.x - a.x``, at high precision when both carry anchors."""
    if a.anchor is not None and b.anchor is not None:
        return mp_lift_difference(a.anchor, b.anchor)
    return lift(np.asarray(b.x, dtype=float) - np.asarray(a.x, dtype=float))


def scales_of(C):
    """Recover ``(s_chi, u_chi)`` from the columns of ``C``."""
    return 1.0 / np.linalg.norm(C.C[:, 0]), 1.0 / np.linalg.norm(C.C[:, 1])


# ---------------------------------------------------------------------------
# overlap

@dataclass(frozen=True)
class OverlapWitness:
    ok: bool
    ratio_margin: float
    distance_margin: float
    distance: float
    C_gap: float

    def __bool__(self):
        return self.ok


def overlaps(c1, c2, eps):
    """Whether two charts eps-overlap.

    Requires ``e^-eps < eta1/eta2 < e^eps`` and
    ``d(x1, x2) + ||C1 - C2|| < eta1^4 eta2^4``. The distance test runs in log
    space so that tiny windows do not underflow. Margins are positive iff the
    corresponding condition holds.
    """
    log_ratio = math.log(c1.eta) - math.log(c2.eta)
    ratio_margin = eps - abs(log_ratio)
    d = float(np.linalg.norm(centre_offset(c1, c2)))
    gap = float(np.linalg.norm(c1.C.C - c2.C.C, 2))
    total = d + gap
    log_bound = 4.0 * math.log(c1.eta) + 4.0 * math.log(c2.eta)
    dist_margin = math.inf if total == 0.0 else log_bound - math.log(total)
    ok = ratio_margin > 0 and dist_margin > 0
    return OverlapWitness(ok=ok, ratio_margin=ratio_margin, distance_margin=dist_margin,
                          distance=d, C_gap=gap)


def _square_boundary(half, n=40):
    t = np.linspace(-half, half, n)
    one = np.full(n, half)
    return np.concatenate([np.stack([t, -one], 1), np.stack([t, one], 1),
                           np.stack([-one, t], 1), np.stack([one, t], 1)])


@dataclass
class OverlapReport:
    ok: bool
    nesting_margin: float
    c0_distance: float
    c1_distance: float
    identity_bound: float
    s_ratio: float
    u_ratio: float
    scale_bound: float
    failures: list = field(default_factory=list)


def overlap_consequences(c1, c2, eps):
    """Check the consequences of an overlap numerically.

    * ``Psi_{x1}[R_{e^{-2 eps} eta1}] ⊂ Psi_{x2}[R_{eta2}]`` on a boundary grid;
    * ``Psi_{x1}^{-1} Psi_{x2}`` is within ``eps eta1^2 eta2^2`` of the identity,
      in C0 (over the chart domain) and C1;
    * the scale ratios between the centres lie in ``[e^{-Q1 Q2}, e^{Q1 Q2}]``.
    """
    if not overlaps(c1, c2, eps):
        raise ValueError("charts do not overlap")
    off12 = centre_offset(c2, c1)  # x1 - x2
    bnd = _square_boundary(math.exp(-2 * eps) * c1.eta)
    xi2 = (off12 + bnd @ c1.C.C.T) @ c2.C.C_inv.T
    nesting_margin = c2.eta - float(np.abs(xi2).max())

    # transition map xi -> C1^{-1}(x2 - x1 + C2 xi) on R_{e^-eps r(M)}(0)
    # C1^-1 C2 - I without the cancellation
    lin = c1.C.C_inv @ (c2.C.C - c1.C.C)
    half = math.exp(-eps) * R_M
    corners = np.array([[half, half], [half, -half], [-half, half], [-half, -half]])
    shift = c1.C.C_inv @ (-off12)
    c0 = float(np.max(np.linalg.norm(shift + corners @ lin.T, axis=1)))
    c1d = float(np.linalg.norm(lin, 2))
    bound = eps * c1.eta ** 2 * c2.eta ** 2

    s1, u1 = scales_of(c1.C)
    s2, u2 = scales_of(c2.C)
    qq = c1.Q.Q_eps * c2.Q.Q_eps
    failures = []
    if nesting_margin <= 0:
        failures.append("nesting")
    if c0 >= bound or c1d >= bound:
        failures.append("identity")
    if abs(math.log(s1 / s2)) > qq or abs(math.log(u1 / u2)) > qq:
        failures.append("scales")
    return OverlapReport(ok=not failures, nesting_margin=nesting_margin, c0_distance=c0,
                         c1_distance=c1d, identity_bound=bound, s_ratio=s1 / s2,
                         u_ratio=u1 / u2, scale_bound=qq, failures=failures)


# ---------------------------------------------------------------------------
# local maps

class LocalMap:
    """``f_xy = Psi_y^{-1} f Psi_x`` written as ``(A u + h1, B v + h2)``.

    With ``inverse=True`` the object represents ``f^{-1}_{yx} = Psi_x^{-1} f^{-1} Psi_y``
    from the chart at ``y`` (``source``) to the chart at ``x`` (``target``);
    then ``A`` is the expanding and ``B`` the contracting coefficient.
    """

    def __init__(self, fmap, source, target, eta, inverse=False):
        self.fmap = fmap
        self.source = source
        self.target = target
        self.eta = eta
        self.inverse = inverse
        x = source.x
        if not inverse:
            nb = source.image
            deriv = fmap.d_forward(x)
        else:
            nb = source.preimage
            deriv = fmap.d_backward(x)
        if nb is not None and nb.anchor is not None and target.anchor is not None:
            off = mp_lift_difference(target.anchor, nb.anchor)
        else:
            step = fmap.forward if not inverse else fmap.backward
            off = lift(step(x) - target.x)
        self.offset = target.C.C_inv @ off
        self.D = target.C.C_inv @ deriv @ source.C.C
        self.A = float(self.D[0, 0])
        self.B = float(self.D[1, 1])
        self.O = self.D - np.diag([self.A, self.B])

    def _nonlinear(self, w):
        if self.inverse:
            return self.fmap.delta_backward_nonlinear(self.source.x, w)
        return self.fmap.delta_forward_nonlinear(self.source.x, w)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        w = xi @ self.source.C.C.T
        return self.offset + xi @ self.D.T + self._nonlinear(w) @ self.target.C.C_inv.T

    def h(self, xi):
        """Residuals ``(h1, h2)`` on the last axis."""
        xi = np.asarray(xi, dtype=float)
        w = xi @ self.source.C.C.T
        return self.offset + xi @ self.O.T + self._nonlinear(w) @ self.target.C.C_inv.T

    def grad_h(self, xi):
        """Jacobian of ``(h1, h2)``; row ``i`` is ``grad h_i``."""
        xi = np.asarray(xi, dtype=float)
        w = xi @ self.source.C.C.T
        if self.inverse:
            dd = self.fmap.d_backward_delta(self.source.x, w)
        else:
            dd = self.fmap.d_forward_delta(self.source.x, w)
        return self.O + self.target.C.C_inv @ dd @ self.source.C.C

    def validate(self, eps, beta=1.0, n=41):
        """Certify the residual bounds on an ``n x n`` grid over ``R_{10 Q}(0)``.

        Returns a dict of measured quantities; raises ``AssertionError`` if any
        bound fails after the grid safety factor.
        """
        cf = self.fmap.C_f
        # contracting and expanding coefficients; their roles swap for f^{-1}
        lo_c, hi_e = (abs(self.B), abs(self.A)) if self.inverse else (abs(self.A), abs(self.B))
        half = 10.0 * self.source.Q.Q_eps
        t = np.linspace(-half, half, n)
        grid = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
        h0 = np.abs(self.h(np.zeros(2)))
        g0 = np.linalg.norm(self.grad_h(np.zeros(2)), axis=1)
        g = self.grad_h(grid)
        # Hoelder quotient over all grid pairs, exponent beta/3
        flat = g.reshape(len(grid), 4)
        worst = 0.0
        expo = beta / 3.0
        for i in range(0, len(grid), 256):
            blk = flat[i:i + 256]
            dg = np.linalg.norm(blk[:, None, :] - flat[None, :, :], axis=-1)
            dx = np.linalg.norm(grid[i:i + 256, None, :] - grid[None, :, :], axis=-1)
            mask = dx > 0
            if np.any(mask):
                worst = max(worst, float(np.max(dg[mask] / dx[mask] ** expo)))
        report = dict(h0=h0, grad0=g0, hoelder=worst, A=self.A, B=self.B,
                      off_diagonal=float(np.abs(self.O).max()))
        bound_h = eps * self.eta
        bound_g = eps * self.eta ** expo
        if report["off_diagonal"] > bound_g:
            raise FrameMismatchError(f"off-diagonal {report['off_diagonal']:.3e} > {bound_g:.3e}")
        assert np.all(GRID_SAFETY * h0 < bound_h), "|h_i(0)| bound"
        assert np.all(GRID_SAFETY * g0 < bound_g), "|grad h_i(0)| bound"
        assert GRID_SAFETY * worst <= eps, "Hoelder bound of grad h"
        assert 1.0 / cf < lo_c and hi_e < cf, "hyperbolicity constants outside C_f range"
        return report


def local_map(fmap, source, target, eta, validate=False, eps=None, beta=1.0, chi=None):
    """Local form of ``f`` from the chart at ``x`` to the chart at ``y``."""
    lm = LocalMap(fmap, source, target, eta)
    if chi is not None:
        if not (abs(lm.A) < math.exp(-chi) and abs(lm.B) > math.exp(chi)):
            raise FrameMismatchError("diagonal entries violate the chi bounds")
    if validate:
        lm.validate(eps, beta)
    return lm


def local_map_inverse(fmap, source, target, eta, validate=False, eps=None, beta=1.0):
    """Local form of ``f^{-1}`` from the chart at ``y`` back to the chart at ``x``."""
    lm = LocalMap(fmap, source, target, eta, inverse=True)
    if validate:
        lm.validate(eps, beta)
    return lm


# ---------------------------------------------------------------------------
# double charts and edges

class DoubleChart:
    """A chart together with backward and forward windows ``(p_u, p_s)``.

    Windows are stored by lattice level; equality and hashing use the chart
    site and the two levels.
    """

    __slots__ = ("chart", "lu", "ls", "_hash")

    def __init__(self, chart, p_u=None, p_s=None, *, lu=None, ls=None):
        lattice = EpsilonLattice(chart.Q.epsilon)
        self.chart = chart
        self.lu = int(lu) if lu is not None else lattice.level(p_u)
        self.ls = int(ls) if ls is not None else lattice.level(p_s)
        if min(self.lu, self.ls) < chart.Q.level:
            raise ValueError("double chart windows must not exceed Q_eps")
        self._hash = hash((chart.site, self.lu, self.ls))

    @property
    def lattice(self):
        return EpsilonLattice(self.chart.Q.epsilon)

    @property
    def p_u(self):
        return float(self.lattice.value(self.lu))

    @property
    def p_s(self):
        return float(self.lattice.value(self.ls))

    @property
    def level_min(self):
        """Level of ``p_u ∧ p_s``."""
        return max(self.lu, self.ls)

    @property
    def p_min(self):
        return float(self.lattice.value(self.level_min))

    def pesin(self, eta=None):
        return self.chart.with_eta(self.p_min if eta is None else eta)

    def __eq__(self, other):
        return (isinstance(other, DoubleChart) and self.chart.site == other.chart.site
                and self.lu == other.lu and self.ls == other.ls)

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"DoubleChart(site={self.chart.site}, lu={self.lu}, ls={self.ls})"


def lattice_conditions(u, v):
    """Min-equations ``q^u = min(e^eps p^u, Q(y))`` and ``p^s = min(e^eps q^s, Q(x))`` as level identities."""
    ok_u = v.lu == max(u.lu - 3, v.chart.Q.level)
    ok_s = u.ls == max(v.ls - 3, u.chart.Q.level)
    return ok_u and ok_s


def edge(u, v, eps):
    """Whether ``u -> v`` is an edge of the chart graph."""
    if not lattice_conditions(u, v):
        return False
    q_min = v.p_min
    if not overlaps(v.pesin(q_min), neighbor_chart(u.chart, "image", q_min), eps):
        return False
    p_min = u.p_min
    return bool(overlaps(u.pesin(p_min), neighbor_chart(v.chart, "preimage", p_min), eps))


# ---------------------------------------------------------------------------
# smallness of eps

@dataclass(frozen=True)
class Constraint:
    name: str
    lhs: float
    rhs: float
    required: bool
    note: str = ""

    @property
    def passed(self):
        return self.lhs < self.rhs

    @property
    def margin(self):
        return self.rhs - self.lhs


@dataclass
class EpsilonLedger:
    constraints: list
    residual: list

    @property
    def passed(self):
        return all(c.passed for c in self.constraints if c.required)

    @property
    def binding(self):
        req = [c for c in self.constraints if c.required]
        return min(req, key=lambda c: c.margin / max(abs(c.rhs), 1e-300))

    def failures(self):
        return [c for c in self.constraints if c.required and not c.passed]

    def rows(self):
        return [dict(name=c.name, lhs=c.lhs, rhs=c.rhs, passed=c.passed,
                     required=c.required, note=c.note) for c in self.constraints]


def validate_epsilon(fmap, eps, beta, chi):
    """Evaluate the explicit smallness conditions on ``eps`` with flat-torus constants.

    Conditions marked ``required=False`` are sufficient conditions inside
    proofs whose conclusions the artifact certifies directly on sampled data
    (for example the gradient bound of the local residuals); they are reported
    but do not decide the verdict.
    """
    cf = fmap.C_f
    e3 = eps ** (3.0 / beta)
    lsum = sum(L_CONSTANTS)
    rows = [
        Constraint("chart atlas size", e3, min(1.0, R_M, RHO_M) / (5.0 * lsum ** 3), True),
        Constraint("local map domain", 30.0 * cf * e3, math.exp(-eps) * R_M, True),
        Constraint("stable distance decay", math.exp(-chi) + 4 * eps ** 2,
                   math.exp(-chi / 2), True),
        Constraint("stable tangent decay", math.exp(-chi) + 3 * eps ** 2 + 3 * eps ** 3,
                   math.exp(-2 * chi / 3), True),
        Constraint("stable tangent slope", cf * eps + 3 * eps ** 2, 1.0, True),
        Constraint("graph transform range", math.exp(chi - math.sqrt(eps)),
                   math.exp(chi) * (math.exp(-2 * eps) - 2 * eps), True),
        Constraint("graph transform contraction",
                   math.exp(-chi) * (1 + 3 * cf * eps ** 2) * (1 + eps ** 2 + 3 * eps ** 3),
                   math.exp(-chi / 2), True),
        Constraint("shadowing rate (contracting)", math.exp(-chi / 2) + eps,
                   math.exp(-chi / 3), True),
        Constraint("shadowing rate (expanding)", math.exp(chi / 3),
                   math.exp(chi / 2) - eps + 1e-300, True),
        Constraint("shadowing monotonicity", math.exp(-chi / 3) + eps, 1.0, True),
        Constraint("window lattice range", eps, 0.2 + 1e-15, True),
        Constraint("residual gradient (sufficient)", (3 * cf + 2) * math.sqrt(eps), 1.0, False,
                   "gradient of h certified directly by local_map validation"),
        Constraint("angle comparison (sufficient)", 4 * eps ** 0.75, math.sqrt(eps), False,
                   "angle ratios certified directly by compare_chains"),
    ]
    residual = [
        "conditions stated only as 'for all eps small enough' without a formula",
        "constants H_0 and F of the distortion and chart-size estimates",
    ]
    return EpsilonLedger(constraints=rows, residual=residual)
