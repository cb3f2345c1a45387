"""Hyperbolic splitting, Lyapunov scales, the linear change of coordinates and chart sizes.

Two routes compute the same data:

* per-point functions (:func:`estimate_splitting`, :func:`lyapunov_scales`,
  :func:`build_C`, :func:`chart_size`) that follow a single point;
* :func:`reduce_orbit`, which sweeps once forward and once backward along a
  long orbit and produces the same quantities for every interior point.

The tests compare the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .surface_model import iterate, wrap

DEFAULT_HORIZON = 64
ACCEPT_MARGIN = 0.05
SCALE_TOL = 1e-10
SCALE_CAP = 10_000


class DegenerateCocycleError(ValueError):
    """The stable and unstable directions are numerically parallel."""


class ScaleDivergenceError(ArithmeticError):
    """The series defining a Lyapunov scale does not decay."""


class ReductionError(ValueError):
    """``C(fx)^{-1} df_x C(x)`` is not diagonal or violates the hyperbolicity bounds."""


class WindowTooShortError(ValueError):
    pass


# ---------------------------------------------------------------------------
# the lattice I_eps

@dataclass(frozen=True)
class EpsilonLattice:
    """The lattice ``{exp(-l eps / 3) : l = 0, 1, 2, ...}``.

    Elements are handled through their integer level ``l``; larger level means
    smaller value.
    """

    epsilon: float

    @property
    def step(self):
        return self.epsilon / 3.0

    def value(self, level):
        return np.exp(-np.asarray(level, dtype=float) * self.step)

    def log_value(self, level):
        return -np.asarray(level, dtype=float) * self.step

    def level(self, q):
        """Exact level of a lattice element; raises if ``q`` is not in the lattice."""
        r = -math.log(q) / self.step
        lv = round(r)
        if lv < 0 or abs(r - lv) > 1e-9 * max(1.0, abs(r)):
            raise ValueError(f"{q!r} is not in the lattice")
        return int(lv)

    def contains(self, q):
        try:
            self.level(q)
        except (ValueError, OverflowError):
            return False
        return True

    def floor_level(self, log_value):
        """Level of ``max{q in I_eps : q <= exp(log_value)}``."""
        if log_value > 1e-12:
            raise ValueError("lattice quantization needs a value in (0, 1]")
        r = -log_value / self.step
        lv = math.ceil(r)
        # undo a ceiling caused only by rounding of an exact lattice point
        if lv - r > 1.0 - 1e-12 * max(1.0, r):
            lv -= 1
        return max(int(lv), 0)


# the name used in formulas
LatticeIε = EpsilonLattice


def quantize_Iε(value, lattice):
    """Largest lattice element not exceeding ``value``."""
    if value <= 0:
        raise ValueError("value must be positive")
    return float(lattice.value(lattice.floor_level(math.log(value))))


quantize = quantize_Iε


# ---------------------------------------------------------------------------
# data records

@dataclass(frozen=True)
class HyperbolicFrame:
    x: np.ndarray
    e_s: np.ndarray
    e_u: np.ndarray
    alpha: float
    lam_hat: float
    mu_hat: float
    horizon: int
    accepted: bool


@dataclass(frozen=True)
class LyapunovScales:
    s_chi: float
    u_chi: float
    chi: float
    truncation_N: int
    tail_bound: float


@dataclass(frozen=True)
class LinearizationC:
    C: np.ndarray
    C_inv: np.ndarray
    frob_inv: float
    op_inv: float


@dataclass(frozen=True)
class ChartSize:
    Q_tilde: float
    Q_eps: float
    level: int
    epsilon: float
    q_eps: float | None = None
    log_Q_tilde: float | None = None


# ---------------------------------------------------------------------------
# helpers

def _orient(e_s, e_u):
    """Sign convention: angle(e1, e_s) in [0, pi) and (e_s, e_u) positively oriented."""
    e_s = np.array(e_s, dtype=float)
    e_u = np.array(e_u, dtype=float)
    flip = (e_s[..., 1] < 0) | ((e_s[..., 1] == 0) & (e_s[..., 0] < 0))
    e_s = np.where(flip[..., None], -e_s, e_s)
    cross = e_s[..., 0] * e_u[..., 1] - e_s[..., 1] * e_u[..., 0]
    e_u = np.where((cross < 0)[..., None], -e_u, e_u)
    return e_s, e_u


def _angle(e_s, e_u):
    cross = e_s[..., 0] * e_u[..., 1] - e_s[..., 1] * e_u[..., 0]
    dot = np.sum(e_s * e_u, axis=-1)
    return np.arctan2(cross, dot)


def _leading_image(mats):
    """Leading left singular vector and log of the top singular value of a product.

    ``mats`` is a sequence applied in order (first element acts first). The
    product is renormalized at every step.
    """
    m = np.eye(2)
    log_scale = 0.0
    for a in mats:
        m = a @ m
        n = np.abs(m).max()
        m /= n
        log_scale += math.log(n)
    uu, sv, _ = np.linalg.svd(m)
    return uu[:, 0], log_scale + math.log(sv[0])


# ---------------------------------------------------------------------------
# per-point route

def estimate_splitting(fmap, x, horizon=DEFAULT_HORIZON, *, chi=0.5, margin=ACCEPT_MARGIN):
    """Finite-horizon stable/unstable directions at ``x``.

    ``e_u`` is the leading image direction of ``(df^N)`` applied along the
    past orbit ``f^{-N}x -> x``; ``e_s`` is the leading image direction of
    ``(df^{-N})`` applied along ``f^N x -> x``. ``mu_hat`` is the growth rate of
    ``e_u`` over the next ``N`` steps; ``lam_hat`` is minus the growth rate of
    the backward cocycle ``f^N x -> x``, which equals the contraction rate of
    ``e_s`` without amplifying its rounding error.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x = wrap(x)
    past = [x]
    for _ in range(horizon):
        past.append(fmap.backward(past[-1]))
    future = [x]
    for _ in range(horizon):
        future.append(fmap.forward(future[-1]))

    e_u, _ = _leading_image([fmap.d_forward(p) for p in past[:0:-1]])
    e_s, log_back = _leading_image([fmap.d_backward(p) for p in future[:0:-1]])
    e_s, e_u = _orient(e_s, e_u)
    cross = e_s[0] * e_u[1] - e_s[1] * e_u[0]
    if abs(cross) < 1e-14:
        raise DegenerateCocycleError("stable and unstable directions coincide")

    v = e_u.copy()
    log_u = 0.0
    for p in future[:-1]:
        v = fmap.d_forward(p) @ v
        n = np.linalg.norm(v)
        log_u += math.log(n)
        v /= n
    lam_hat = -log_back / horizon
    mu_hat = log_u / horizon
    accepted = bool(lam_hat < -chi - margin and mu_hat > chi + margin)
    return HyperbolicFrame(x=x, e_s=e_s, e_u=e_u, alpha=float(_angle(e_s, e_u)),
                           lam_hat=float(lam_hat), mu_hat=float(mu_hat),
                           horizon=int(horizon), accepted=accepted)


def _directional_logs(fmap, x, n, horizon, forward):
    """Log growth factors ``log ||df e(f^j x)||`` of the stable (or unstable) field.

    For ``forward=True`` the stable direction is carried back from
    ``f^{n+horizon}x`` and the factors are those of ``df`` along ``x, ..., f^{n-1}x``.
    For ``forward=False`` the unstable direction is carried forward from
    ``f^{-n-horizon}x`` and the factors are those of ``df^{-1}`` along
    ``x, f^{-1}x, ...``.
    """
    step = fmap.forward if forward else fmap.backward
    deriv = fmap.d_forward if forward else fmap.d_backward
    inv = fmap.d_backward if forward else fmap.d_forward
    pts = [wrap(x)]
    for _ in range(n + horizon):
        pts.append(step(pts[-1]))
    e = np.array([1.0, 0.3]) / np.hypot(1.0, 0.3)
    dirs = [None] * (n + horizon + 1)
    dirs[-1] = e
    for j in range(n + horizon, 0, -1):
        e = inv(pts[j]) @ e
        e /= np.linalg.norm(e)
        dirs[j - 1] = e
    logs = np.empty(n)
    for j in range(n):
        logs[j] = math.log(np.linalg.norm(deriv(pts[j]) @ dirs[j]))
    return logs


def _scale_from_logs(logs, chi, tol, cap):
    """Sum ``sum_k exp(2 k chi + 2 sum_{j<k} logs_j)`` with adaptive truncation.

    Returns (sum, number of terms, relative tail estimate) or ``None`` if more
    terms are needed, and raises on divergence.
    """
    total = 1.0
    log_term = 0.0
    growing = 0
    prev = 0.0
    for k in range(1, len(logs) + 1):
        log_term += 2.0 * chi + 2.0 * logs[k - 1]
        term = math.exp(log_term)
        total += term
        ratio = math.exp(log_term - prev)
        prev = log_term
        growing = growing + 1 if ratio >= 1.0 else 0
        if growing >= 10:
            raise ScaleDivergenceError("Lyapunov scale series does not decay")
        if k >= cap:
            break
        if ratio < 1.0:
            tail = term * ratio / (1.0 - ratio)
            if term < tol * total and tail < tol * total:
                return total, k, tail / total
    if len(logs) >= cap:
        raise ScaleDivergenceError("Lyapunov scale series not converged within cap")
    return None


def lyapunov_scales(fmap, frame, chi, tol=SCALE_TOL, cap=SCALE_CAP):
    """``s_chi`` and ``u_chi`` at ``frame.x`` by adaptively truncated sums.

    The summands are products of one-step growth factors along the invariant
    field, which avoids pushing a single vector through many steps.
    """
    if not frame.accepted:
        raise ValueError("frame is not accepted")
    if not (chi < min(-frame.lam_hat, frame.mu_hat)):
        raise ValueError("chi must be below both exponents")
    out = []
    for forward in (True, False):
        n = 64
        while True:
            logs = _directional_logs(fmap, frame.x, min(n, cap), frame.horizon, forward)
            res = _scale_from_logs(logs, chi, tol, cap)
            if res is not None:
                out.append(res)
                break
            if n >= cap:
                raise ScaleDivergenceError("Lyapunov scale series not converged within cap")
            n *= 2
    (ss, ns, ts), (su, nu, tu) = out
    return LyapunovScales(s_chi=math.sqrt(2.0 * ss), u_chi=math.sqrt(2.0 * su), chi=chi,
                          truncation_N=max(ns, nu), tail_bound=max(ts, tu))


def _assemble_C(e_s, e_u, s, u):
    C = np.stack([e_s / s[..., None], e_u / u[..., None]], axis=-1)
    det = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    C_inv = np.empty_like(C)
    C_inv[..., 0, 0] = C[..., 1, 1] / det
    C_inv[..., 0, 1] = -C[..., 0, 1] / det
    C_inv[..., 1, 0] = -C[..., 1, 0] / det
    C_inv[..., 1, 1] = C[..., 0, 0] / det
    frob = np.sqrt(np.sum(C_inv ** 2, axis=(-2, -1)))
    # largest singular value of a 2x2 matrix from its Frobenius norm and determinant
    d = 1.0 / det
    op = np.sqrt(0.5 * (frob ** 2 + np.sqrt(np.maximum(frob ** 4 - 4.0 * d ** 2, 0.0))))
    return C, C_inv, frob, op


def build_C(frame, scales):
    """The matrix sending ``e1 -> e_s / s_chi`` and ``e2 -> e_u / u_chi``."""
    if not (np.isfinite(scales.s_chi) and np.isfinite(scales.u_chi)):
        raise ValueError("scales must be finite")
    if math.sin(frame.alpha) < 1e-12:
        raise DegenerateCocycleError("sin(alpha) below 1e-12")
    C, C_inv, frob, op = _assemble_C(frame.e_s, frame.e_u, np.array(scales.s_chi),
                                     np.array(scales.u_chi))
    return LinearizationC(C=C, C_inv=C_inv, frob_inv=float(frob), op_inv=float(op))


def C_from_angles(s, u, alpha, rotation):
    """Alternative assembly ``R(rotation) [[1/s, cos a / u], [0, sin a / u]]``."""
    r = np.array([[math.cos(rotation), -math.sin(rotation)],
                  [math.sin(rotation), math.cos(rotation)]])
    return r @ np.array([[1.0 / s, math.cos(alpha) / u], [0.0, math.sin(alpha) / u]])


def reduce(fmap, x, C_at_x, C_at_fx, chi):
    """Diagonal form ``C(fx)^{-1} df_x C(x)``.

    Returns ``(lambda_chi, mu_chi, off_diagonal_residual)``.
    """
    d = C_at_fx.C_inv @ fmap.d_forward(wrap(x)) @ C_at_x.C
    lam, mu = float(d[0, 0]), float(d[1, 1])
    off = float(max(abs(d[0, 1]), abs(d[1, 0])))
    if off > 1e-6:
        raise ReductionError(f"off-diagonal residual {off:.3e}")
    cf = fmap.C_f
    if not (1.0 / cf < abs(lam) < math.exp(-chi)):
        raise ReductionError(f"|lambda| = {abs(lam):.6g} outside (1/C_f, e^-chi)")
    if not (math.exp(chi) < abs(mu) < cf):
        raise ReductionError(f"|mu| = {abs(mu):.6g} outside (e^chi, C_f)")
    return lam, mu, off


def log_Q_tilde(frob_inv, eps, beta):
    return (3.0 / beta) * math.log(eps) - (12.0 / beta) * math.log(frob_inv)


def chart_size(C, eps, beta=1.0):
    """Chart size ``eps^{3/beta} ||C^{-1}||_Fr^{-12/beta}`` and its lattice floor."""
    lq = log_Q_tilde(C.frob_inv, eps, beta)
    lattice = EpsilonLattice(eps)
    level = lattice.floor_level(lq)
    q_eps = float(lattice.value(level))
    if not q_eps < eps ** (3.0 / beta):
        raise AssertionError("chart size not below eps^(3/beta)")
    return ChartSize(Q_tilde=math.exp(lq), Q_eps=q_eps, level=level, epsilon=eps,
                     log_Q_tilde=lq)


def neighbor_size_check(frob_inv_neighbors, size, beta=1.0):
    """``||C^{-1}(f^i x)||^12 < eps^{2/beta} / Q_eps(x)`` for the given neighbours."""
    lhs = 12.0 * np.log(np.asarray(frob_inv_neighbors, dtype=float))
    rhs = (2.0 / beta) * math.log(size.epsilon) + size.level * size.epsilon / 3.0
    return bool(np.all(lhs < rhs))


def q_window(eps, share=0.01):
    """Smallest ``K`` with geometric tail beyond ``|k| > K`` below ``share`` of the window weight."""
    a = eps / 3.0
    k = 0
    while True:
        tail = 2.0 * math.exp(-(k + 1) * a)
        body = 1.0 + math.exp(-a) - 2.0 * math.exp(-(k + 1) * a)
        if tail < share * body:
            return k
        k += 1


def q_epsilon_log(log_Q_sequence, eps):
    """Log of ``q`` from log chart sizes over a symmetric window ``[-K, K]``."""
    lq = np.asarray(log_Q_sequence, dtype=float)
    if lq.ndim != 1 or len(lq) % 2 != 1:
        raise ValueError("need an odd-length window centred at 0")
    kmax = len(lq) // 2
    if kmax < q_window(eps):
        raise WindowTooShortError(f"window {kmax} shorter than {q_window(eps)}")
    k = np.abs(np.arange(-kmax, kmax + 1))
    return math.log(eps) - float(logsumexp(-k * eps / 3.0 - lq))


def q_epsilon(Q_sequence, eps):
    """``1/q = (1/eps) sum_{|k|<=K} exp(-|k| eps / 3) / Q_k``."""
    q = math.exp(q_epsilon_log(np.log(np.asarray(Q_sequence, dtype=float)), eps))
    center = np.asarray(Q_sequence, dtype=float)[len(Q_sequence) // 2]
    if not q < eps * center:
        raise AssertionError("q_eps not below eps Q_eps")
    return q


# ---------------------------------------------------------------------------
# orbit route

@dataclass
class OrbitReduction:
    """Reduction data for every point of a stored orbit.

    Arrays are indexed by orbit position; ``valid`` marks positions where the
    frame horizon and the scale truncation both fit inside the orbit.
    """

    points: np.ndarray
    e_s: np.ndarray
    e_u: np.ndarray
    alpha: np.ndarray
    lam_hat: np.ndarray
    mu_hat: np.ndarray
    accepted: np.ndarray
    s_chi: np.ndarray
    u_chi: np.ndarray
    tail: np.ndarray
    C: np.ndarray
    C_inv: np.ndarray
    frob_inv: np.ndarray
    op_inv: np.ndarray
    log_Q_tilde: np.ndarray
    Q_level: np.ndarray
    valid: np.ndarray


def reduce_orbit(fmap, points, chi, eps, beta=1.0, horizon=DEFAULT_HORIZON,
                 margin=ACCEPT_MARGIN, tol=SCALE_TOL):
    """Sweep a stored orbit (float points, consecutive images) and reduce every point.

    Works on arrays of shape ``(T, 2)`` or ``(n_orbits, T, 2)``; time is the
    second-to-last axis.
    """
    pts = np.asarray(points, dtype=float)
    T = pts.shape[-2]
    df = fmap.d_forward(pts)
    dfi = np.linalg.inv(df)  # df^{-1} at x_j maps T_{x_{j+1}} to T_{x_j}
    shape = pts.shape[:-2]

    # stable field: pull back from the end
    e_s = np.empty(pts.shape)
    e = np.broadcast_to(np.array([1.0, 0.3]) / np.hypot(1.0, 0.3), shape + (2,)).copy()
    e_s[..., T - 1, :] = e
    for j in range(T - 2, -1, -1):
        e = np.einsum("...ij,...j->...i", dfi[..., j, :, :], e)
        e /= np.linalg.norm(e, axis=-1, keepdims=True)
        e_s[..., j, :] = e
    # unstable field: push forward from the start
    e_u = np.empty(pts.shape)
    e = np.broadcast_to(np.array([0.3, 1.0]) / np.hypot(1.0, 0.3), shape + (2,)).copy()
    e_u[..., 0, :] = e
    for j in range(1, T):
        e = np.einsum("...ij,...j->...i", df[..., j - 1, :, :], e)
        e /= np.linalg.norm(e, axis=-1, keepdims=True)
        e_u[..., j, :] = e
    e_s, e_u = _orient(e_s, e_u)
    alpha = _angle(e_s, e_u)

    # one-step growth factors along the fields
    ls = np.log(np.linalg.norm(np.einsum("...ij,...j->...i", df, e_s), axis=-1))
    lu = np.log(np.linalg.norm(np.einsum("...ij,...j->...i", df, e_u), axis=-1))
    # backward factors of the unstable field: ||df^{-1}_{x_j} e_u(x_{j+1})|| = 1/exp(lu_j)

    cs = np.concatenate([np.zeros(shape + (1,)), np.cumsum(ls, axis=-1)], axis=-1)
    cu = np.concatenate([np.zeros(shape + (1,)), np.cumsum(lu, axis=-1)], axis=-1)
    lam_hat = np.full(shape + (T,), np.nan)
    mu_hat = np.full(shape + (T,), np.nan)
    if T > horizon:
        lam_hat[..., : T - horizon] = (cs[..., horizon:T] - cs[..., : T - horizon]) / horizon
        mu_hat[..., : T - horizon] = (cu[..., horizon:T] - cu[..., : T - horizon]) / horizon
    accepted = (lam_hat < -chi - margin) & (mu_hat > chi + margin)

    # scales by the one-step recursions s_j^2 = 2 + e^{2chi} g_j^2 s_{j+1}^2, in logs
    log2 = math.log(2.0)
    lws = 2.0 * chi + 2.0 * ls
    ls2 = np.empty(shape + (T,))
    ls2[..., T - 1] = log2
    lps = np.empty(shape + (T,))
    lps[..., T - 1] = 0.0
    for j in range(T - 2, -1, -1):
        ls2[..., j] = np.logaddexp(log2, lws[..., j] + ls2[..., j + 1])
        lps[..., j] = lws[..., j] + lps[..., j + 1]
    lwu = 2.0 * chi - 2.0 * lu
    lu2 = np.empty(shape + (T,))
    lu2[..., 0] = log2
    lpu = np.empty(shape + (T,))
    lpu[..., 0] = 0.0
    for j in range(1, T):
        lu2[..., j] = np.logaddexp(log2, lwu[..., j - 1] + lu2[..., j - 1])
        lpu[..., j] = lwu[..., j - 1] + lpu[..., j - 1]
    # omitted tails, estimated with the largest scale seen on the orbit
    log_tail = np.maximum(lps + ls2.max(axis=-1, keepdims=True) - ls2,
                          lpu + lu2.max(axis=-1, keepdims=True) - lu2)
    with np.errstate(over="ignore"):
        tail = np.exp(np.minimum(log_tail, 700.0))
        s = np.exp(0.5 * ls2)
        u = np.exp(0.5 * lu2)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        C, C_inv, frob, op = _assemble_C(e_s, e_u, s, u)
    finite = np.isfinite(frob) & np.isfinite(op) & (np.abs(np.sin(alpha)) > 1e-12)
    frob = np.where(finite, frob, np.inf)
    with np.errstate(divide="ignore"):
        lq = (3.0 / beta) * math.log(eps) - (12.0 / beta) * np.log(frob)
    lattice = EpsilonLattice(eps)
    levels = np.vectorize(lambda v: lattice.floor_level(v) if np.isfinite(v) else -1,
                          otypes=[np.int64])(lq)

    idx = np.arange(T)
    valid = (idx >= horizon) & (idx < T - horizon) & (tail < tol) & np.isfinite(lam_hat)
    valid = np.broadcast_to(valid, shape + (T,)) & finite
    return OrbitReduction(points=pts, e_s=e_s, e_u=e_u, alpha=alpha, lam_hat=lam_hat,
                          mu_hat=mu_hat, accepted=accepted, s_chi=s, u_chi=u, tail=tail,
                          C=C, C_inv=C_inv, frob_inv=frob, op_inv=op, log_Q_tilde=lq,
                          Q_level=levels, valid=valid)


def point_reduction(fmap, x, chi, eps, beta=1.0, horizon=DEFAULT_HORIZON):
    """Convenience: frame, scales, C and chart size at a single point."""
    frame = estimate_splitting(fmap, x, horizon, chi=chi)
    scales = lyapunov_scales(fmap, frame, chi)
    lin = build_C(frame, scales)
    return frame, scales, lin, chart_size(lin, eps, beta)


def orbit_window(fmap, x, n):
    """Float orbit ``f^k(x)`` for ``|k| <= n`` (generated forward from ``f^{-n}x``)."""
    start = iterate(fmap, x, -n)
    out = [start]
    for _ in range(2 * n):
        out.append(fmap.forward(out[-1]))
    return np.array(out)
