"""Acceptance checks at desk scale, one function per criterion.

Each check returns a :class:`~nuhcode.cli.Verdict`. The checks share one
:class:`DeskRuns` object so the cat map pipeline and the perturbed sample are
computed once.
"""

from __future__ import annotations

import math
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .alphabet import CoverageGapError, SubordinationError, orbit_to_chain
from .cli import Pipeline, PipelineConfig, Verdict, periodic_oracle, resolutions
from .manifolds import (PROBE_SEED, STEP_LOG, RepresentedCurve, backward_local_map,
                        compare_chains, curve_distance, forward_local_map,
                        local_manifold_checks, shadow, shadow_distances, transform_s,
                        transform_u)
from .markov import bracket_commutes
from .reduction import C_from_angles

N_SHADOW_CHAINS = 500
RATE_NS = (4, 8, 12, 16)
N_PAIRS = 50
N_TRANSFORM_TRIALS = 120
N_LOCAL = 20


class DeskRuns:
    """The cat map run of ``config`` and a smaller perturbed-cat run."""

    def __init__(self, config=None, perturbed_orbits=6, perturbed_len=300):
        self.config = PipelineConfig() if config is None else config
        self.cat = Pipeline(self.config)
        self.perturbed = Pipeline(replace(self.config, map_name="perturbed", delta=0.05,
                                          n_orbits=perturbed_orbits,
                                          orbit_len=perturbed_len))

    def chains(self, pipe, n, count, exclude_fixed=True):
        """``(site, chain, anchor)`` for spread orbit points, chains of radius ``n``."""
        S = pipe.get("sample")
        A = pipe.coarse()
        out = []
        for site in pipe.chain_sites(n, count, exclude_fixed):
            try:
                ch = orbit_to_chain(A, site, n)
            except (CoverageGapError, SubordinationError):
                continue
            out.append((site, ch, S.record(site[0]).anchors[site[1]]))
        return out


# ---------------------------------------------------------------------------
# criteria

def reduction_exactness(runs):
    """Conjugated derivative is diag(lambda_s, lambda_u) up to sign at every stored point."""
    S = runs.cat.get("sample")
    A = runs.cat.fmap.A
    lam = np.sort(np.abs(np.linalg.eigvals(A)))
    off = diag = 0.0
    n = 0
    for r in S.orbits:
        red = r.red
        k = np.flatnonzero(r.stored[:-1] & red.valid[1:])
        D = red.C_inv[k + 1] @ A @ red.C[k]
        off = max(off, float(np.max(np.abs(D[:, [0, 1], [1, 0]]))))
        diag = max(diag, float(np.max(np.abs(np.abs(D[:, [0, 1], [0, 1]]) - lam))))
        n += len(k)
    ok = off < 1e-10 and diag < 1e-10
    return Verdict("1 reduction exactness", ok,
                   f"{n} points, max off-diagonal {off:.2e}, max diagonal error {diag:.2e}")


def scale_closed_form(runs, n_frames=1000, seed=0):
    """Truncated scales against the geometric series; Frobenius identity on random frames."""
    S = runs.cat.get("sample")
    chi = runs.config.chi
    lam = np.sort(np.abs(np.linalg.eigvals(runs.cat.fmap.A)))
    s_exact = math.sqrt(2.0 / (1.0 - math.exp(2 * chi) * lam[0] ** 2))
    u_exact = math.sqrt(2.0 / (1.0 - math.exp(2 * chi) * lam[1] ** -2))
    err = 0.0
    for r in S.orbits:
        m = r.stored
        err = max(err, float(np.max(np.abs(r.red.s_chi[m] - s_exact))),
                  float(np.max(np.abs(r.red.u_chi[m] - u_exact))))
    rng = np.random.default_rng(seed)
    frob_err = 0.0
    for _ in range(n_frames):
        s, u = rng.uniform(1.0, 20.0, 2)
        alpha = rng.uniform(0.05, math.pi - 0.05)
        C = C_from_angles(s, u, alpha, rng.uniform(0, 2 * math.pi))
        frob = float(np.linalg.norm(np.linalg.inv(C)))
        formula = math.sqrt(s * s + u * u) / abs(math.sin(alpha))
        frob_err = max(frob_err, abs(frob - formula) / formula)
    ok = err < 1e-8 and frob_err < 1e-10
    return Verdict("2 scale closed form", ok, f"scale error {err:.2e} (s = {s_exact:.6f}); "
                                             f"Frobenius identity relative error {frob_err:.2e}")


def _random_curve(kind, sym, rng):
    """A random admissible curve: value, slope and curvature drawn inside the margins."""
    q = sym.p_u if kind == "u" else sym.p_s
    pm = sym.p_min
    for shrink in (1.0, 0.5, 0.25, 0.1):
        a = rng.uniform(-1, 1) * 0.9e-3 * pm * shrink
        b = rng.uniform(-1, 1) * 0.4 * pm ** (1 / 3) * shrink
        c = rng.uniform(-1, 1) * 0.05 * shrink * q ** (1 / 3)
        V = RepresentedCurve.from_function(kind, sym, lambda t: a + b * t + c * t * t / (2 * q),
                                           lambda t: b + c * t / q)
        if V.is_admissible():
            return V
    return RepresentedCurve.constant(kind, sym, 0.0)


def transform_contraction(runs, trials=N_TRANSFORM_TRIALS, seed=1):
    """C0 and C1 contraction of the graph transforms on random admissible pairs."""
    eps, chi = runs.config.eps, runs.config.chi
    rng = np.random.default_rng(seed)
    pools = [(runs.cat, runs.chains(runs.cat, 12, 10)),
             (runs.perturbed, runs.chains(runs.perturbed, 12, 10))]
    worst0, worst1 = 0.0, -math.inf
    bad0 = bad1 = done = 0
    with resolutions(runs.config):
        for trial in range(trials):
            pipe, pool = pools[trial % 2]
            _, ch, _ = pool[rng.integers(len(pool))]
            i = int(rng.integers(ch.lo, ch.hi))
            u, v = ch[i], ch[i + 1]
            if trial % 4 < 2:
                V1, V2 = _random_curve("u", u, rng), _random_curve("u", u, rng)
                lm = forward_local_map(pipe.fmap, u, v)
                W1 = transform_u(V1, u, v, lm, eps, chi)
                W2 = transform_u(V2, u, v, lm, eps, chi)
            else:
                V1, V2 = _random_curve("s", v, rng), _random_curve("s", v, rng)
                lm = backward_local_map(pipe.fmap, u, v)
                W1 = transform_s(V1, u, v, lm, eps, chi)
                W2 = transform_s(V2, u, v, lm, eps, chi)
            d0, d1 = curve_distance(V1, V2), curve_distance(V1, V2, True)
            e0, e1 = curve_distance(W1, W2), curve_distance(W1, W2, True)
            if d0 == 0:
                continue
            done += 1
            r0 = e0 / d0
            worst0 = max(worst0, r0)
            if r0 > math.exp(-chi / 2) * 1.05:
                bad0 += 1
            rhs = math.exp(-chi / 2) * (d1 + d0 ** (V1.beta / 3))
            worst1 = max(worst1, e1 / rhs)
            if e1 > rhs:
                bad1 += 1
    ok = done >= 100 and bad0 == 0 and bad1 == 0
    return Verdict("3 graph-transform contraction", ok,
                   f"{done} pairs; worst C0 factor {worst0:.4f} (bound "
                   f"{math.exp(-chi / 2) * 1.05:.4f}); worst C1 ratio {worst1:.3g}; "
                   f"failures {bad0}/{bad1}")


def parameter_evolution(runs):
    """Every transform step executed so far met its parameter bounds."""
    n, v = STEP_LOG.n_steps, STEP_LOG.n_violations
    return Verdict("4 parameter evolution", n > 0 and v == 0, f"{v} violations in {n} steps")


def shadowing_fidelity(runs, count=N_SHADOW_CHAINS, ns=RATE_NS):
    """Seeded decay rate, distance at radius 40 and equivariance on ``count`` chains."""
    c = runs.config
    pipe = runs.cat
    n = c.window
    target = -0.4 * c.chi
    worst_rate, worst_dist, worst_eq = -math.inf, 0.0, 0.0
    bad = 0
    chains = runs.chains(pipe, n + 1, count)
    with resolutions(c):
        for site, ch, anchor in chains:
            p = ch[ch.center].p_min
            d = shadow_distances(ch, pipe.fmap, c.eps, c.chi, anchor, ns, PROBE_SEED * p)
            keep = d > 0
            rate = (float(np.polyfit(np.array(ns)[keep], np.log(d[keep]), 1)[0])
                    if keep.sum() >= 2 else -math.inf)
            sh = shadow(ch, pipe.fmap, c.eps, c.chi, n, check_equivariance=True)
            dist = sh.distance_to(anchor)
            eq = sh.equivariance_gap / sh.convergence_gap
            worst_rate = max(worst_rate, rate)
            worst_dist = max(worst_dist, dist)
            worst_eq = max(worst_eq, eq)
            if rate > target or not dist < 1e-6 or not eq < 2.0:
                bad += 1
    ok = len(chains) >= count and bad == 0
    return Verdict("5 shadowing fidelity", ok,
                   f"{len(chains)} chains; worst log-rate {worst_rate:.3f} (bound {target:.3f}); "
                   f"worst distance at n={n} {worst_dist:.2e}; worst equivariance/gap "
                   f"{worst_eq:.3f}; failures {bad}")


def local_stable_manifolds(runs, count=N_LOCAL):
    """Pair distances and distortion along local stable curves, cat and perturbed."""
    parts = []
    ok = True
    with resolutions(runs.config):
        for name, pipe in (("cat", runs.cat), ("perturbed", runs.perturbed)):
            reps = [local_manifold_checks(ch, pipe.fmap, runs.config.eps, runs.config.chi,
                                          k_max=30)
                    for _, ch, _ in runs.chains(pipe, 40, count)]
            good = sum(r.ok for r in reps)
            ok &= bool(reps) and good == len(reps)
            parts.append(f"{name} {good}/{len(reps)} (worst distance ratio "
                         f"{max(r.worst_distance_ratio for r in reps):.3f}, worst distortion "
                         f"{max(r.worst_distortion for r in reps):.2e})")
    return Verdict("6 local stable manifolds", ok, "; ".join(parts))


def inverse_problem(runs, count=N_PAIRS, n=20):
    """Same-shadow pairs: a chain and its variant with windows lowered by 64 levels."""
    parts = []
    ok = True
    with resolutions(runs.config):
        for name, pipe in (("cat", runs.cat), ("perturbed", runs.perturbed)):
            A = pipe.coarse()
            done = failed = 0
            worst = dict(d_delta=0.0, c_ratio=0.0)
            for site, ch, _ in runs.chains(pipe, n, 2 * count):
                if done == count:
                    break
                try:
                    other = orbit_to_chain(A, site, n, offsets=(64, 64))
                except (CoverageGapError, SubordinationError):
                    continue
                rep = compare_chains(ch, other, pipe.fmap, runs.config.eps, runs.config.chi)
                done += 1
                failed += not rep.ok
                worst["d_delta"] = max(worst["d_delta"], rep.worst("d_delta"))
                worst["c_ratio"] = max(worst["c_ratio"],
                                       max(r.c_norm / r.c_bound for r in rep.rows))
            ok &= done >= count and failed == 0
            parts.append(f"{name} {done - failed}/{done} pairs (worst |dDelta| "
                         f"{worst['d_delta']:.2e}, worst |c|/(q/10) {worst['c_ratio']:.2e})")
    return Verdict("7 inverse problem", ok, "; ".join(parts))


def cover_and_partition(runs):
    """Filter, disjointness, containment, Markov property and bracket commutation."""
    coded, cov = runs.cat.get("cover")
    P = runs.cat.get("refine")
    mk = runs.cat.out["refine"].summary["markov"]
    checked = bad = 0
    worst = 0.0
    with resolutions(runs.config):
        for Z in cov.zsets:
            for x in Z.members:
                for y in Z.members:
                    d = bracket_commutes(x, y, Z, cov, coded)
                    if d is None:
                        continue
                    checked += 1
                    worst = max(worst, d)
                    bad += d > runs.config.membership_res
    ok = (not cov.filter_violations and P.disjoint and not P.containment_violations
          and mk["violations"] == 0 and bad == 0 and checked > 0)
    return Verdict("8 cover and partition", ok,
                   f"filter violations {len(cov.filter_violations)}; disjoint {P.disjoint}; "
                   f"containment violations {len(P.containment_violations)}; Markov "
                   f"{mk['violations']}/{mk['checked']}; bracket commutation {bad}/{checked} "
                   f"(worst {worst:.1e})")


def periodic_counting(runs):
    st = runs.cat.get("count")
    truth = periodic_oracle(runs.cat.fmap, 5)
    certified = st["certified"][:5]
    over = [n for n, k in enumerate(certified, 1) if k > truth[n - 1]]
    cov = [k / t for k, t in zip(certified, truth)]
    ok = not over and all(v >= 0.8 for v in cov[:4]) and st["residual"] < 1e-6
    stretch = all(k == t for k, t in zip(certified, truth))
    return Verdict("9 periodic counting", ok,
                   f"certified {certified} vs P_n {truth}; coverage "
                   f"{', '.join(f'{v:.3f}' for v in cov)}; max residual {st['residual']:.1e}; "
                   f"full coverage {'yes' if stretch else 'no'}")


def entropy_estimate(runs):
    h = runs.cat.get("count")["entropy"]
    target = math.log(max(abs(np.linalg.eigvals(runs.cat.fmap.A))))
    ok = h is not None and abs(h - target) <= 0.15
    shift = runs.cat.get("shift")
    return Verdict("10 entropy estimate", ok,
                   f"slope {h} vs {target:.4f} at a recurrent vertex; shift has "
                   f"{shift.degree_stats()['edges']} edges, "
                   f"{len(shift.recurrent_vertices())} recurrent vertices")


def finite_to_one(runs):
    rows = runs.cat.get("count")["f2one"]
    bad = sum(1 for r in rows if r[4] > r[3])
    return Verdict("11 finite-to-one", bool(rows) and bad == 0,
                   f"{len(rows) - bad}/{len(rows)} coded points within N(R)N(S)")


def property_suites(runs, tests_dir=None):
    """Runs the invariant suites of every module (marked ``property``) in a subprocess."""
    root = Path(tests_dir) if tests_dir else Path(__file__).resolve().parents[2] / "tests"
    if not root.is_dir():
        return Verdict("12 property suites", None, f"no test directory at {root}")
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-m", "property",
                           "-p", "no:cacheprovider", str(root)],
                          capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    return Verdict("12 property suites", proc.returncode == 0, tail)


CRITERIA = (reduction_exactness, scale_closed_form, transform_contraction, shadowing_fidelity,
            local_stable_manifolds, inverse_problem, cover_and_partition, periodic_counting,
            entropy_estimate, finite_to_one, parameter_evolution, property_suites)


def run_acceptance(config=None, runs=None):
    """All criteria in order; parameter evolution is judged after the others ran."""
    STEP_LOG.reset()
    runs = DeskRuns(config) if runs is None else runs
    verdicts = [check(runs) for check in CRITERIA]
    return sorted(verdicts, key=lambda v: int(v.name.split()[0]))
