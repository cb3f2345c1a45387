"""Command line pipeline: configuration, staged runs, artifacts and plots.

Stages run in order ``sample -> reduce -> alphabet -> chains -> cover -> refine
-> shift -> count``. A verb runs its stage after recomputing everything
upstream from the configuration; upstream artifacts already on disk must match
the recomputed ones byte for byte, otherwise the run stops with a stage error.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import manifolds, markov
from .alphabet import (CoverageGapError, EmptyGraphError, NoHyperbolicityError,
                       SubordinationError, build_graph, coarse_grain, orbit_to_chain,
                       sample_orbits)
from .charts import validate_epsilon
from .manifolds import STEP_LOG, shadow
from .markov import build_cover, code_sample, refine, symbolic_markov_check
from .reduction import DEFAULT_HORIZON
from .surface_model import ToralAutomorphism, lift, make_map, mp_to_float
from .symbolic import (MAX_EXACT_N, NotRecurrentError, build_hat_graph, count_loops,
                       gurevich_entropy, periodic_points, preimage_bound)

EXIT_PASS, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2, 3
STAGES = ("sample", "reduce", "alphabet", "chains", "cover", "refine", "shift", "count")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, diagnostic):
        super().__init__(f"stage {stage!r} failed: {diagnostic}")
        self.stage = stage
        self.diagnostic = diagnostic


# ---------------------------------------------------------------------------
# configuration

# (section, key) of every field in the INI file
_LAYOUT = {
    "map_name": ("map", "name"), "matrix": ("map", "matrix"), "delta": ("map", "delta"),
    "K": ("map", "K"),
    "chi": ("pipeline", "chi"), "eps": ("pipeline", "eps"), "beta": ("pipeline", "beta"),
    "horizon": ("pipeline", "horizon"), "n_orbits": ("pipeline", "n_orbits"),
    "orbit_len": ("pipeline", "orbit_len"), "window": ("pipeline", "window"),
    "coding_radius": ("pipeline", "coding_radius"), "n_chains": ("pipeline", "n_chains"),
    "n_coded": ("pipeline", "n_coded"), "max_period": ("pipeline", "max_period"),
    "seed": ("pipeline", "seed"),
    "grid": ("resolution", "grid"), "identity_res": ("resolution", "identity"),
    "membership_res": ("resolution", "membership"),
    "checks": ("stages", "checks"), "plots": ("stages", "plots"),
    "out_dir": ("output", "directory"),
}


@dataclass
class PipelineConfig:
    """Every knob of a run. Defaults are the desk-scale cat map run."""

    map_name: str = "cat"
    matrix: tuple = (2, 1, 1, 1)
    delta: float = 0.05
    K: float = 6.0
    chi: float = 0.5
    eps: float = 0.01
    beta: float = 1.0
    horizon: int = DEFAULT_HORIZON
    n_orbits: int = 100
    orbit_len: int = 1000
    window: int = 40
    # radius of the chains that code the cover sample
    coding_radius: int = 12
    n_chains: int = 50
    # coded orbit points, taken as runs of consecutive points
    n_coded: int = 120
    max_period: int = 5
    seed: int = 0
    grid: int = 65
    identity_res: float = 1e-8
    membership_res: float = 1e-7
    checks: bool = True
    plots: bool = True
    out_dir: str = "nuhcode-out"
    force: bool = False

    def map_params(self):
        m = tuple(int(v) for v in self.matrix)
        if self.map_name in ("cat", "automorphism"):
            return dict(matrix=(m[:2], m[2:]))
        if self.map_name in ("perturbed", "perturbed_cat"):
            return dict(matrix=(m[:2], m[2:]), delta=self.delta)
        return dict(K=self.K)

    def make_map(self):
        try:
            return make_map(self.map_name, **self.map_params())
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def validate(self):
        """Basic ranges, then the epsilon ledger unless ``force`` is set."""
        if not self.chi > 0:
            raise ConfigError("chi must be positive")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if len(self.matrix) != 4:
            raise ConfigError("matrix needs four integer entries")
        for name in ("n_orbits", "orbit_len", "window", "coding_radius", "grid", "horizon"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_period > MAX_EXACT_N:
            raise ConfigError(f"max_period must be at most {MAX_EXACT_N}")
        fmap = self.make_map()
        ledger = validate_epsilon(fmap, self.eps, self.beta, self.chi)
        if not ledger.passed and not self.force:
            names = ", ".join(c.name for c in ledger.failures())
            raise ConfigError(f"validate_epsilon failed at eps={self.eps}: {names} "
                              "(use --force to run anyway)")
        return ledger

    # INI round trip

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for name, (sec, key) in _LAYOUT.items():
            if not cp.has_section(sec):
                cp.add_section(sec)
            val = getattr(self, name)
            cp[sec][key] = ",".join(str(v) for v in val) if name == "matrix" else str(val)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text, base=None):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"unreadable config: {e}") from None
        known = {(s, k) for s, k in _LAYOUT.values()}
        for sec in cp.sections():
            for key in cp[sec]:
                if (sec, key) not in known:
                    raise ConfigError(f"unknown config entry [{sec}] {key}")
        cfg = cls() if base is None else base
        for name, (sec, key) in _LAYOUT.items():
            if cp.has_option(sec, key):
                setattr(cfg, name, _parse(name, cp[sec][key]))
        return cfg

    @classmethod
    def from_file(cls, path, base=None):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_ini(text, base)


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _parse(name, raw):
    kind = _TYPES[name]
    raw = raw.strip()
    try:
        if name == "matrix":
            vals = tuple(int(v) for v in raw.replace(" ", "").split(","))
            return vals
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


@contextlib.contextmanager
def resolutions(config):
    """Install the grid size and set resolutions of ``config`` for the duration of a run."""
    saved = manifolds.N_GRID, markov.IDENTITY_RES, markov.MEMBERSHIP_RES
    manifolds.N_GRID = config.grid
    markov.IDENTITY_RES = config.identity_res
    markov.MEMBERSHIP_RES = config.membership_res
    try:
        yield
    finally:
        manifolds.N_GRID, markov.IDENTITY_RES, markov.MEMBERSHIP_RES = saved


# ---------------------------------------------------------------------------
# artifacts

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


class ArtifactStore:
    """Output directory. ``strict`` files must match what is already on disk."""

    def __init__(self, root):
        self.root = Path(root)
        self.written = []

    def path(self, name):
        return self.root / name

    def put(self, stage, name, text, strict=False):
        p = self.path(name)
        if strict and p.exists():
            if p.read_text(encoding="utf-8") != text:
                raise StageError(stage, f"persisted artifact {name} differs from the "
                                        "recomputed one; rerun upstream stages")
            return p
        self.root.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        self.written.append(name)
        return p


# ---------------------------------------------------------------------------
# the staged run

@dataclass
class StageOutput:
    summary: dict
    files: dict = field(default_factory=dict)
    seconds: float = 0.0


def _origin_orbit(sample):
    return [r.orbit_id for r in sample.orbits if r.period == 1]


def _spread(items, k):
    if k >= len(items):
        return list(items)
    idx = np.linspace(0, len(items) - 1, k).round().astype(int)
    return [items[i] for i in idx]


def _vname(v):
    o, k = v.chart.site
    return f"{o}:{k}:{v.lu}:{v.ls}"


class Pipeline:
    """Lazily computed stages of one configured run."""

    def __init__(self, config):
        self.config = config
        self.fmap = config.make_map()
        self.out = {}
        self.state = {}

    # stage bodies return (state, StageOutput)

    def _sample(self):
        c = self.config
        try:
            S = sample_orbits(self.fmap, c.chi, c.eps, n_orbits=c.n_orbits,
                              orbit_len=c.orbit_len, horizon=c.horizon, window=c.window,
                              beta=c.beta, seed=c.seed)
        except NoHyperbolicityError as e:
            raise StageError("sample", f"no-hyperbolicity: {e}") from None
        rows = [(r.orbit_id, k, *r.points[k]) for r in S.orbits for k in np.flatnonzero(r.stored)]
        text = csv_text(["orbit", "index", "x", "y"], rows)
        return S, StageOutput(dict(points=S.n_points, orbits=len(S.orbits),
                                   accepted_fraction=S.accepted_fraction,
                                   q_radius=S.q_radius), {"points.csv": text})

    def _reduce(self):
        S = self.get("sample")
        rows = []
        for r in S.orbits:
            red = r.red
            for k in np.flatnonzero(r.stored):
                rows.append((r.orbit_id, k, red.alpha[k], red.s_chi[k], red.u_chi[k],
                             red.frob_inv[k], int(r.Q_level[k]), int(r.lu[k]), int(r.ls[k])))
        text = csv_text(["orbit", "index", "alpha", "s_chi", "u_chi", "frob_inv", "Q_level",
                         "lu_level", "ls_level"], rows)
        arr = np.array([r[2:6] for r in rows]) if rows else np.zeros((0, 4))
        levels = [r[6] for r in rows]
        summ = dict(points=len(rows),
                    min_sin_alpha=float(np.min(np.abs(np.sin(arr[:, 0])))) if rows else None,
                    max_s_chi=float(arr[:, 1].max()) if rows else None,
                    max_u_chi=float(arr[:, 2].max()) if rows else None,
                    Q_levels=[min(levels), max(levels)] if rows else None)
        return None, StageOutput(summ, {"reduction.csv": text})

    def coarse(self):
        """The alphabet alone; the graph may still turn out empty."""
        if "_coarse" not in self.state:
            S = self.get("sample")
            with resolutions(self.config):
                self.state["_coarse"] = coarse_grain(S)
        return self.state["_coarse"]

    def _alphabet(self):
        A = self.coarse()
        try:
            G = build_graph(A)
        except EmptyGraphError as e:
            raise StageError("alphabet", str(e)) from None
        arows = [(i, f"{c.site[0]}:{c.site[1]}", *c.x, int(A.top[i]), c.Q.level)
                 for i, c in enumerate(A.charts)]
        vrows = [tuple(r.values()) for r in G.vertex_records()]
        vhead = list(G.vertex_records()[0]) if G.vertices else ["site"]
        files = {"alphabet.csv": csv_text(["chart", "site", "x", "y", "top_level", "Q_level"],
                                          arows),
                 "graph_vertices.csv": csv_text(vhead, vrows),
                 "graph.txt": "\n".join(G.edge_list_lines()) + "\n"}
        summ = dict(charts=len(A), depth=A.depth, **G.degree_stats())
        return (A, G), StageOutput(summ, files)

    def chain_sites(self, n, count, exclude_fixed=True):
        """Spread orbit points that carry chains of radius ``n``."""
        S = self.get("sample")
        skip = set(_origin_orbit(S)) if exclude_fixed else set()
        sites = [s for s in S.sites(n + 1) if s[0] not in skip]
        return _spread(sites, count)

    def _chains(self):
        c = self.config
        S = self.get("sample")
        A, _ = self.get("alphabet")
        rows = []
        worst = dict(distance=0.0, ratio=0.0)
        skipped = 0
        for site in self.chain_sites(c.window, c.n_chains):
            try:
                ch = orbit_to_chain(A, site, c.window + 1)
            except (CoverageGapError, SubordinationError):
                skipped += 1
                continue
            sh = shadow(ch, self.fmap, c.eps, c.chi, c.window, check_equivariance=True)
            anchor = S.record(site[0]).anchors[site[1]]
            d = sh.distance_to(anchor)
            ratio = sh.equivariance_gap / sh.convergence_gap
            worst["distance"] = max(worst["distance"], d)
            worst["ratio"] = max(worst["ratio"], ratio)
            p = mp_to_float(anchor)
            rows.append((f"{site[0]}:{site[1]}", *p, *sh.point, d, sh.convergence_gap,
                         sh.equivariance_gap))
        text = csv_text(["site", "x", "y", "shadow_x", "shadow_y", "distance",
                         "convergence_gap", "equivariance_gap"], rows)
        return rows, StageOutput(dict(chains=len(rows), skipped=skipped,
                                      worst_distance=worst["distance"],
                                      worst_equivariance_ratio=worst["ratio"]),
                                 {"shadows.csv": text})

    def coded_sites(self):
        """Runs of consecutive orbit points, so that images are coded too."""
        c = self.config
        S = self.get("sample")
        margin = c.coding_radius + 2
        by_orbit = {}
        for s in S.sites(margin):
            by_orbit.setdefault(s[0], []).append(s)
        fixed = _origin_orbit(S)
        out = [by_orbit[o][0] for o in fixed if o in by_orbit]
        others = [o for o in sorted(by_orbit) if o not in fixed]
        run = 20
        n_runs = max(1, (c.n_coded - len(out)) // run)
        for o in _spread(others, n_runs):
            sites = by_orbit[o]
            mid = len(sites) // 2
            out.extend(sites[mid:mid + run])
        return out

    def _cover(self):
        c = self.config
        A, _ = self.get("alphabet")
        coded = code_sample(A, self.fmap, self.coded_sites(), c.coding_radius, c.eps, c.chi)
        cov = build_cover(coded)
        crows = [(x.index, *x.point, len(x.codings), f"{x.source[0]}:{x.source[1]}")
                 for x in coded]
        zrows = [(i, _vname(Z.vertex), len(Z.members),
                  ";".join(str(m.index) for m in Z.members)) for i, Z in enumerate(cov.zsets)]
        files = {"codings.csv": csv_text(["point", "x", "y", "codings", "source"], crows),
                 "cover.csv": csv_text(["set", "vertex", "size", "members"], zrows)}
        summ = dict(coded=len(coded), skipped=coded.skipped, sets=len(cov.zsets),
                    max_degree=cov.max_degree, filter_violations=len(cov.filter_violations))
        return (coded, cov), StageOutput(summ, files)

    def _refine(self):
        coded, cov = self.get("cover")
        P = refine(cov, coded)
        rrows = [(R.id, m.index, *m.point) for R in P.rectangles for m in R.members]
        frows = []
        for R in P.rectangles:
            for m in R.members[:1]:
                sh = m.codings[0].shadow
                C = sh.chart.chart.C.C
                for kind, V in (("u", sh.V_u), ("s", sh.V_s)):
                    disp = (V.points() - sh.xi) @ C.T
                    for j, d in enumerate(disp):
                        frows.append((m.index, kind, j, *d))
        mk = dict(checked=0, violations=0, worst=0.0)
        for x in coded:
            if x.index not in cov.member_of:
                continue
            rep = symbolic_markov_check(x, cov, coded)
            mk["checked"] += rep.checked
            mk["violations"] += rep.violations
            mk["worst"] = max(mk["worst"], rep.worst)
        files = {"partition.csv": csv_text(["rectangle", "point", "x", "y"], rrows),
                 "fibers.csv": csv_text(["point", "kind", "node", "dx", "dy"], frows)}
        summ = dict(rectangles=len(P.rectangles), disjoint=P.disjoint,
                    containment_violations=len(P.containment_violations),
                    count_violations=len(P.count_violations),
                    unstable_profiles=P.unstable_profiles, markov=mk)
        return P, StageOutput(summ, files)

    def _shift(self):
        coded, _ = self.get("cover")
        P = self.get("refine")
        sh = build_hat_graph(P, coded)
        rec = sh.recurrent_vertices()
        summ = dict(**sh.degree_stats(), transitions=sh.n_transitions, recurrent=len(rec))
        return sh, StageOutput(summ, {"shift.txt": "\n".join(sh.edge_list_lines()) + "\n"})

    def _count(self):
        c = self.config
        coded, _ = self.get("cover")
        P = self.get("refine")
        sh = self.get("shift")
        rec = sh.recurrent_vertices()
        oracle = periodic_oracle(self.fmap, c.max_period)
        lrows, prows = [], []
        coverage = {}
        residual = 0.0
        for n in range(1, c.max_period + 1):
            certs = periodic_points(self.fmap, sh, n, P, coded)
            loops_at = count_loops(sh, rec[0], n) if rec else 0
            P_n = oracle[n - 1] if oracle else None
            if P_n:
                coverage[n] = len(certs) / P_n
            lrows.append((n, loops_at, len(certs), "" if P_n is None else P_n))
            for cert in certs:
                residual = max(residual, cert.residual)
                prows.append((n, " ".join(map(str, cert.loop)), *cert.point, cert.residual,
                               cert.newton_steps))
        entropy = gurevich_entropy(sh, rec[0]) if rec else None
        frows = []
        for x in coded:
            if x.index not in P.rect_of:
                continue
            R = P.of(x)
            fx = coded.find(coded.image(x))
            S = P.of(fx[0]) if fx and fx[0].index in P.rect_of else R
            bound, count = preimage_bound(x, R, S, P, coded)
            frows.append((x.index, R.id, S.id, bound, count))
        files = {"loops.csv": csv_text(["n", "loops_at_vertex", "certified", "oracle"], lrows),
                 "periodic.csv": csv_text(["n", "loop", "x", "y", "residual", "steps"], prows),
                 "finite_to_one.csv": csv_text(["point", "R", "S", "bound", "count"], frows)}
        summ = dict(P_n_table=[dict(n=r[0], loops=r[1], certified=r[2], oracle=r[3])
                               for r in lrows],
                    entropy=entropy, coverage=coverage, max_residual=residual,
                    finite_to_one=dict(tested=len(frows),
                                       violations=sum(1 for r in frows if r[4] > r[3])))
        return dict(coverage=coverage, entropy=entropy, residual=residual,
                    certified=[r[2] for r in lrows], oracle=oracle,
                    f2one=frows), StageOutput(summ, files)

    # driver

    def get(self, stage):
        if stage not in self.state:
            body = getattr(self, "_" + stage)
            t = time.perf_counter()
            try:
                with resolutions(self.config):
                    state, out = body()
            except StageError:
                raise
            except (ArithmeticError, LookupError, ValueError, RuntimeError) as e:
                raise StageError(stage, f"{type(e).__name__}: {e}") from e
            out.seconds = time.perf_counter() - t
            self.state[stage] = state
            self.out[stage] = out
        return self.state[stage]

    def run(self, upto, store=None, strict_upstream=True):
        """Run all stages up to ``upto``; upstream artifacts are checked, the last is written."""
        names = STAGES[:STAGES.index(upto) + 1]
        for name in names:
            self.get(name)
            if store is not None:
                for fname, text in self.out[name].files.items():
                    store.put(name, fname, text, strict=strict_upstream and name != upto)
        return {n: self.out[n] for n in names}


def periodic_oracle(fmap, n_max):
    """``|det(A^n - I)|`` for automorphisms; ``None`` for other maps."""
    if not isinstance(fmap, ToralAutomorphism):
        return None
    A = np.array([[int(round(v)) for v in row] for row in fmap.A], dtype=object)
    out = []
    M = np.identity(2, dtype=object)
    for _ in range(n_max):
        M = M.dot(A)
        D = M - np.identity(2, dtype=object)
        out.append(abs(int(D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0])))
    return out


# ---------------------------------------------------------------------------
# verdicts and report

@dataclass
class Verdict:
    name: str
    passed: bool | None
    detail: str

    def line(self):
        tag = {True: "PASS", False: "FAIL", None: "N/A "}[self.passed]
        return f"[{tag}] {self.name}: {self.detail}"


def run_verdicts(pipe):
    """Checks computed from the run's own stages."""
    c = pipe.config
    out = []
    out.append(Verdict("transform parameter bounds",
                       STEP_LOG.n_violations == 0,
                       f"{STEP_LOG.n_violations} violations in {STEP_LOG.n_steps} steps"))
    if "chains" in pipe.out:
        s = pipe.out["chains"].summary
        out.append(Verdict("shadowing", s["worst_distance"] < 1e-6
                           and s["worst_equivariance_ratio"] < 2.0,
                           f"worst distance {s['worst_distance']:.3g}, worst equivariance/gap "
                           f"{s['worst_equivariance_ratio']:.3g}"))
    if "cover" in pipe.out:
        s = pipe.out["cover"].summary
        out.append(Verdict("cover filter", s["filter_violations"] == 0,
                           f"{s['filter_violations']} violations over {s['sets']} sets"))
    if "refine" in pipe.out:
        s = pipe.out["refine"].summary
        ok = s["disjoint"] and s["containment_violations"] == 0
        out.append(Verdict("partition", ok, f"disjoint={s['disjoint']}, containment "
                                            f"violations {s['containment_violations']}"))
        mk = s["markov"]
        out.append(Verdict("markov property", mk["violations"] == 0,
                           f"{mk['violations']} of {mk['checked']} fiber images off target"))
    if "count" in pipe.out:
        st = pipe.state["count"]
        if st["oracle"] is None:
            out.append(Verdict("periodic counts", None, "no ground truth for this map"))
            out.append(Verdict("entropy", None, "no ground truth for this map"))
        else:
            over = [n for n, k in enumerate(st["certified"], 1) if k > st["oracle"][n - 1]]
            low = {n: v for n, v in st["coverage"].items() if n <= 4 and v < 0.8}
            ok = not over and not low and st["residual"] < 1e-6
            cov = ", ".join(f"{n}:{v:.2f}" for n, v in st["coverage"].items())
            out.append(Verdict("periodic counts", ok, f"coverage {cov}; counts above truth "
                                                      f"at {over or 'none'}"))
            target = math.log(max(abs(np.linalg.eigvals(pipe.fmap.A))))
            h = st["entropy"]
            out.append(Verdict("entropy", h is not None and abs(h - target) <= 0.15,
                               f"estimate {h} vs {target:.4f}"))
        bad = sum(1 for r in st["f2one"] if r[4] > r[3])
        out.append(Verdict("finite-to-one", bad == 0, f"{bad} of {len(st['f2one'])} above bound"))
    if not c.checks:
        for v in out:
            v.passed = None
    return out


@dataclass
class RunReport:
    config: dict
    stages: dict
    verdicts: list
    exit_code: int
    error: str | None = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def run_pipeline(config, upto="count", store=None, strict_upstream=True):
    """Run the configured stages and return ``(RunReport, Pipeline)``.

    Stage failures are recorded in the report with exit code 3; the artifacts
    written before the failure stay on disk.
    """
    STEP_LOG.reset()
    store = ArtifactStore(config.out_dir) if store is None else store
    pipe = Pipeline(config)
    error = None
    try:
        pipe.run(upto, store, strict_upstream)
    except StageError as e:
        error = str(e)
    verdicts = run_verdicts(pipe) if error is None else []
    if error:
        code = EXIT_STAGE
    elif any(v.passed is False for v in verdicts):
        code = EXIT_ACCEPTANCE
    else:
        code = EXIT_PASS
    stages = {n: dict(summary=o.summary, seconds=round(o.seconds, 3))
              for n, o in pipe.out.items()}
    cfg = {k: v for k, v in asdict(config).items()}
    report = RunReport(config=cfg, stages=stages, verdicts=[asdict(v) for v in verdicts],
                       exit_code=code, error=error)
    store.put("report", "report.json", report.to_json() + "\n")
    if config.plots and error is None and "refine" in pipe.out:
        emit_plots(store.root)
    return report, pipe


# ---------------------------------------------------------------------------
# plots

_SIZE = 480
_PAD = 40
# fiber glyph length in unit-square coordinates; real fibers are far smaller
_FIBER_GLYPH = 0.04


def _px(p):
    return _PAD + p[0] * _SIZE, _PAD + (1.0 - p[1]) * _SIZE


def _color(i):
    return f"hsl({(i * 137.508) % 360:.1f},70%,45%)"


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def emit_plots(artifacts):
    """Render ``partition.svg`` from the partition and fiber tables in ``artifacts``.

    Rectangle members are drawn as glyphs colored by rectangle id. Fibers are
    drawn magnified to a fixed glyph length around their base point, since at
    desk scale they are many orders of magnitude below a pixel.
    """
    root = Path(artifacts)
    part = root / "partition.csv"
    if not part.exists():
        raise FileNotFoundError(f"missing artifact {part}")
    rows = _read_csv(part)
    fib = _read_csv(root / "fibers.csv") if (root / "fibers.csv").exists() else []
    W = _SIZE + 2 * _PAD
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{W}" '
           f'viewBox="0 0 {W} {W}">',
           f"<desc>unit square; {len(rows)} rectangle members; fibers magnified to "
           f"{_FIBER_GLYPH} of the square</desc>",
           f'<rect x="{_PAD}" y="{_PAD}" width="{_SIZE}" height="{_SIZE}" fill="none" '
           'stroke="black" stroke-width="1"/>']
    for t in (0.0, 0.5, 1.0):
        x, y = _px((t, 0.0))
        out.append(f'<text x="{x:.1f}" y="{y + 16:.1f}" font-size="11" '
                   f'text-anchor="middle">{t:g}</text>')
        x, y = _px((0.0, t))
        out.append(f'<text x="{x - 8:.1f}" y="{y + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{t:g}</text>')
    base = {}
    for r in rows:
        p = (float(r["x"]) % 1.0, float(r["y"]) % 1.0)
        base[r["point"]] = p
        x, y = _px(p)
        out.append(f'<rect class="member" data-rect="{r["rectangle"]}" x="{x - 2:.2f}" '
                   f'y="{y - 2:.2f}" width="4" height="4" fill="{_color(int(r["rectangle"]))}"/>')
    curves = {}
    for r in fib:
        curves.setdefault((r["point"], r["kind"]), []).append((float(r["dx"]), float(r["dy"])))
    for (pt, kind), d in sorted(curves.items()):
        if pt not in base:
            continue
        d = np.array(d)
        span = np.max(np.linalg.norm(d, axis=1))
        if not span > 0:
            continue
        pts = np.array(base[pt]) + d * (0.5 * _FIBER_GLYPH / span)
        path = " ".join(f"{a:.2f},{b:.2f}" for a, b in (_px(q) for q in pts))
        color = "crimson" if kind == "u" else "royalblue"
        out.append(f'<polyline class="fiber-{kind}" points="{path}" fill="none" '
                   f'stroke="{color}" stroke-width="1.2"/>')
    out.append("</svg>")
    target = root / "partition.svg"
    target.write_text("\n".join(out) + "\n", encoding="utf-8")
    return [target]


# ---------------------------------------------------------------------------
# argument parsing

def _add_config_flags(p):
    g = p.add_argument_group("configuration (flags override the config file)")
    g.add_argument("--config", help="INI configuration file")
    g.add_argument("--map", dest="map_name", choices=["cat", "perturbed", "standard"])
    g.add_argument("--matrix", help="automorphism entries a,b,c,d")
    g.add_argument("--delta", type=float)
    g.add_argument("--K", type=float)
    g.add_argument("--chi", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--horizon", type=int)
    g.add_argument("--n-orbits", type=int)
    g.add_argument("--orbit-len", type=int)
    g.add_argument("--window", type=int)
    g.add_argument("--coding-radius", type=int)
    g.add_argument("--n-chains", type=int)
    g.add_argument("--n-coded", type=int)
    g.add_argument("--max-period", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--grid", type=int)
    g.add_argument("--identity-res", type=float)
    g.add_argument("--membership-res", type=float)
    g.add_argument("--no-checks", dest="checks", action="store_false", default=None)
    g.add_argument("--no-plots", dest="plots", action="store_false", default=None)
    g.add_argument("--out", dest="out_dir")
    g.add_argument("--force", action="store_true", help="run even if validate_epsilon fails")


def config_from_args(ns):
    cfg = PipelineConfig.from_file(ns.config) if ns.config else PipelineConfig()
    for f in fields(PipelineConfig):
        val = getattr(ns, f.name, None)
        if val is None:
            continue
        if f.name == "matrix":
            val = _parse("matrix", val)
        setattr(cfg, f.name, val)
    return cfg


def build_parser():
    p = argparse.ArgumentParser(prog="nuhcode", description="Countable Markov partitions for "
                                "surface maps on the flat torus.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in STAGES + ("all",):
        sp = sub.add_parser(verb, help=f"run the pipeline through {verb}" if verb != "all"
                            else "run every stage")
        _add_config_flags(sp)
    sp = sub.add_parser("check", help="run the acceptance suite")
    _add_config_flags(sp)
    sp = sub.add_parser("plot", help="render SVG from persisted artifacts")
    sp.add_argument("--out", dest="out_dir", default=PipelineConfig.out_dir)
    sp = sub.add_parser("config", help="print the effective configuration as INI")
    _add_config_flags(sp)
    return p


def main(argv=None):
    ns = build_parser().parse_args(argv)
    if ns.verb == "plot":
        try:
            for f in emit_plots(ns.out_dir):
                print(f)
        except FileNotFoundError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_STAGE
        return EXIT_PASS
    try:
        cfg = config_from_args(ns)
        cfg.validate()
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if ns.verb == "config":
        print(cfg.to_ini(), end="")
        return EXIT_PASS
    if ns.verb == "check":
        from .acceptance import run_acceptance
        verdicts = run_acceptance(cfg)
        for v in verdicts:
            print(v.line())
        return EXIT_PASS if all(v.passed is not False for v in verdicts) else EXIT_ACCEPTANCE
    upto = "count" if ns.verb == "all" else ns.verb
    report, _ = run_pipeline(cfg, upto, strict_upstream=ns.verb != "all")
    for name, st in report.stages.items():
        print(f"{name:9s} {st['seconds']:8.2f}s  {json.dumps(st['summary'], default=str)}")
    if report.error:
        print(f"error: {report.error}", file=sys.stderr)
    for v in report.verdicts:
        print(Verdict(**v).line())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
