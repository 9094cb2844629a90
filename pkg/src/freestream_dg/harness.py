"""Experiment drivers: configuration, free-stream runs, sweeps and checks.

Configuration is a flat ``key = value`` text format (``#`` starts a
comment).  The same keys are accepted as command-line overrides.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .geometry import DeformSpec
from .mesh import build_mesh, validate_topology
from .metrics import (
    CROSS_PRODUCT,
    CURL_FORM,
    OVERINTEGRATED,
    STRATEGIES,
    assemble_metrics,
    element_metrics,
    metric_divergence,
    residual_scale,
)
from .solver import (
    Discretization,
    SolverConfig,
    euler_physical_flux,
    flux_difference_volume,
    primitive_to_conservative,
    rk_advance,
)
from .spectral import NODE_KINDS, build_node_set, product_interpolation_mismatch

logger = logging.getLogger(__name__)

PRESERVED_TOL = 1e-11
WATERTIGHT_TOL = 1e-12
CONDV_TOL = 1e-12
CONDF_TOL = 1e-12
APPENDIX_TOL = 1e-13
FLUXDIFF_TOL = 1e-12

SWEEP_HEADER = ("mesh", "node_kind", "strategy", "N", "Ng", "M", "max_density_err",
                "condV", "condF", "steps", "seconds")
CHECK_HEADER = ("kind", "id", "strategy", "residual")


class ConfigError(ValueError):
    """Unknown key or invalid value; the message names the line or flag."""


class InvariantError(ValueError):
    def __init__(self, key, msg):
        super().__init__(msg)
        self.key = key


def _parse_ints(text):
    """'4', '4,6', '4..7' or '' -> tuple of ints."""
    text = text.strip()
    if text.lower() in ("", "none"):
        return ()
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _parse_words(text):
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


@dataclass(frozen=True)
class RunConfig:
    command: str = "run-freestream"
    # mesh
    K: int = 2
    refine: tuple[int, ...] = (0,)
    a: float = 0.05
    phase: float = 0.125
    extruded: bool = False
    Ng: int = 4
    # solver
    N: int = 4
    node_kind: str = "gauss"
    CFL: float = 0.5
    T: float = 0.5
    M: int | None = None
    strategy: str = CURL_FORM
    # freestream primitives
    rho: float = 0.7
    v1: float = 0.2
    v2: float = 0.3
    v3: float = -0.4
    p: float = 1.0
    # sweep ranges
    N_range: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    Ng_range: tuple[int, ...] = (1, 2, 3, 4)
    strategies: tuple[str, ...] = (CURL_FORM,)
    node_kinds: tuple[str, ...] = ("gauss",)
    jobs: int = 1
    output: str | None = None
    seed: int = 0

    def validate(self):
        """Raise InvariantError naming the first offending key."""
        checks = (
            ("N", self.N >= 1, "N must be >= 1"),
            ("Ng", self.Ng >= 1, "Ng must be >= 1"),
            ("K", self.K >= 2, "K must be >= 2"),
            ("strategy", self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}"),
            ("node_kind", self.node_kind in NODE_KINDS, f"node_kind must be one of {NODE_KINDS}"),
            ("CFL", 0.0 < self.CFL <= 1.0, "CFL must lie in (0, 1]"),
            ("T", self.T >= 0, "T must be >= 0"),
            ("M", self.strategy != OVERINTEGRATED or (self.M is not None and self.M > self.N),
             "overintegrated strategy needs M > N"),
            ("rho", self.rho > 0, "freestream needs rho > 0"),
            ("p", self.p > 0, "freestream needs p > 0"),
            ("N_range", all(n >= 1 for n in self.N_range), "N_range entries must be >= 1"),
            ("Ng_range", all(g >= 1 for g in self.Ng_range), "Ng_range entries must be >= 1"),
            ("strategies", all(x in STRATEGIES for x in self.strategies),
             f"strategies must be drawn from {STRATEGIES}"),
            ("node_kinds", all(x in NODE_KINDS for x in self.node_kinds),
             f"node_kinds must be drawn from {NODE_KINDS}"),
            ("jobs", self.jobs >= 1, "jobs must be >= 1"),
        )
        for key, ok, msg in checks:
            if not ok:
                raise InvariantError(key, msg)
        return self

    @property
    def freestream(self):
        return primitive_to_conservative(self.rho, (self.v1, self.v2, self.v3), self.p)

    @property
    def deform(self):
        return DeformSpec(amplitude=self.a, extruded=self.extruded, phase=self.phase)

    def solver_config(self):
        return SolverConfig(N=self.N, node_kind=self.node_kind, CFL=self.CFL, T=self.T,
                            strategy=self.strategy, M=self.M)


_CONVERTERS = {
    "command": str, "K": int, "refine": _parse_ints, "a": float, "phase": float,
    "extruded": _parse_bool, "Ng": int, "N": int, "node_kind": str, "CFL": float,
    "T": float, "M": _parse_opt_int, "strategy": str, "rho": float, "v1": float,
    "v2": float, "v3": float, "p": float, "N_range": _parse_ints, "Ng_range": _parse_ints,
    "strategies": _parse_words, "node_kinds": _parse_words, "jobs": int,
    "output": lambda s: s or None, "seed": int,
}
assert set(_CONVERTERS) == {f.name for f in fields(RunConfig)}


def _apply(values, key, raw, where):
    if key not in _CONVERTERS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        values[key] = _CONVERTERS[key](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config(text=None, overrides=(), base=None):
    """Build a validated RunConfig from config-file text and overrides.

    ``overrides`` is a sequence of (key, raw value, where) triples, where
    ``where`` names the flag for error messages.  Invariant violations are
    attributed to the last place the offending key was set.
    """
    values = {}
    origin = {}
    if text:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            _apply(values, key, raw, f"line {lineno}")
            origin[key] = f"line {lineno}"
    for key, raw, where in overrides:
        _apply(values, key, raw, where)
        origin[key] = where
    cfg = replace(base or RunConfig(), **values)
    try:
        return cfg.validate()
    except InvariantError as exc:
        # fall back to the last setting, e.g. strategy=overintegrated without M
        where = origin.get(exc.key) or next(reversed(list(origin.values())), "defaults")
        raise ConfigError(f"{where}: {exc}") from None


# --------------------------------------------------------------------------
# free-stream runs


@dataclass
class FreestreamReport:
    N: int
    Ng: int
    M: int | None
    strategy: str
    node_kind: str
    mesh_kind: str
    max_density_error: float
    condV_max: float
    condF_max: float
    steps: int
    wall_time: float
    error_trace: np.ndarray = field(default=None, repr=False)
    note: str = ""

    @property
    def preserved(self):
        return self.max_density_error <= PRESERVED_TOL

    def csv_row(self):
        return (self.mesh_kind, self.node_kind, self.strategy, str(self.N), str(self.Ng),
                "" if self.M is None else str(self.M), _fmt(self.max_density_error),
                _fmt(self.condV_max), _fmt(self.condF_max), str(self.steps),
                f"{self.wall_time:.3f}")


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def build_run_mesh(cfg):
    return build_mesh(cfg.K, cfg.refine, deform=cfg.deform, Ng=cfg.Ng)


def run_freestream(cfg):
    """Advance the exact free stream to T and report the density deviation."""
    t0 = time.perf_counter()
    mesh = build_run_mesh(cfg)
    scfg = cfg.solver_config()
    disc = Discretization(mesh, scfg)
    U0 = disc.initial_state(cfg.freestream)
    res = rk_advance(mesh, U0, scfg, disc=disc, reference=cfg.rho)
    return FreestreamReport(
        N=cfg.N, Ng=cfg.Ng, M=scfg.M if cfg.strategy == OVERINTEGRATED else None,
        strategy=cfg.strategy, node_kind=cfg.node_kind, mesh_kind=mesh.kind,
        max_density_error=res.max_density_error,
        condV_max=disc.metrics.condV_max, condF_max=disc.metrics.condF_max,
        steps=res.steps, wall_time=time.perf_counter() - t0, error_trace=res.error_trace)


def _sweep_one(cfg):
    try:
        return run_freestream(cfg)
    except Exception as exc:  # recorded as a nan row, sweep continues
        logger.warning("run N=%d Ng=%d %s %s failed: %s", cfg.N, cfg.Ng, cfg.strategy,
                       cfg.node_kind, exc)
        nan = float("nan")
        kind = "conforming" if not cfg.refine else ("extruded" if cfg.extruded else "3d")
        return FreestreamReport(cfg.N, cfg.Ng, cfg.M, cfg.strategy, cfg.node_kind, kind,
                                nan, nan, nan, 0, 0.0, note=f"{type(exc).__name__}: {exc}")


def sweep_configs(cfg):
    out = []
    for st, kind, Ng, N in itertools.product(cfg.strategies, cfg.node_kinds,
                                             cfg.Ng_range, cfg.N_range):
        M = None
        if st == OVERINTEGRATED:
            M = cfg.M if cfg.M is not None and cfg.M > N else 2 * N
        out.append(replace(cfg, strategy=st, node_kind=kind, Ng=Ng, N=N, M=M))
    return out


def run_sweep(cfg, fh=None):
    """Run every (strategy, node kind, Ng, N) combination and write the CSV.

    Rows are sorted by (strategy, Ng, N, node kind) regardless of ``jobs``.
    Returns the list of reports in row order.
    """
    runs = sweep_configs(cfg)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            reports = list(pool.map(_sweep_one, runs))
    else:
        reports = [_sweep_one(r) for r in runs]
    reports.sort(key=lambda r: (r.strategy, r.Ng, r.N, r.node_kind))
    if fh is not None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in reports:
            w.writerow(r.csv_row())
    return reports


# --------------------------------------------------------------------------
# checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    relation: str = "<="
    informational: bool = False

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        tag = " [expected failure, informational]" if self.informational and not self.passed else ""
        return (f"{self.name} {status} (value={self.value:.3e}, required {self.relation} "
                f"{self.threshold:.0e}){tag}")


def _le(name, value, tol, **kw):
    return CheckResult(name, bool(value <= tol), float(value), tol, "<=", **kw)


def _gt(name, value, tol, **kw):
    return CheckResult(name, bool(value > tol), float(value), tol, ">", **kw)


def check_watertight(cfg, mesh=None):
    mesh = mesh or build_run_mesh(cfg)
    rep = validate_topology(mesh)
    return [_le("watertight", rep["watertight_gap"], WATERTIGHT_TOL)]


def metric_rows(cfg, mesh=None):
    """Per-element condV and per-face condF rows for the configured strategy."""
    mesh = mesh or build_run_mesh(cfg)
    deg = cfg.M if cfg.strategy == OVERINTEGRATED else cfg.N
    mm = assemble_metrics(mesh, build_node_set(cfg.node_kind, deg), cfg.strategy)
    rows = [("element", e, cfg.strategy, float(v)) for e, v in enumerate(mm.condV)]
    rows += [("conforming_face", i, cfg.strategy, float(v)) for i, v in enumerate(mm.condF_conforming)]
    rows += [("mortar_face", i, cfg.strategy, float(v)) for i, v in enumerate(mm.condF_mortar)]
    return mm, rows


def check_metrics(cfg, mesh=None, expect_fail=False):
    mm, rows = metric_rows(cfg, mesh)
    results = [_le(f"condV[{cfg.strategy}]", mm.condV_max, CONDV_TOL, informational=expect_fail),
               _le(f"condF[{cfg.strategy}]", mm.condF_max, CONDF_TOL, informational=expect_fail)]
    return results, rows


def appendix_demo(N, seed=0, trials=20):
    """Product-interpolation mismatch for low- and full-degree input pairs."""
    rng = np.random.default_rng(seed)
    ns = build_node_set("gauss", N)
    x = ns.nodes

    def poly(deg):
        c = rng.standard_normal(deg + 1)
        v = np.polynomial.legendre.legval(x, c)
        return v / np.max(np.abs(v))

    lo_deg = N // 2
    low = max(product_interpolation_mismatch(poly(lo_deg), poly(N - lo_deg), ns)["max_mismatch"]
              for _ in range(trials))
    high = min(product_interpolation_mismatch(poly(N), poly(N), ns)["max_mismatch"]
               for _ in range(trials))
    return [_gt(f"appendix mismatch for deg-{N} inputs (N={N})", high, 1e-6),
            _le(f"appendix mismatch for deg-{lo_deg}/deg-{N - lo_deg} inputs (N={N})", low, APPENDIX_TOL)]


def flux_difference_identity(cfg, mesh=None, count=5):
    """Split-form volume operator at the free stream vs sum_n C_n (metric divergence).

    Uses ``count`` curved elements chosen with the configured seed and
    cross-product metrics so the metric divergence is nonzero.
    """
    mesh = mesh or build_run_mesh(cfg)
    rng = np.random.default_rng(cfg.seed)
    ids = rng.choice(len(mesh.elements), size=min(count, len(mesh.elements)), replace=False)
    ns = build_node_set(cfg.node_kind, cfg.N)
    u = cfg.freestream
    worst = 0.0
    volume = element_metrics(mesh, ns, CROSS_PRODUCT)
    for e in ids:
        ms = volume[e]
        n = ns.n
        U = np.broadcast_to(u[:, None, None, None], (5, n, n, n)).copy()
        lhs = flux_difference_volume(U, ms)
        C = euler_physical_flux(u)  # (3, 5)
        rhs = np.einsum("cv,cxyz->vxyz", C, metric_divergence(ms))
        scale = residual_scale(ms) * float(np.max(np.abs(C)))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    return [_le("flux-differencing identity", worst, FLUXDIFF_TOL)]


def run_checks(cfg, which=("watertight", "metrics", "appendix", "fluxdiff"), expect_fail=False):
    """PASS/FAIL results for the requested checks on the configured mesh."""
    mesh = build_run_mesh(cfg)
    results = []
    if "watertight" in which:
        results += check_watertight(cfg, mesh)
    if "metrics" in which:
        results += check_metrics(cfg, mesh, expect_fail)[0]
    if "appendix" in which:
        results += appendix_demo(cfg.N, cfg.seed)
    if "fluxdiff" in which:
        results += flux_difference_identity(cfg, mesh)
    return results


def format_report(report):
    buf = io.StringIO()
    for key in ("mesh_kind", "node_kind", "strategy", "N", "Ng", "M", "max_density_error",
                "condV_max", "condF_max", "steps", "wall_time"):
        v = getattr(report, key)
        buf.write(f"{key}: {v:.6e}\n" if isinstance(v, float) else f"{key}: {v}\n")
    status = "PASS" if report.preserved else "FAIL"
    buf.write(f"freestream preserved {status} (max_density_error={report.max_density_error:.3e} "
              f"<= {PRESERVED_TOL:.0e})\n")
    return buf.getvalue()

