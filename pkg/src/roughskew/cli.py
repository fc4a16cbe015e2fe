"""Declarative experiment runner for skew/covariance studies.

Reads an INI-style config describing a parameter grid, runs the
simulation cells, and writes machine-readable TSV outputs:

``--table``
    One file per correlation with per-(H, T) rows: zero-vanna implied
    vols, the return/volatility covariance, and both normalized ratios,
    each with a standard error.  Full-precision values go to the primary
    file; a companion ``*_display.tsv`` rounds to 4 decimals.
``--figures``
    Four ``figN.txt`` files with ``x<TAB>y1<TAB>y2<TAB>y3`` columns:
    smile-difference/covariance ratios against maturity (fig1 varies H,
    fig2 varies rho) and normalized Hurst recovery against the second
    maturity (fig3 varies H, fig4 varies rho).
``--selftest``
    A fast invariant suite (pricing round trips, covariance laws,
    backend agreement, determinism) with one PASS/FAIL line per check.

Every output file starts with a comment header carrying the config
hash, seed, and package version.  Reruns with the same config and seed
are byte-identical regardless of the thread count: each grid cell owns
a seed derived from its (rho, H) coordinates, and files are written
serially after all cells finish.

Exit codes: 0 success, 1 config/usage error, 2 numerical failure
(including cells recorded as NaN in an otherwise complete run),
3 selftest failure.
"""

import argparse
import configparser
import hashlib
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .analytics import hurst_estimate, skew_report
from .blackscholes import BsPoint, bs_price, implied_vol
from .errors import ConfigError, DegenerateModel, RoughSkewError
from .rbergomi import (
    RBergomiParams,
    TimeGrid,
    build_joint_covariance,
    fbm_cov,
    iter_path_batches,
    sample_paths_wdriven,
    wh_b_cov,
)

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "config_hash",
    "main",
    "run_figures",
    "run_selftest",
    "run_table",
]

THREADS_ENV_VAR = "ROUGHSKEW_THREADS"

_BACKENDS = ("wdriven", "covariance")
_PRICINGS = ("conditional", "plain")

# benchmark defaults: the full experiment grid at desk scale
_DEFAULT_HURST = (0.1, 0.3, 0.5, 0.7, 0.9)
_DEFAULT_RHO = (-0.2, -0.4, -0.6, -0.8)
_DEFAULT_MATURITIES = (0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 3.0)

_TABLE_COLUMNS = (
    "H", "T",
    "iv_minus", "iv_minus_se", "iv_plus", "iv_plus_se",
    "cov", "cov_se",
    "ratio_skew", "ratio_skew_se", "ratio_cov", "ratio_cov_se",
    "reason",
)

_INI_SCHEMA = {
    "model": ("s0", "sigma0", "alpha"),
    "grid": ("hurst", "rho", "maturities"),
    "mc": ("n_paths", "seed", "backend", "pricing", "n_steps"),
    "run": ("dir", "threads"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated description of one experiment run.

    Grids are stored sorted and deduplicated (``hurst`` and
    ``maturities`` ascending, ``rho`` descending so the weakest
    correlation comes first).  ``n_steps=None`` means the per-maturity
    default of ``max(ceil(500 T), 100)`` steps; ``threads=None`` defers
    to the ``ROUGHSKEW_THREADS`` environment variable and then to 1.
    """

    s0: float = 100.0
    sigma0: float = 0.2
    alpha: float = 0.8
    hurst: tuple = _DEFAULT_HURST
    rho: tuple = _DEFAULT_RHO
    maturities: tuple = _DEFAULT_MATURITIES
    n_paths: int = 200_000
    seed: int = 2718
    backend: str = "wdriven"
    pricing: str = "conditional"
    n_steps: int | None = None
    out: Path = Path("out")
    threads: int | None = None

    def __post_init__(self):
        def put(name, value):
            object.__setattr__(self, name, value)

        def grid(name, admissible, description, reverse=False):
            vals = getattr(self, name)
            try:
                vals = tuple(sorted({float(v) for v in vals}, reverse=reverse))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name} must be a list of numbers", field=name) from exc
            if not vals:
                raise ConfigError(f"{name} grid is empty", field=name)
            for v in vals:
                if not admissible(v):
                    raise ConfigError(
                        f"{name} value {v:g} outside {description}", field=name
                    )
            put(name, vals)

        for name, ok, description in (
            ("s0", lambda v: v > 0, "positive"),
            ("sigma0", lambda v: v > 0, "positive"),
            ("alpha", lambda v: v >= 0, "non-negative"),
        ):
            try:
                v = float(getattr(self, name))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name} must be a number", field=name) from exc
            if not (math.isfinite(v) and ok(v)):
                raise ConfigError(f"{name} must be finite and {description}", field=name)
            put(name, v)
        grid("hurst", lambda v: 0.0 < v < 1.0, "(0, 1)")
        grid("rho", lambda v: -1.0 <= v <= 1.0, "[-1, 1]", reverse=True)
        grid("maturities", lambda v: 0.0 < v < math.inf, "(0, inf)")
        if not isinstance(self.n_paths, int) or self.n_paths < 1000:
            raise ConfigError("n_paths must be an integer >= 1000", field="n_paths")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer", field="seed")
        if self.backend not in _BACKENDS:
            raise ConfigError(
                f"backend must be one of {_BACKENDS}, got {self.backend!r}", field="backend"
            )
        if self.pricing not in _PRICINGS:
            raise ConfigError(
                f"pricing must be one of {_PRICINGS}, got {self.pricing!r}", field="pricing"
            )
        if self.n_steps is not None and (not isinstance(self.n_steps, int) or self.n_steps < 1):
            raise ConfigError("n_steps must be a positive integer", field="n_steps")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError("threads must be a positive integer", field="threads")
        put("out", Path(self.out))

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        """Load a config from a ``key = value`` file with sections.

        Unknown sections or keys are rejected so that typos do not
        silently fall back to defaults.
        """
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as handle:
                parser.read_file(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}", field="config") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}", field="config") from exc

        kwargs = {}

        def take(section, key, conv, dest=None):
            raw = parser.get(section, key, fallback=None)
            if raw is None:
                return
            try:
                kwargs[dest or key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r}", field=key
                ) from exc

        for section in parser.sections():
            if section not in _INI_SCHEMA:
                raise ConfigError(f"unknown config section [{section}]", field=section)
            for key in parser[section]:
                if key not in _INI_SCHEMA[section]:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{section}]",
                        field=f"{section}.{key}",
                    )

        floats = lambda raw: tuple(float(tok) for tok in raw.split())
        take("model", "s0", float)
        take("model", "sigma0", float)
        take("model", "alpha", float)
        take("grid", "hurst", floats)
        take("grid", "rho", floats)
        take("grid", "maturities", floats)
        take("mc", "n_paths", int)
        take("mc", "seed", int)
        take("mc", "backend", str.strip)
        take("mc", "pricing", str.strip)
        take("mc", "n_steps", int)
        take("run", "dir", Path, dest="out")
        take("run", "threads", int)
        return cls(**kwargs)

    def ensure_outdir(self) -> Path:
        """Create the output directory and verify it is writable."""
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {self.out}: {exc}",
                              field="out") from exc
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out} is not writable", field="out")
        return self.out


def config_hash(cfg: ExperimentConfig) -> str:
    """12-hex-digit digest of the science-relevant config fields.

    Execution details (thread count, output directory) are excluded so
    that reruns of the same experiment carry the same hash.
    """
    payload = repr((
        cfg.s0, cfg.sigma0, cfg.alpha, cfg.hurst, cfg.rho, cfg.maturities,
        cfg.n_paths, cfg.seed, cfg.backend, cfg.pricing, cfg.n_steps,
    ))
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _cell_seed(base, *key):
    """A uint64 seed derived deterministically from grid coordinates."""
    ss = np.random.SeedSequence(entropy=base, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


def _header(cfg, extra=""):
    line = f"# roughskew {__version__}\tconfig={config_hash(cfg)}\tseed={cfg.seed}\n"
    if extra:
        line += f"# {extra}\n"
    return line


def _fmt_full(value):
    return repr(float(value))


def _fmt_disp(value):
    return "nan" if value != value else f"{value:.4f}"


def _reason(exc):
    text = f"{type(exc).__name__}: {exc}"
    return " ".join(text.split())


@dataclass(frozen=True)
class RunResult:
    """Paths written by a runner plus a cell-level failure count."""

    files: tuple
    n_cells: int
    n_failed: int


def _run_cells(jobs, compute, threads):
    """Evaluate ``compute`` over ``jobs`` on a thread pool.

    Returns results keyed by job, in a deterministic order regardless
    of the degree of parallelism: cells are independent and carry their
    own seeds, so only the evaluation schedule varies.
    """
    with ThreadPoolExecutor(max_workers=max(1, threads or 1)) as pool:
        return dict(zip(jobs, pool.map(compute, jobs)))


def _table_cell(cfg, rho, h, t, seed):
    params = RBergomiParams(s0=cfg.s0, sigma0=cfg.sigma0, alpha=cfg.alpha,
                            hurst=h, rho=rho)
    grid = TimeGrid(t, cfg.n_steps) if cfg.n_steps is not None else None
    report = skew_report(params, t, n_paths=cfg.n_paths, seed=seed,
                         pricing=cfg.pricing, backend=cfg.backend, grid=grid)
    return (
        report.iv_minus, report.iv_minus_stderr,
        report.iv_plus, report.iv_plus_stderr,
        report.covariance.value, report.covariance.stderr,
        report.ratio_skew, report.ratio_skew_stderr,
        report.ratio_cov, report.ratio_cov_stderr,
    )


def run_table(cfg: ExperimentConfig) -> RunResult:
    """Write one TSV per correlation over the (H, T) grid.

    Cells that fail numerically are recorded as NaN with the exception
    in the ``reason`` column; the run continues.  All maturities of one
    (rho, H) pair share a seed, which makes rows of one smile family
    directly comparable (common random numbers).
    """
    outdir = cfg.ensure_outdir()

    def compute(job):
        i_r, i_h, t = job
        rho, h = cfg.rho[i_r], cfg.hurst[i_h]
        seed = _cell_seed(cfg.seed, 0, i_r, i_h)
        try:
            return _table_cell(cfg, rho, h, t, seed)
        except RoughSkewError as exc:
            return _reason(exc)

    jobs = [(i_r, i_h, t)
            for i_r in range(len(cfg.rho))
            for i_h in range(len(cfg.hurst))
            for t in cfg.maturities]
    results = _run_cells(jobs, compute, cfg.threads)

    files = []
    n_failed = 0
    for i_r, rho in enumerate(cfg.rho):
        meta = (f"rho={rho:g}\tbackend={cfg.backend}\tpricing={cfg.pricing}"
                f"\tn_paths={cfg.n_paths}"
                f"\tn_steps={'auto' if cfg.n_steps is None else cfg.n_steps}")
        primary = [_header(cfg, meta), "\t".join(_TABLE_COLUMNS) + "\n"]
        display = list(primary)
        for i_h, h in enumerate(cfg.hurst):
            for t in cfg.maturities:
                res = results[(i_r, i_h, t)]
                if isinstance(res, str):
                    values, reason = (math.nan,) * 10, res
                    n_failed += 1
                else:
                    values, reason = res, ""
                row = (h, t) + values
                primary.append("\t".join(_fmt_full(v) for v in row) + f"\t{reason}\n")
                display.append("\t".join(_fmt_disp(v) for v in row) + f"\t{reason}\n")
        path = outdir / f"table_rho_{rho:g}.tsv"
        path.write_text("".join(primary))
        (outdir / f"table_rho_{rho:g}_display.tsv").write_text("".join(display))
        files.append(path)
    return RunResult(files=tuple(files), n_cells=len(jobs), n_failed=n_failed)


def _figure_boost(t):
    """Path multiplier for short maturities, where both the covariance
    and the smile difference shrink like a power of T while the noise
    floor does not."""
    if t <= 0.01:
        return 8
    if t <= 0.05:
        return 4
    if t <= 0.25:
        return 2
    return 1


def _figure_series(cfg):
    """The (fixed-parameter, varied-parameter) sets for the figures."""
    if len(cfg.hurst) < 3:
        raise ConfigError("figures need at least three hurst values", field="hurst")
    if len(cfg.rho) < 3:
        raise ConfigError("figures need at least three rho values", field="rho")
    hs = cfg.hurst[:3]                      # smallest three H
    rhos = tuple(sorted(cfg.rho))[:3]       # strongest three correlations
    rho_fix = -0.8 if -0.8 in cfg.rho else min(cfg.rho)
    h_fix = 0.3 if 0.3 in cfg.hurst else cfg.hurst[len(cfg.hurst) // 2]
    return hs, rhos, rho_fix, h_fix


def _write_figure(outdir, cfg, name, legend, xs, columns):
    lines = [_header(cfg, legend), "x\ty1\ty2\ty3\n"]
    for i, x in enumerate(xs):
        ys = "\t".join(_fmt_full(col[i]) for col in columns)
        lines.append(f"{_fmt_full(x)}\t{ys}\n")
    path = outdir / name
    path.write_text("".join(lines))
    return path


def run_figures(cfg: ExperimentConfig) -> RunResult:
    """Write fig1..fig4 data files.

    fig1/fig2 plot the ratio of the zero-vanna smile difference to the
    simulated covariance against maturity; fig3/fig4 plot the recovered
    roughness index (normalized by its true value) against the second
    maturity, with the first maturity fixed at the shortest one in the
    grid.  Short maturities get proportionally more paths.
    """
    if cfg.alpha == 0.0:
        raise DegenerateModel(
            "alpha=0 makes both the smile difference and the covariance vanish; "
            "their ratio and the roughness estimate are undefined"
        )
    if len(cfg.maturities) < 2:
        raise ConfigError("figures need at least two maturities", field="maturities")
    outdir = cfg.ensure_outdir()
    hs, rhos, rho_fix, h_fix = _figure_series(cfg)
    t1 = cfg.maturities[0]
    t2s = cfg.maturities[1:]

    def params(h, rho):
        return RBergomiParams(s0=cfg.s0, sigma0=cfg.sigma0, alpha=cfg.alpha,
                              hurst=h, rho=rho)

    def report(h, rho, t, seed):
        grid = TimeGrid(t, cfg.n_steps) if cfg.n_steps is not None else None
        return skew_report(params(h, rho), t,
                           n_paths=cfg.n_paths * _figure_boost(t), seed=seed,
                           pricing=cfg.pricing, backend=cfg.backend, grid=grid)

    # fig1/fig2 cells: ratio of the two skew measures at each maturity
    ratio_jobs = []
    for fig, series in ((1, [(h, rho_fix) for h in hs]),
                        (2, [(h_fix, rho) for rho in rhos])):
        for i_s, (h, rho) in enumerate(series):
            for t in cfg.maturities:
                ratio_jobs.append((fig, i_s, h, rho, t))

    def ratio_cell(job):
        fig, i_s, h, rho, t = job
        try:
            rep = report(h, rho, t, _cell_seed(cfg.seed, fig, i_s))
            return rep.skew_diff.value / rep.covariance.value
        except (RoughSkewError, ZeroDivisionError) as exc:
            return _reason(exc)

    # fig3/fig4 cells: Hurst recovery from the (t1, t2) maturity pair;
    # one seed per series keeps the two smiles on common random numbers
    hurst_jobs = []
    for fig, series in ((3, [(h, rho_fix) for h in hs]),
                        (4, [(h_fix, rho) for rho in rhos])):
        for i_s, (h, rho) in enumerate(series):
            for t2 in t2s:
                hurst_jobs.append((fig, i_s, h, rho, t2))

    t1_reports = {}

    def t1_report(fig, i_s, h, rho):
        key = (fig, i_s)
        if key not in t1_reports:
            t1_reports[key] = report(h, rho, t1, _cell_seed(cfg.seed, fig, i_s))
        return t1_reports[key]

    # the t1 smiles are shared within a series: compute them up front so
    # the threaded phase stays write-free
    for fig, i_s, h, rho, _ in hurst_jobs:
        try:
            t1_report(fig, i_s, h, rho)
        except RoughSkewError as exc:
            t1_reports[(fig, i_s)] = exc

    def hurst_cell(job):
        fig, i_s, h, rho, t2 = job
        base = t1_reports[(fig, i_s)]
        if isinstance(base, Exception):
            return _reason(base)
        try:
            rep2 = report(h, rho, t2, _cell_seed(cfg.seed, fig, i_s))
            return hurst_estimate(base, rep2).value / h
        except RoughSkewError as exc:
            return _reason(exc)

    results = _run_cells(ratio_jobs, ratio_cell, cfg.threads)
    results.update(_run_cells(hurst_jobs, hurst_cell, cfg.threads))

    n_failed = sum(isinstance(v, str) for v in results.values())

    def column(fig, i_s, h, rho, ts):
        out = []
        for t in ts:
            v = results[(fig, i_s, h, rho, t)]
            out.append(math.nan if isinstance(v, str) else v)
        return out

    files = []
    legends = {
        1: ("fig1.txt", [(h, rho_fix) for h in hs], cfg.maturities,
            "smile-diff/cov ratio vs T; " + " ".join(
                f"y{i + 1}: H={h:g}" for i, h in enumerate(hs)) + f"; rho={rho_fix:g}"),
        2: ("fig2.txt", [(h_fix, rho) for rho in rhos], cfg.maturities,
            "smile-diff/cov ratio vs T; " + " ".join(
                f"y{i + 1}: rho={r:g}" for i, r in enumerate(rhos)) + f"; H={h_fix:g}"),
        3: ("fig3.txt", [(h, rho_fix) for h in hs], t2s,
            f"normalized Hurst recovery vs T2 (T1={t1:g}); " + " ".join(
                f"y{i + 1}: H={h:g}" for i, h in enumerate(hs)) + f"; rho={rho_fix:g}"),
        4: ("fig4.txt", [(h_fix, rho) for rho in rhos], t2s,
            f"normalized Hurst recovery vs T2 (T1={t1:g}); " + " ".join(
                f"y{i + 1}: rho={r:g}" for i, r in enumerate(rhos)) + f"; H={h_fix:g}"),
    }
    for fig in (1, 2, 3, 4):
        name, series, xs, legend = legends[fig]
        cols = [column(fig, i_s, h, rho, xs) for i_s, (h, rho) in enumerate(series)]
        files.append(_write_figure(outdir, cfg, name, legend, xs, cols))
    n_cells = len(ratio_jobs) + len(hurst_jobs)
    return RunResult(files=tuple(files), n_cells=n_cells, n_failed=n_failed)


def _selftest_checks(cfg):
    rng_seed = _cell_seed(cfg.seed, 9)

    def bs_round_trip():
        rng = np.random.default_rng(rng_seed)
        n = 10_000
        sigma = rng.uniform(0.01, 2.0, n)
        tau = rng.uniform(1e-4, 5.0, n)
        k = rng.uniform(-3.0, 3.0, n) * sigma * np.sqrt(tau)
        prices = bs_price(BsPoint(x=0.0, k=k, tau=tau, sigma=sigma))
        err = np.abs(implied_vol(0.0, k, tau, prices) - sigma).max()
        return err < 1e-8, f"max vol error {err:.2e}"

    def fbm_diagonal():
        worst = max(
            abs(fbm_cov(t, t, h) - t ** (2 * h))
            for h in cfg.hurst for t in (0.01, 1.0, 3.0)
        )
        return worst < 1e-10, f"max |var - t^2H| = {worst:.2e}"

    def brownian_reductions():
        ts = np.linspace(0.1, 2.0, 5)
        worst = 0.0
        for t in ts:
            for s in ts:
                worst = max(worst, abs(fbm_cov(t, s, 0.5) - min(t, s)))
                worst = max(worst, abs(wh_b_cov(t, s, 0.5, -0.7) + 0.7 * min(t, s)))
        return worst < 1e-10, f"max deviation {worst:.2e}"

    def joint_psd():
        worst = math.inf
        grid = TimeGrid(1.0, 64)
        for h in cfg.hurst:
            for rho in cfg.rho:
                params = RBergomiParams(s0=cfg.s0, sigma0=cfg.sigma0,
                                        alpha=cfg.alpha, hurst=h, rho=rho)
                cov = build_joint_covariance(grid, params)
                eig = np.linalg.eigvalsh(cov.matrix)[0]
                worst = min(worst, eig / np.trace(cov.matrix))
        return worst >= -1e-10, f"min eigenvalue/trace {worst:.2e}"

    def backend_agreement():
        params = RBergomiParams(s0=cfg.s0, sigma0=cfg.sigma0, alpha=cfg.alpha,
                                hurst=min(cfg.hurst), rho=min(cfg.rho))
        grid = TimeGrid(0.1, 50)
        seed = _cell_seed(cfg.seed, 9, 1)
        a = sample_paths_wdriven(params, grid, 8192, seed=seed).s_terminal
        batches = list(iter_path_batches(params, grid, 8192, seed=seed + 1,
                                         backend="covariance"))
        b = np.concatenate([bt.s_terminal for bt in batches])
        p = stats.ks_2samp(a, b).pvalue
        return p > 0.01, f"KS p-value {p:.3f}"

    def determinism():
        params = RBergomiParams(s0=cfg.s0, sigma0=cfg.sigma0, alpha=cfg.alpha,
                                hurst=cfg.hurst[0], rho=cfg.rho[0])
        grid = TimeGrid(0.1, 50)
        seed = _cell_seed(cfg.seed, 9, 2)
        a = sample_paths_wdriven(params, grid, 2048, seed=seed)
        b = sample_paths_wdriven(params, grid, 2048, seed=seed)
        same = a.s_terminal.tobytes() == b.s_terminal.tobytes()
        return same, "terminal spots byte-identical" if same else "mismatch"

    return (
        ("bs-round-trip", bs_round_trip),
        ("fbm-diagonal", fbm_diagonal),
        ("brownian-reductions", brownian_reductions),
        ("joint-psd", joint_psd),
        ("backend-agreement", backend_agreement),
        ("determinism", determinism),
    )


def run_selftest(cfg: ExperimentConfig):
    """Run the fast invariant suite.

    Returns ``(report_text, ok)``.  The report is deterministic for a
    given config and seed (no timestamps), so reruns are byte-identical.
    """
    lines = [f"roughskew {__version__} selftest  config={config_hash(cfg)} seed={cfg.seed}"]
    n_pass = 0
    checks = _selftest_checks(cfg)
    for name, check in checks:
        passed, detail = check()
        n_pass += passed
        lines.append(f"{name:<22s} {'PASS' if passed else 'FAIL'}  {detail}")
    ok = n_pass == len(checks)
    lines.append(f"{'PASS' if ok else 'FAIL'}: {n_pass}/{len(checks)} checks passed")
    return "\n".join(lines) + "\n", ok


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message, field="usage")


def _build_parser():
    parser = _Parser(
        prog="roughskew",
        description="Rough-volatility skew/covariance experiment runner.",
    )
    parser.add_argument("--table", action="store_true",
                        help="write per-correlation skew/covariance tables")
    parser.add_argument("--figures", action="store_true",
                        help="write fig1..fig4 data files")
    parser.add_argument("--selftest", action="store_true",
                        help="run the fast invariant suite")
    parser.add_argument("--config", metavar="PATH",
                        help="INI config file (defaults used when omitted)")
    parser.add_argument("--seed", type=int, metavar="U64", help="override the base seed")
    parser.add_argument("--paths", type=int, metavar="N", help="override n_paths")
    parser.add_argument("--threads", type=int, metavar="N",
                        help=f"worker threads (default: ${THREADS_ENV_VAR} or 1)")
    parser.add_argument("--out", metavar="DIR", help="override the output directory")
    return parser


def _resolve_config(args):
    cfg = ExperimentConfig.from_ini(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.paths is not None:
        overrides["n_paths"] = args.paths
    if args.out is not None:
        overrides["out"] = Path(args.out)
    if args.threads is not None:
        overrides["threads"] = args.threads
    elif cfg.threads is None:
        env = os.environ.get(THREADS_ENV_VAR)
        if env is not None:
            try:
                overrides["threads"] = int(env)
            except ValueError as exc:
                raise ConfigError(
                    f"{THREADS_ENV_VAR} must be an integer, got {env!r}", field="threads"
                ) from exc
    return replace(cfg, **overrides) if overrides else cfg


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not (args.table or args.figures or args.selftest):
            raise ConfigError("nothing to do: pass --table, --figures or --selftest",
                              field="usage")
        cfg = _resolve_config(args)

        if args.selftest:
            text, ok = run_selftest(cfg)
            sys.stdout.write(text)
            cfg.ensure_outdir()
            (cfg.out / "selftest.txt").write_text(text)
            if not ok:
                return 3

        n_failed = 0
        for wanted, runner in ((args.table, run_table), (args.figures, run_figures)):
            if not wanted:
                continue
            result = runner(cfg)
            n_failed += result.n_failed
            for path in result.files:
                print(f"wrote {path}")
            if result.n_failed:
                print(f"{result.n_failed}/{result.n_cells} cells failed "
                      f"(recorded as NaN with a reason)", file=sys.stderr)
        return 2 if n_failed else 0
    except ConfigError as exc:
        field = f" (field: {exc.field})" if exc.field else ""
        print(f"config error: {exc}{field}", file=sys.stderr)
        return 1
    except RoughSkewError as exc:
        print(f"numerical failure: {_reason(exc)}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
