"""Replication engine: runs seeded experiments, aggregates, persists reports.

Each replication r draws its randomness exclusively from the stream
(master_seed, r), so results are bitwise independent of worker count and
scheduling; rows are always merged in stream order.  Rows persist at
full precision (shortest round-trip float repr), and aggregates are a
pure function of the rows, re-checked on load.

Flag-and-exclude policy: replications with a degenerate normalizer or
non-finite statistics are flagged and excluded from aggregates, with the
count reported; more than 1 percent flagged rows fails the experiment.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import ArgumentError, ConfigError, DegenerateNormalizerError, ExperimentError
from .kernels import builtin_kernel
from .processes import (
    build_miller_sen_process,
    build_scalar_normalized_process,
    build_self_normalized_process,
    partial_sum_path,
    sup_distance,
)
from .sampling import (
    STREAM_CENTERING,
    STREAM_HAJEK_CACHE,
    Seed,
    estimate_bn,
    make_distribution,
    norm_cdf,
    sup_abs_wiener_cdf,
)
from .truncation import j_diagnostics, truncate_kernel
from .ustat import prefix_u_fast

EXPERIMENT_KINDS = ("clt", "fclt", "thm3", "miller-sen", "decompose")

THEOREM_A_VIOLATION = "Theorem A conditions violated"

MAX_FLAGGED_FRACTION = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    """Plain-data description of one experiment (hashable, picklable)."""

    kind: str
    kernel: str
    m: int
    dist: str
    dist_params: tuple = ()
    ns: tuple = (1000,)
    t0s: tuple = (1.0,)
    reps: int = 100
    master_seed: int = 0
    normalizer: str = "self"
    trunc_level: Optional[float] = None
    workers: int = 1
    hajek_draws: int = 4000
    centering_draws: int = 10 ** 6

    def identity(self) -> dict:
        """The fields that define the experiment (not how it is executed)."""
        return {
            "kind": self.kind,
            "kernel": self.kernel,
            "m": self.m,
            "dist": self.dist,
            "dist_params": {k: v for k, v in self.dist_params},
            "ns": list(self.ns),
            "t0s": list(self.t0s),
            "reps": self.reps,
            "master_seed": self.master_seed,
            "normalizer": self.normalizer,
            "trunc_level": self.trunc_level,
            "hajek_draws": self.hajek_draws,
            "centering_draws": self.centering_draws,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}")
    if cfg.reps < 1:
        raise ConfigError("reps must be >= 1")
    if not cfg.ns:
        raise ConfigError("need at least one sample size")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.normalizer not in ("self", "scalar"):
        raise ConfigError("normalizer must be 'self' or 'scalar'")
    if not isinstance(cfg.master_seed, int) or cfg.master_seed < 0:
        raise ConfigError("master_seed must be a non-negative integer")
    try:
        kernel, dist = resolve_pair(cfg)
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    if any(n < kernel.order for n in cfg.ns):
        raise ConfigError(f"every n must be >= kernel order {kernel.order}")
    if any(not 0.0 < t <= 1.0 for t in cfg.t0s):
        raise ConfigError("every t0 must lie in (0, 1]")
    if cfg.kind in ("clt", "fclt", "thm3", "miller-sen"):
        if kernel.hajek is None:
            raise ConfigError(
                f"kernel {cfg.kernel!r} on {cfg.dist!r} has no analytic projection; "
                "self-normalization needs projection values")
        if not math.isfinite(kernel.theta):
            raise ConfigError(
                f"kernel {cfg.kernel!r} on {cfg.dist!r} has no finite theta")
    if cfg.kind == "miller-sen":
        vh = kernel.var_hajek
        if vh is None or not math.isfinite(vh) or vh <= 0.0:
            raise ConfigError(
                f"{THEOREM_A_VIOLATION}: projection variance is not positive "
                f"and finite for {cfg.kernel!r} on {cfg.dist!r} (condition I)")
        if kernel.second_moment_finite is not True:
            raise ConfigError(
                f"{THEOREM_A_VIOLATION}: kernel second moment is not finite "
                f"for {cfg.kernel!r} on {cfg.dist!r} (condition II)")
    if cfg.trunc_level is not None and not cfg.trunc_level > 0:
        raise ConfigError("truncation level override must be positive")


@functools.lru_cache(maxsize=32)
def _resolve_cached(kernel_name: str, m: int, dist_kind: str, dist_params: tuple):
    dist = make_distribution(dist_kind, **dict(dist_params))
    kernel = builtin_kernel(kernel_name, dist, m=m if kernel_name == "product" else None)
    return kernel, dist


def resolve_pair(cfg: ExperimentConfig):
    return _resolve_cached(cfg.kernel, cfg.m, cfg.dist, tuple(cfg.dist_params))


@functools.lru_cache(maxsize=64)
def _scalar_norm_cached(kernel_name: str, m: int, dist_kind: str,
                        dist_params: tuple, n: int) -> float:
    kernel, _ = _resolve_cached(kernel_name, m, dist_kind, dist_params)
    vh = kernel.var_hajek
    if vh is not None and math.isfinite(vh) and vh > 0.0:
        return math.sqrt(n * vh)
    if kernel.hajek_tv is not None:
        return estimate_bn(kernel.hajek_tv, n)
    return math.nan


def scalar_norm(cfg: ExperimentConfig, n: int) -> float:
    """Deterministic norming constant for sample size n (nan if unknown)."""
    return _scalar_norm_cached(cfg.kernel, cfg.m, cfg.dist,
                               tuple(cfg.dist_params), n)


@functools.lru_cache(maxsize=64)
def _trunc_pair_cached(kernel_name: str, m: int, dist_kind: str,
                       dist_params: tuple, n: int, level: Optional[float],
                       master_seed: int, centering_draws: int):
    kernel, dist = _resolve_cached(kernel_name, m, dist_kind, dist_params)
    return truncate_kernel(
        kernel, n, dist=dist, level=level, draws=centering_draws,
        seed=Seed(master_seed, STREAM_CENTERING + n))


# ---------------------------------------------------------------------------
# Row schemas
# ---------------------------------------------------------------------------


def columns_for(cfg: ExperimentConfig) -> list[str]:
    if cfg.kind == "decompose":
        return ["stream", "n", "j1", "j2", "j3", "j_sum",
                "psi_second_moment", "eq4"]
    cols = ["stream", "n", "flagged", "vn2", "terminal"]
    cols += [f"stat_t0_{t0:g}" for t0 in cfg.t0s]
    cols += ["sup_abs", "thm3_err_vn", "thm3_err_bn", "vn2_over_bn2"]
    if cfg.kind == "miller-sen":
        cols += ["ms_terminal", "ms_sup_abs", "ms_gap"]
    return cols


def _replicate_row(cfg: ExperimentConfig, n: int, stream: int) -> tuple:
    kernel, dist = resolve_pair(cfg)
    seed = Seed(cfg.master_seed, stream)

    if cfg.kind == "decompose":
        pair = _trunc_pair_cached(cfg.kernel, cfg.m, cfg.dist,
                                  tuple(cfg.dist_params), n, cfg.trunc_level,
                                  cfg.master_seed, cfg.centering_draws)
        x = dist.sample(n, seed.rng())
        diag = j_diagnostics(
            x, kernel, pair, dist=dist, hajek_draws=cfg.hajek_draws,
            seed=Seed(cfg.master_seed, STREAM_HAJEK_CACHE + stream))
        return (stream, n, diag.j1, diag.j2, diag.j3, diag.j_sum,
                diag.psi_second_moment, diag.eq4_statistic)

    x = dist.sample(n, seed.rng())
    hv = np.asarray(kernel.hajek(x), dtype=float)
    upath = prefix_u_fast(kernel, x)
    vn2 = float(np.sum(hv * hv))
    theta = kernel.theta
    bn = scalar_norm(cfg, n)

    nan = math.nan
    base = [stream, n, 0, vn2]
    stats_width = 1 + len(cfg.t0s) + 4 + (3 if cfg.kind == "miller-sen" else 0)
    try:
        if not (vn2 > 0.0 and math.isfinite(vn2)):
            raise DegenerateNormalizerError("V_n^2 not positive")
        self_path = build_self_normalized_process(upath, hv, theta)
        if cfg.normalizer == "scalar":
            if not math.isfinite(bn):
                raise ConfigError(
                    "scalar normalizer requested but no norming constant is known")
            primary = build_scalar_normalized_process(upath, bn, theta)
        else:
            primary = self_path
        vn = math.sqrt(vn2)
        err_vn = sup_distance(self_path, partial_sum_path(hv, vn, "self"))
        if math.isfinite(bn):
            scalar_path = build_scalar_normalized_process(upath, bn, theta)
            err_bn = sup_distance(scalar_path, partial_sum_path(hv, bn))
            ratio = vn2 / (bn * bn)
        else:
            err_bn, ratio = nan, nan
        must_be_finite = [primary.values[n]]
        must_be_finite += [primary.statistic_at(t0) for t0 in cfg.t0s]
        must_be_finite += [primary.sup_abs(), err_vn]
        ms_cols = []
        if cfg.kind == "miller-sen":
            ms = build_miller_sen_process(upath, kernel.var_hajek, theta)
            ms_cols = [ms.values[n], ms.sup_abs(), sup_distance(ms, self_path)]
        if not all(math.isfinite(v) for v in must_be_finite + ms_cols):
            # non-finite statistic: flag the whole row
            raise DegenerateNormalizerError("non-finite statistic")
        # err_bn and the ratio are legitimately nan when no norming constant exists
        row = base + must_be_finite + [err_bn, ratio] + ms_cols
        return tuple(row)
    except DegenerateNormalizerError:
        return tuple([stream, n, 1, vn2] + [nan] * stats_width)


def _worker_row(args) -> tuple:
    cfg, n, stream = args
    return _replicate_row(cfg, n, stream)


def _all_rows(cfg: ExperimentConfig) -> list[tuple]:
    tasks = [(cfg, n, r) for n in cfg.ns for r in range(cfg.reps)]
    if cfg.workers <= 1:
        rows = [_worker_row(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (cfg.workers * 8))
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            rows = list(ex.map(_worker_row, tasks, chunksize=chunk))
    return rows


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov distance
# ---------------------------------------------------------------------------


class KsResult(NamedTuple):
    distance: float
    n_used: int
    n_excluded: int


def ks_distance(samples, cdf) -> KsResult:
    """One-sample sup distance between the empirical CDF and a reference.

    Non-finite samples are excluded and counted, never silently dropped.
    """
    arr = np.asarray(samples, dtype=float).ravel()
    finite = np.isfinite(arr)
    n_excl = int(arr.size - finite.sum())
    xs = np.sort(arr[finite])
    n = xs.size
    if n < 1:
        raise ArgumentError("need at least one finite sample")
    ref = np.asarray(cdf(xs), dtype=float)
    i = np.arange(1, n + 1)
    d_plus = float(np.max(i / n - ref))
    d_minus = float(np.max(ref - (i - 1) / n))
    return KsResult(max(d_plus, d_minus), n, n_excl)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _key(metric: str, n: int, t0: Optional[float] = None) -> str:
    if t0 is None:
        return f"{metric}_n_{n}"
    return f"{metric}_t0_{t0:g}_n_{n}"


def compute_aggregates(cfg: ExperimentConfig, columns: list[str],
                       rows: list[tuple]) -> dict:
    col = {name: i for i, name in enumerate(columns)}
    agg: dict = {}

    for n in cfg.ns:
        rs = [r for r in rows if r[col["n"]] == n]

        if cfg.kind == "decompose":
            for name in ("j1", "j2", "j3", "j_sum", "psi_second_moment", "eq4"):
                vals = np.asarray([r[col[name]] for r in rs])
                agg[_key(f"median_{name}", n)] = float(np.median(vals))
            continue

        ok = [r for r in rs if r[col["flagged"]] == 0]
        agg[_key("flagged", n)] = len(rs) - len(ok)
        agg[_key("rows", n)] = len(rs)
        if not ok:
            continue

        if cfg.kind == "clt":
            for t0 in cfg.t0s:
                stats = np.asarray([r[col[f"stat_t0_{t0:g}"]] for r in ok])
                res = ks_distance(stats, lambda x, _t=t0: norm_cdf(x / math.sqrt(_t)))
                agg[_key("ks", n, t0)] = res.distance
                agg[_key("var", n, t0)] = float(np.var(stats, ddof=1)) if len(stats) > 1 else math.nan
        elif cfg.kind == "fclt":
            sups = np.asarray([r[col["sup_abs"]] for r in ok])
            agg[_key("ks_sup_abs", n)] = ks_distance(sups, sup_abs_wiener_cdf).distance
        elif cfg.kind == "thm3":
            agg[_key("median_sup_err_vn", n)] = float(
                np.median([r[col["thm3_err_vn"]] for r in ok]))
            bn_errs = [r[col["thm3_err_bn"]] for r in ok]
            agg[_key("median_sup_err_bn", n)] = float(np.median(bn_errs)) \
                if all(math.isfinite(v) for v in bn_errs) else math.nan
        elif cfg.kind == "miller-sen":
            sups = np.asarray([r[col["ms_sup_abs"]] for r in ok])
            agg[_key("ks_ms_sup", n)] = ks_distance(sups, sup_abs_wiener_cdf).distance
            agg[_key("median_ms_gap", n)] = float(
                np.median([r[col["ms_gap"]] for r in ok]))

        ratios = [r[col["vn2_over_bn2"]] for r in ok]
        if all(math.isfinite(v) for v in ratios):
            agg[_key("median_abs_vn_ratio_dev", n)] = float(
                np.median(np.abs(np.asarray(ratios) - 1.0)))

    return agg


def _check_flag_budget(cfg: ExperimentConfig, columns: list[str],
                       rows: list[tuple]) -> None:
    if cfg.kind == "decompose":
        return
    col = {name: i for i, name in enumerate(columns)}
    for n in cfg.ns:
        rs = [r for r in rows if r[col["n"]] == n]
        flagged = sum(1 for r in rs if r[col["flagged"]] != 0)
        if flagged > MAX_FLAGGED_FRACTION * len(rs):
            raise ExperimentError(
                f"{flagged}/{len(rs)} replications flagged at n={n}; "
                f"exceeds the {MAX_FLAGGED_FRACTION:.0%} ceiling")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

ROWS_FILE = "rows.csv"
AGGREGATES_FILE = "aggregates.json"
PLOT_FILE = "plot.csv"

_PLOT_METRICS = {
    "clt": lambda cfg: [f"ks_t0_{t0:g}" for t0 in cfg.t0s],
    "fclt": lambda cfg: ["ks_sup_abs"],
    "thm3": lambda cfg: ["median_sup_err_vn", "median_sup_err_bn"],
    "miller-sen": lambda cfg: ["ks_ms_sup", "median_ms_gap"],
    "decompose": lambda cfg: ["median_j1", "median_j2", "median_j3", "median_j_sum"],
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class McReport:
    """Rows plus aggregates for one experiment, with provenance."""

    kind: str
    columns: list[str]
    rows: list[tuple]
    aggregates: dict
    config: dict
    config_hash: str
    t0s: tuple = ()
    ns: tuple = ()

    def metric(self, key: str) -> float:
        if key not in self.aggregates:
            raise ArgumentError(f"no aggregate metric {key!r}; "
                                f"known: {sorted(self.aggregates)}")
        return self.aggregates[key]

    def write(self, outdir: str) -> list[str]:
        os.makedirs(outdir, exist_ok=True)
        written = []

        rows_path = os.path.join(outdir, ROWS_FILE)
        with open(rows_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])
        written.append(rows_path)

        agg_path = os.path.join(outdir, AGGREGATES_FILE)
        flat = dict(self.aggregates)
        flat["kind"] = self.kind
        flat["config_hash"] = self.config_hash
        for k, v in self.config.items():
            flat[f"config.{k}"] = v
        with open(agg_path, "w") as fh:
            json.dump(flat, fh, sort_keys=True, indent=1)
            fh.write("\n")
        written.append(agg_path)

        plot_path = os.path.join(outdir, PLOT_FILE)
        metrics = _PLOT_METRICS[self.kind](self)
        with open(plot_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n"] + metrics)
            for n in self.ns:
                w.writerow([n] + [
                    _fmt(self.aggregates.get(f"{mname}_n_{n}", math.nan))
                    for mname in metrics])
        written.append(plot_path)
        return written

    @property
    def t0list(self):
        return self.t0s


def _report_from(cfg: ExperimentConfig, rows: list[tuple]) -> McReport:
    columns = columns_for(cfg)
    _check_flag_budget(cfg, columns, rows)
    agg = compute_aggregates(cfg, columns, rows)
    cfg_echo = cfg.identity()
    cfg_echo["dist_params"] = json.dumps(cfg_echo["dist_params"], sort_keys=True)
    cfg_echo["ns"] = " ".join(str(n) for n in cfg.ns)
    cfg_echo["t0s"] = " ".join(f"{t:g}" for t in cfg.t0s)
    return McReport(kind=cfg.kind, columns=columns, rows=rows, aggregates=agg,
                    config=cfg_echo, config_hash=cfg.config_hash(),
                    t0s=cfg.t0s, ns=cfg.ns)


def run_experiment(cfg: ExperimentConfig) -> McReport:
    """Run any configured experiment and aggregate its report."""
    validate_config(cfg)
    rows = _all_rows(cfg)
    return _report_from(cfg, rows)


def run_clt_experiment(cfg: ExperimentConfig) -> McReport:
    if cfg.kind != "clt":
        cfg = replace(cfg, kind="clt")
    return run_experiment(cfg)


def run_fclt_experiment(cfg: ExperimentConfig) -> McReport:
    if cfg.kind != "fclt":
        cfg = replace(cfg, kind="fclt")
    return run_experiment(cfg)


def run_theorem3_experiment(cfg: ExperimentConfig) -> McReport:
    if cfg.kind != "thm3":
        cfg = replace(cfg, kind="thm3")
    return run_experiment(cfg)


def run_miller_sen_comparison(cfg: ExperimentConfig) -> McReport:
    if cfg.kind != "miller-sen":
        cfg = replace(cfg, kind="miller-sen")
    return run_experiment(cfg)


def run_decompose_experiment(cfg: ExperimentConfig) -> McReport:
    if cfg.kind != "decompose":
        cfg = replace(cfg, kind="decompose")
    return run_experiment(cfg)


def load_report(outdir: str) -> McReport:
    """Load a persisted report and re-check aggregate self-consistency."""
    with open(os.path.join(outdir, AGGREGATES_FILE)) as fh:
        flat = json.load(fh)
    kind = flat["kind"]
    config = {k[len("config."):]: v for k, v in flat.items() if k.startswith("config.")}
    stored = {k: v for k, v in flat.items()
              if not k.startswith("config.") and k not in ("kind", "config_hash")}

    with open(os.path.join(outdir, ROWS_FILE)) as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = []
        for raw in reader:
            row = []
            for name, cell in zip(columns, raw):
                if name in ("stream", "n", "flagged"):
                    row.append(int(cell))
                else:
                    row.append(float(cell))
            rows.append(tuple(row))

    ns = tuple(int(s) for s in str(config["ns"]).split())
    t0s = tuple(float(s) for s in str(config["t0s"]).split())
    cfg_like = ExperimentConfig(
        kind=kind, kernel=config["kernel"], m=int(config["m"]),
        dist=config["dist"], ns=ns, t0s=t0s, reps=int(config["reps"]),
        master_seed=int(config["master_seed"]),
        normalizer=config["normalizer"])
    recomputed = compute_aggregates(cfg_like, columns, rows)
    for k, v in recomputed.items():
        sv = stored.get(k)
        same = (sv == v) or (isinstance(sv, float) and isinstance(v, float)
                             and math.isnan(sv) and math.isnan(v))
        if not same:
            raise ExperimentError(
                f"aggregate {k!r} does not recompute from rows: "
                f"stored {sv!r}, recomputed {v!r}")
    return McReport(kind=kind, columns=columns, rows=rows, aggregates=recomputed,
                    config=config, config_hash=flat["config_hash"],
                    t0s=t0s, ns=ns)
