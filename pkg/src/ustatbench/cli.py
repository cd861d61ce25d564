"""Command-line bench driver.

Subcommands
-----------
sample   draw from a source distribution, write draws + summary stats
ustat    running U-statistic values for a sample file (fast path,
         optional exact-enumeration cross-check)
verify   run a configured experiment (clt | fclt | thm3 | miller-sen |
         decompose), persist rows/aggregates/plot files, and evaluate
         the configured assertions

Exit codes: 0 success, 1 config or usage error, 2 assertion failure.

All randomness flows from the mandatory --seed flag; there is no
wall-clock default.  The output directory is --out when given, else the
USTATBENCH_OUT environment variable, else ./runs/<name>.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import BenchError, ConfigError, ResourceBudgetError
from .kernels import builtin_kernel
from .montecarlo import (
    EXPERIMENT_KINDS,
    ExperimentConfig,
    McReport,
    run_experiment,
)
from .sampling import Normal, Seed, make_distribution, sample as draw_sample
from .ustat import prefix_u_fast, prefix_u_oracle

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSERT = 2

ENV_OUTDIR = "USTATBENCH_OUT"

_DIST_FLAGS = ("a", "mean", "sd", "rate", "df")


def _outdir(args, default_name: str) -> str:
    if getattr(args, "out", None):
        return args.out
    env = os.environ.get(ENV_OUTDIR)
    if env:
        return os.path.join(env, default_name)
    return os.path.join("runs", default_name)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(outdir: str, subcommand: str, config: dict,
                    files: list[str], started: str) -> str:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "outdir": os.path.abspath(outdir),
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": __version__,
        "files": {os.path.basename(p): _sha256(p) for p in sorted(files)},
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def _dist_from_args(args) -> tuple:
    params = {}
    for name in _DIST_FLAGS:
        val = getattr(args, name, None)
        if val is not None:
            params[name] = float(val)
    try:
        dist = make_distribution(args.dist, **params)
    except TypeError as exc:
        # missing required constructor argument (e.g. --a for example-pareto)
        raise ConfigError(f"distribution {args.dist!r}: {exc}") from exc
    return dist, params


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

_SUMMARY_LEVELS = [float(2 ** j) for j in range(10)]


def cmd_sample(args) -> int:
    dist, params = _dist_from_args(args)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    draws = draw_sample(dist, args.n, Seed(args.seed, 0))
    outdir = _outdir(args, f"sample-{dist.kind}")
    os.makedirs(outdir, exist_ok=True)

    draws_path = os.path.join(outdir, "draws.csv")
    with open(draws_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"])
        for v in draws:
            w.writerow([repr(float(v))])

    center = float(np.mean(draws))
    dev = draws - center
    summary_path = os.path.join(outdir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stat", "value"])
        w.writerow(["n", str(args.n)])
        w.writerow(["mean", repr(center)])
        for lvl in _SUMMARY_LEVELS:
            tv = float(np.mean(np.where(np.abs(dev) <= lvl, dev * dev, 0.0)))
            w.writerow([f"trunc_second_moment_{lvl:g}", repr(tv)])

    config = {"dist": dist.kind, **params, "n": args.n, "seed": args.seed}
    _write_manifest(outdir, "sample", config, [draws_path, summary_path], started)
    print(f"wrote {draws_path}")
    print(f"wrote {summary_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ustat
# ---------------------------------------------------------------------------


def _read_values(path: str) -> np.ndarray:
    try:
        values = []
        with open(path) as fh:
            for line in fh:
                for tok in line.replace(",", " ").split():
                    values.append(float(tok))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read sample values from {path!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"no values found in {path!r}")
    return np.asarray(values)


def cmd_ustat(args) -> int:
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    data = _read_values(args.input)
    # the evaluators never use theta, so any binding distribution works here
    kernel = builtin_kernel(args.kernel, Normal(0.0, 1.0),
                            m=args.m if args.kernel == "product" else None)
    if len(data) < kernel.order:
        raise ConfigError(
            f"need at least {kernel.order} values for kernel {args.kernel!r}, "
            f"got {len(data)}")
    fast = prefix_u_fast(kernel, data)
    oracle = None
    max_rel = None
    if args.oracle:
        try:
            oracle = prefix_u_oracle(kernel, data)
        except ResourceBudgetError as exc:
            raise ConfigError(f"{exc}; rerun without --oracle or with smaller n") from exc
        denom = np.maximum(np.abs(oracle.values), 1e-300)
        max_rel = float(np.max(np.abs(fast.values - oracle.values) / denom))

    outdir = _outdir(args, f"ustat-{kernel.name}")
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "upath.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "u_fast"] + (["u_oracle"] if oracle else []))
        for i, k in enumerate(range(kernel.order, len(data) + 1)):
            row = [str(k), repr(float(fast.values[i]))]
            if oracle is not None:
                row.append(repr(float(oracle.values[i])))
            w.writerow(row)
        if max_rel is not None:
            fh.write(f"# max_abs_rel_diff = {max_rel!r}\n")
    config = {"kernel": args.kernel, "m": kernel.order, "input": args.input,
              "oracle": bool(args.oracle)}
    _write_manifest(outdir, "ustat", config, [path], started)
    print(f"wrote {path}")
    if max_rel is not None:
        print(f"max_abs_rel_diff = {max_rel!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _parse_experiment_section(section, kind: str, args) -> ExperimentConfig:
    def get(key, default=None):
        return section.get(key, default)

    if get("kind") not in (None, kind):
        raise ConfigError(
            f"config kind {get('kind')!r} does not match subcommand {kind!r}")
    if get("seed") is not None:
        raise ConfigError("the master seed comes from the mandatory --seed flag, "
                          "not the config file")
    kernel = get("kernel")
    if kernel is None:
        raise ConfigError("config must set kernel")
    dist = get("dist")
    if dist is None:
        raise ConfigError("config must set dist")

    def parse_params(text):
        out = []
        for tok in (text or "").split():
            if "=" not in tok:
                raise ConfigError(f"bad dist_params token {tok!r}, expected key=value")
            k, v = tok.split("=", 1)
            out.append((k, float(v)))
        return tuple(out)

    try:
        ns = tuple(int(s) for s in (args.ns or get("ns", "")).split())
        t0s = tuple(float(s) for s in get("t0", "1.0").split())
        cfg = ExperimentConfig(
            kind=kind,
            kernel=kernel,
            m=int(get("m", "2")),
            dist=dist,
            dist_params=parse_params(get("dist_params")),
            ns=ns,
            t0s=t0s,
            reps=int(args.reps if args.reps is not None else get("reps", "100")),
            master_seed=args.seed,
            normalizer=get("normalizer", "self"),
            trunc_level=float(get("trunc_level")) if get("trunc_level") else None,
            workers=int(args.workers if args.workers is not None else get("workers", "1")),
            hajek_draws=int(get("hajek_draws", "4000")),
            centering_draws=int(get("centering_draws", str(10 ** 6))),
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if not cfg.ns:
        raise ConfigError("config must set ns (or pass --ns)")
    return cfg


class Assertion:
    """One named check against the aggregate metrics."""

    def __init__(self, name: str, ok: bool, detail: str):
        self.name = name
        self.ok = ok
        self.detail = detail


def _series(report: McReport, prefix: str, ns) -> list[float]:
    return [report.metric(f"{prefix}_n_{n}") for n in ns]


def evaluate_assertions(section, report: McReport, ns) -> list[Assertion]:
    out = []
    for key, raw in section.items():
        if key.startswith("max_"):
            metric = key[len("max_"):]
            value = report.metric(metric)
            bound = float(raw)
            out.append(Assertion(
                key, value <= bound, f"{metric} = {value!r} (bound {bound!r})"))
        elif key.startswith("eq_"):
            metric = key[len("eq_"):]
            value = report.metric(metric)
            target = float(raw)
            out.append(Assertion(
                key, value == target, f"{metric} = {value!r} (expected {target!r})"))
        elif key.startswith("decreasing_"):
            prefix = key[len("decreasing_"):]
            series = _series(report, prefix, ns)
            mode = (raw or "strict").strip().lower()
            if mode == "strict":
                ok = all(b < a for a, b in zip(series, series[1:]))
            elif mode == "endpoints":
                ok = series[-1] < series[0]
            else:
                raise ConfigError(f"unknown decreasing mode {raw!r}")
            out.append(Assertion(
                key, ok, f"{prefix} over ns = {series!r} ({mode})"))
        else:
            raise ConfigError(f"unknown assertion key {key!r} "
                              "(use max_*, eq_*, decreasing_*)")
    return out


def cmd_verify(args) -> int:
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    parser = configparser.ConfigParser()
    # keep metric-name keys case sensitive
    parser.optionxform = str
    read = parser.read(args.config)
    if not read:
        raise ConfigError(f"cannot read config file {args.config!r}")
    if "experiment" not in parser:
        raise ConfigError("config file needs an [experiment] section")
    cfg = _parse_experiment_section(parser["experiment"], args.experiment, args)

    report = run_experiment(cfg)
    outdir = _outdir(args, f"{cfg.kind}-{report.config_hash[:8]}")
    files = report.write(outdir)
    _write_manifest(outdir, f"verify {cfg.kind}", report.config, files, started)
    for path in files:
        print(f"wrote {path}")

    assertions = []
    if "assert" in parser:
        assertions = evaluate_assertions(parser["assert"], report, cfg.ns)
    n_fail = 0
    for a in assertions:
        status = "PASS" if a.ok else "FAIL"
        n_fail += 0 if a.ok else 1
        print(f"ASSERT {a.name}: {status} ({a.detail})")
    if n_fail:
        print(f"{n_fail}/{len(assertions)} assertions failed")
        return EXIT_ASSERT
    if assertions:
        print(f"all {len(assertions)} assertions passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ustatbench",
        description="Monte Carlo bench for self-normalized U-statistic processes")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("sample", help="draw from a source distribution")
    ps.add_argument("--dist", required=True)
    for flag in _DIST_FLAGS:
        ps.add_argument(f"--{flag}", type=float, default=None)
    ps.add_argument("--n", type=int, required=True)
    ps.add_argument("--seed", type=int, required=True)
    ps.add_argument("--out", default=None)
    ps.set_defaults(func=cmd_sample)

    pu = sub.add_parser("ustat", help="running U-statistic values for a sample file")
    pu.add_argument("--kernel", required=True)
    pu.add_argument("--m", type=int, default=2)
    pu.add_argument("--input", required=True)
    pu.add_argument("--oracle", action="store_true")
    pu.add_argument("--out", default=None)
    pu.set_defaults(func=cmd_ustat)

    pv = sub.add_parser("verify", help="run a configured experiment with assertions")
    pv.add_argument("experiment", choices=EXPERIMENT_KINDS)
    pv.add_argument("--config", required=True)
    pv.add_argument("--seed", type=int, required=True)
    pv.add_argument("--reps", type=int, default=None)
    pv.add_argument("--workers", type=int, default=None)
    pv.add_argument("--ns", default=None,
                    help="override the config n sweep, e.g. '250 1000'")
    pv.add_argument("--out", default=None)
    pv.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; the bench contract
        # reserves 2 for assertion failures and 1 for config/usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
