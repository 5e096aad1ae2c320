"""Command-line front end.

Configs are INI files.  Keys live in a section named after the experiment
kind (``[fluctuations]``, ``[lindeberg]``, ...) and/or a shared ``[run]``
section (master_seed, workers, output_dir, checkpoint_interval).  Repeated
``--override key=value`` flags are applied after the file is parsed.

Exit codes: 0 success, 1 config error, 2 runtime error, 3 failed check.
"""

import argparse
import configparser
import csv
import json
import math
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .dist import ConvergenceError, default_table, tw2_cdf
from .engine import (
    ConfigError,
    ExperimentConfig,
    SCHEMAS,
    dedup_records,
    empirical_cdf,
    read_records,
    run,
)

EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3

KIND_OF = {
    "fluctuations": "fluctuations",
    "lindeberg": "lindeberg",
    "localtime": "localtime",
    "validate": "validity",
    "exponents": "exponents",
    "tw": "tw_build",
}


def read_ini(path, kind: str) -> dict:
    """Flat key/value dict from the [run] and [<kind>] sections of an INI file."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    allowed = {"run", kind, "report"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    values = {}
    for sec in ("run", kind):
        if cp.has_section(sec):
            values.update(cp.items(sec))
    return values


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _add_common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a config key after the file is read (repeatable)")
    p.add_argument("--output", help="output directory (default: $POLYMER_LAB_OUTPUT or ./polymer_lab_out)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polymer-lab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("fluctuations", "free-energy ensembles and KS distances to Tracy-Widom and normal"),
        ("lindeberg", "weight-swap experiment with matched and mismatched arms"),
        ("localtime", "random-walk and bridge intersection statistics"),
        ("validate", "check the validity conditions of a weight family"),
    ]:
        _add_common(sub.add_parser(name, help=help_))
    ex = sub.add_parser("exponents", help="error exponents over (alpha, delta, s, k) grids")
    _add_common(ex)
    ex.add_argument("--alpha", help="comma-separated alpha values")
    ex.add_argument("--delta", help="comma-separated delta values")
    ex.add_argument("--s", help="comma-separated s values")
    ex.add_argument("--k", help="comma-separated moment orders")
    tw = sub.add_parser("tw", help="build the Tracy-Widom GUE table")
    _add_common(tw)
    tw.add_argument("--order", type=int, help="quadrature order")
    tw.add_argument("--tail-cut", type=float, help="truncation of the integration range")
    tw.add_argument("--refine-check", dest="refine_check", action="store_true", default=None,
                    help="require agreement of the 40- and 80-node tables")
    tw.add_argument("--no-refine-check", dest="refine_check", action="store_false")
    tw.add_argument("--table", help="path of the table file to write")
    rp = sub.add_parser("report", help="summarize result CSVs, write plot data, evaluate checks")
    rp.add_argument("inputs", nargs="*", help="output directories or result CSV files")
    rp.add_argument("--config", help="INI file with a [report] section (inputs, checks)")
    rp.add_argument("--output", help="directory for the summary and plot-data files")
    rp.add_argument("--check", action="store_true", help="evaluate the configured check-list")
    rp.add_argument("--checks", help="comma-separated check names (overrides the config)")
    return ap


def config_from_args(args) -> ExperimentConfig:
    kind = KIND_OF[args.command]
    values = read_ini(args.config, kind) if args.config else {}
    values.update(parse_overrides(args.override))
    if args.output:
        values["output_dir"] = args.output
    if args.workers is not None:
        values["workers"] = args.workers
    if args.seed is not None:
        values["master_seed"] = args.seed
    if kind == "exponents":
        for flag, key in (("alpha", "alpha_list"), ("delta", "delta_list"), ("s", "s_list"), ("k", "k_list")):
            if getattr(args, flag) is not None:
                values[key] = getattr(args, flag)
    if kind == "tw_build":
        if args.order is not None:
            values["order"] = args.order
        if args.tail_cut is not None:
            values["tail_cut"] = args.tail_cut
        if args.refine_check is not None:
            values["refine_check"] = args.refine_check
        if args.table:
            values["table_path"] = args.table
    return ExperimentConfig.build(kind, values)


def _print_result(cfg, res, out):
    kind = cfg.kind
    if kind == "fluctuations":
        print("n        mean       sd     KS_TW    KS_normal   p_TW", file=out)
        for n, e in sorted(res.extra.items()):
            print(f"{n:<6d} {e['mean']:8.4f} {e['sd']:8.4f} {e['ks_tw'].statistic:8.4f} "
                  f"{e['ks_normal'].statistic:10.4f} {e['ks_tw'].p_value:8.3g}", file=out)
    elif kind == "lindeberg":
        rep = res.extra["report"]
        print(f"n={rep.n} alpha={rep.alpha} samples={rep.samples}", file=out)
        print("arm            E_tanh      diff_tanh   stderr     z", file=out)
        for a in rep.arms:
            print(f"{a.name:<14s} {a.means['tanh']:9.5f} {a.diffs['tanh']:11.5f} "
                  f"{a.diff_stderrs['tanh']:9.5f} {a.z('tanh'):7.2f}", file=out)
    elif kind == "exponents":
        print("alpha    delta    s      k  lambda      lambda_k    strip_feasible", file=out)
        for r in res.extra["reports"]:
            print(f"{r.alpha:<8g} {r.delta:<8g} {r.s:<6g} {r.k:<2d} {r.lam:.6f}  {r.lam_k:.6f}   "
                  f"{r.strip_feasible}", file=out)
        if len(res.extra["reports"]) == 1:
            print(f"lambda = {res.extra['reports'][0].lam:.6f}", file=out)
    elif kind == "validity":
        rep = res.extra["report"]
        for row in rep.rows():
            print("  ".join(f"{k}={v:.6g}" for k, v in row.items()), file=out)
        for name, ok in rep.verdicts.items():
            print(f"{name}: {'ok' if ok else 'FAILED'}", file=out)
    elif kind == "tw_build":
        t = res.extra["table"]
        print(f"table written to {res.files['table']}", file=out)
        print(f"mean = {t.mean():.7f} variance = {t.variance():.7f}", file=out)
    else:
        for r in res.records:
            print(f"{r.parameters:<32s} {r.statistic:<18s} {r.estimate:.6g} ± {r.stderr:.2g}", file=out)
    for name, path in res.files.items():
        if kind != "tw_build":
            print(f"wrote {path}", file=out)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _collect(inputs):
    records, sample_files, reports = [], [], []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            for f in sorted(p.glob("*_results.csv")):
                records += read_records(f)
            sample_files += sorted(p.glob("fluctuations_n*.csv"))
            reports += sorted(p.glob("lindeberg_report.json"))
        elif p.is_file():
            records += read_records(p)
        else:
            raise ConfigError(f"no such input {item}")
    return dedup_records(records), sample_files, reports


def _param(params: str, key: str):
    for part in params.split(","):
        if part.startswith(key + "="):
            return part.split("=", 1)[1]
    return None


def _by_stat(records, stat):
    return [r for r in records if r.statistic == stat]


def _fluct_series(records, stat):
    out = {}
    for r in _by_stat(records, stat):
        n = _param(r.parameters, "n")
        if n is not None:
            out[int(n)] = r.estimate
    return dict(sorted(out.items()))


def check_ks_decreasing(records):
    ks = _fluct_series(records, "ks_tw")
    vals = list(ks.values())
    ok = len(vals) >= 2 and all(b < a for a, b in zip(vals, vals[1:]))
    return ok, f"KS to TW by n: {ks}"


def check_tw_beats_normal(records):
    tw, nm = _fluct_series(records, "ks_tw"), _fluct_series(records, "ks_normal")
    if not tw:
        return False, "no fluctuation records"
    n = max(tw)
    return tw[n] < nm[n], f"n={n}: KS_TW={tw[n]:.4f} KS_normal={nm[n]:.4f}"


def check_normal_beats_tw(records):
    tw, nm = _fluct_series(records, "ks_tw"), _fluct_series(records, "ks_normal")
    if not tw:
        return False, "no fluctuation records"
    n = max(tw)
    return nm[n] < tw[n], f"n={n}: KS_normal={nm[n]:.4f} KS_TW={tw[n]:.4f}"


def _swap_z(records):
    out = {}
    for r in _by_stat(records, "diff_tanh"):
        out[r.parameters] = (r.estimate / r.stderr) if r.stderr > 0 else (0.0 if r.estimate == 0 else math.inf)
    return out


def check_swap_matched(records):
    z = {k: v for k, v in _swap_z(records).items() if k.startswith("hybrid")}
    return bool(z) and all(abs(v) <= 3 for v in z.values()), f"z by arm: {z}"


def check_swap_control(records):
    z = _swap_z(records).get("control")
    return z is not None and abs(z) >= 5, f"control z = {z}"


def check_lambda(records):
    for r in _by_stat(records, "lambda"):
        if _param(r.parameters, "alpha") == "0.22" and _param(r.parameters, "delta") == "0.01":
            return abs(r.estimate + 0.546154) <= 1e-6, f"lambda(0.22, 0.01) = {r.estimate:.7f}"
    return False, "no lambda(0.22, 0.01) record"


def check_bridge_replace(records):
    sups = [r.estimate for r in _by_stat(records, "bridge_replace_sup") if _param(r.parameters, "n") == "200"]
    return bool(sups) and max(sups) <= 2, f"sup ratio at n=200: {sups}"


def check_meeting(records):
    vals = [r.estimate for r in _by_stat(records, "meeting_ratio")]
    return bool(vals) and min(vals) > 0, f"min normalized meeting tail = {min(vals) if vals else None}"


def check_validity_verdicts(records):
    v = {r.statistic: r.estimate for r in records if r.parameters == "verdict"}
    return bool(v) and all(x == 1.0 for x in v.values()), f"verdicts: {v}"


CHECKS = {
    "ks_decreasing": check_ks_decreasing,
    "tw_beats_normal": check_tw_beats_normal,
    "normal_beats_tw": check_normal_beats_tw,
    "swap_matched": check_swap_matched,
    "swap_control": check_swap_control,
    "lambda": check_lambda,
    "bridge_replace": check_bridge_replace,
    "meeting_positive": check_meeting,
    "validity": check_validity_verdicts,
}


def write_plot_data(records, sample_files, out: Path) -> list:
    """Two-column whitespace-separated x y files, one per series."""
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, xs, ys, header):
        path = out / f"plot_{name}.dat"
        with path.open("w") as fh:
            fh.write(f"# {header}\n")
            for x, y in zip(xs, ys):
                fh.write(f"{x!r} {y!r}\n")
        written.append(path)

    for f in sample_files:
        with open(f, newline="") as fh:
            x = np.array([float(row["centered_scaled"]) for row in csv.DictReader(fh)])
        xs, ys = empirical_cdf(x)
        emit(f"ecdf_{f.stem}", xs.tolist(), ys.tolist(), "x empirical_cdf")
    if sample_files:
        table = default_table()
        grid = np.linspace(-6, 4, 201)
        emit("tw_cdf", grid.tolist(), [float(v) for v in tw2_cdf(table, grid)], "s F2(s)")
    series = defaultdict(list)
    for r in records:
        n = _param(r.parameters, "n")
        if n is not None and math.isfinite(r.estimate):
            key = r.statistic if r.parameters.startswith("n=") and "," not in r.parameters else (
                r.statistic + "_" + r.parameters.split(",", 1)[1].replace("=", "").replace(",", "_"))
            series[key].append((int(n), r.estimate))
    for key, pts in sorted(series.items()):
        if len(pts) >= 2:
            pts.sort()
            safe = "".join(c if c.isalnum() or c in "._-" else "_" for c in key)
            emit(f"{safe}_vs_n", [p[0] for p in pts], [p[1] for p in pts], f"n {key}")
    return written


def cmd_report(args, out) -> int:
    inputs, checks = list(args.inputs), []
    if args.config:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            with open(args.config) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if cp.has_section("report"):
            sec = cp["report"]
            unknown = set(sec) - {"inputs", "checks"}
            if unknown:
                raise ConfigError(f"unknown report keys {sorted(unknown)}")
            inputs += [s.strip() for s in sec.get("inputs", "").split(",") if s.strip()]
            checks = [s.strip() for s in sec.get("checks", "").split(",") if s.strip()]
    if args.checks is not None:
        checks = [s.strip() for s in args.checks.split(",") if s.strip()]
    if not inputs:
        raise ConfigError("report needs at least one input")
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise ConfigError(f"unknown checks {bad}; known: {sorted(CHECKS)}")
    records, sample_files, reports = _collect(inputs)
    dest = Path(args.output) if args.output else Path(inputs[0]) if Path(inputs[0]).is_dir() else Path(".")
    lines = [f"{len(records)} records"]
    for r in records:
        lines.append(f"{r.experiment_id}  {r.parameters:<28s} {r.statistic:<28s} "
                     f"{r.estimate: .6g} ± {r.stderr:.2g}  (m={r.sample_count})")
    for rp in reports:
        rec = json.loads(Path(rp).read_text())
        lines.append(f"swap report n={rec['n']} samples={rec['samples']}")
        for a in rec["arms"]:
            lines.append(f"  {a['name']:<14s} E tanh = {a['means']['tanh']:.5f}  diff = {a['diffs']['tanh']:.5f}"
                         f" ± {a['diff_stderrs']['tanh']:.5f}")
    failed = False
    if args.check:
        for name in checks:
            ok, detail = CHECKS[name](records)
            failed |= not ok
            lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    text = "\n".join(lines) + "\n"
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "report.txt").write_text(text)
    plots = write_plot_data(records, sample_files, dest)
    out.write(text)
    print(f"wrote {dest / 'report.txt'} and {len(plots)} plot-data files", file=out)
    return EXIT_CHECK if failed else 0


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args, out)
        cfg = config_from_args(args)
        if args.dry_run:
            resolved = cfg.resolved()
            resolved.update(workers=cfg.workers, output_dir=str(cfg.output_path()),
                            checkpoint_interval=cfg.checkpoint_interval)
            print(json.dumps(resolved, indent=2, sort_keys=True), file=out)
            return 0
        res = run(cfg)
        _print_result(cfg, res, out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


__all__ = ["main", "build_parser", "read_ini", "parse_overrides", "CHECKS", "SCHEMAS"]
