"""Reproducible Monte Carlo driver.

Work is cut into fixed-size chunks of sample indices.  Every random draw is
derived from (master_seed, sample index) or from (master_seed, task key), so
results do not depend on the number of workers or on scheduling.  Finished
chunks are appended to a newline-delimited JSON checkpoint; a rerun with the
same config skips them.  Aggregation always happens in index order.
"""

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dist import default_table, ks_test, normal_cdf, tw2_build, tw2_cdf
from .lattice import (
    FieldSpec,
    TEST_BATTERY,
    free_energy_ensemble,
    sample_seed,
    summarize_swap,
    swap_arms,
    swap_log_partitions,
    TAG_MASK,
    resolve_family,
)
from .paths import (
    bridge_local_time_stats,
    bridge_replace_sup,
    empirical_n_star,
    first_meeting_tails,
    platonov_deviation,
    triple_local_time_stats,
)
from .rng import generator, mix64
from .weights import (
    BaseNoise,
    PolymerParams,
    WeightFamily,
    check_validity,
    exponent_report,
    CENTERINGS,
    fluctuation_centering,
)


class ConfigError(ValueError):
    pass


class InsufficientData(ValueError):
    pass


# ---------------------------------------------------------------------------
# Streaming statistics
# ---------------------------------------------------------------------------


class RunningStats:
    """Single-pass mean and variance (Welford), mergeable (Chan et al.)."""

    __slots__ = ("count", "mean", "m2")

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, x: float):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    def extend(self, xs):
        for x in xs:
            self.push(float(x))
        return self

    def merge(self, other: "RunningStats") -> "RunningStats":
        out = RunningStats()
        out.count = self.count + other.count
        if out.count == 0:
            return out
        d = other.mean - self.mean
        out.mean = self.mean + d * other.count / out.count
        out.m2 = self.m2 + other.m2 + d * d * self.count * other.count / out.count
        return out

    @property
    def variance(self) -> float:
        if self.count < 2:
            raise InsufficientData("need at least two values for a variance")
        return self.m2 / (self.count - 1)

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count)


def aggregate(values) -> tuple[float, float, int]:
    """(mean, stderr, count) of a stream of numbers."""
    rs = RunningStats().extend(values)
    if rs.count < 2:
        raise InsufficientData("aggregate needs at least two values")
    return rs.mean, rs.stderr, rs.count


def empirical_cdf(values):
    """(sorted values, cumulative probabilities i/m)."""
    x = np.sort(np.asarray(values, dtype=float))
    return x, np.arange(1, len(x) + 1) / len(x)


# ---------------------------------------------------------------------------
# Configs and records
# ---------------------------------------------------------------------------

KINDS = ("fluctuations", "lindeberg", "localtime", "validity", "exponents", "tw_build")

# name -> (type, default)
_COMMON = {
    "master_seed": ("int", 20240101),
    "workers": ("int", 1),
    "checkpoint_interval": ("int", 1),
    "output_dir": ("str", ""),
}
_FAMILY = {
    "family": ("str", "log_gamma"),
    "noise": ("str", "gaussian"),
    "noise_variance": ("float", 1.0),
    "theta": ("str", "match"),
}
SCHEMAS = {
    "fluctuations": {
        **_FAMILY,
        "alpha": ("float", 0.22),
        "n_list": ("ints", [64, 256]),
        "samples": ("int", 1000),
        "centering": ("str", "nominal"),
        "chunk_size": ("int", 50),
    },
    "lindeberg": {
        "family_a": ("str", "standard"),
        "family_b": ("str", "log_gamma"),
        "noise": ("str", "gaussian"),
        "noise_variance": ("float", 1.0),
        "theta_b": ("str", "match"),
        "control_theta_factor": ("float", 0.5),
        "n": ("int", 256),
        "alpha": ("float", 0.22),
        "mask_fractions": ("floats", [0.25, 0.5, 1.0]),
        "mask_kind": ("str", "site"),
        "mask_width": ("int", 1),
        "samples": ("int", 2000),
        "centering": ("str", "nominal"),
        "chunk_size": ("int", 50),
    },
    "localtime": {
        "n_list": ("ints", [64, 256, 1024, 4096]),
        "slopes": ("floats", [0.25, 0.5, 0.75]),
        "m_list": ("ints", [1, 2, 4]),
        "trials": ("int", 2000),
        "meeting_n_list": ("ints", [64, 128, 256, 512, 1024, 2048, 4096]),
        "meeting_trials": ("int", 100000),
        "replace_n": ("int", 200),
        "nstar_n_list": ("ints", [8, 16, 32, 64, 128, 256, 512]),
        "platonov_n_list": ("ints", [100, 1000, 10000]),
        "mgf_a": ("float", 1.0),
        "mgf_delta": ("float", 0.1),
    },
    "validity": {
        **_FAMILY,
        "family": ("str", "standard"),
        "beta_grid": ("floats", [0.05, 0.1, 0.2, 0.3]),
        "k_list": ("ints", [2, 4, 6]),
        "s": ("float", 0.5),
        "samples_per_point": ("int", 100000),
    },
    "exponents": {
        "alpha_list": ("floats", [0.22]),
        "delta_list": ("floats", [0.01]),
        "s_list": ("floats", [0.8]),
        "k_list": ("ints", [2]),
    },
    "tw_build": {
        "order": ("int", 64),
        "tail_cut": ("float", 16.0),
        "refine_check": ("bool", True),
        "table_path": ("str", ""),
    },
}
# single-value shorthands accepted on the command line
ALIASES = {"fluctuations": {"n": "n_list"}}
# keys that do not influence results (excluded from the config digest)
_NON_RESULT_KEYS = ("workers", "checkpoint_interval", "output_dir")


def _convert(name, typ, value):
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "bool":
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ == "ints":
            if isinstance(value, (list, tuple)):
                return [int(v) for v in value]
            return [int(v) for v in str(value).replace(" ", "").split(",") if v]
        if typ == "floats":
            if isinstance(value, (list, tuple)):
                return [float(v) for v in value]
            return [float(v) for v in str(value).replace(" ", "").split(",") if v]
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    master_seed: int = 20240101
    workers: int = 1
    checkpoint_interval: int = 1
    output_dir: str = ""

    @classmethod
    def build(cls, kind: str, values: dict) -> "ExperimentConfig":
        """Validate and type-convert raw key/value pairs; unknown keys are rejected."""
        if kind not in SCHEMAS:
            raise ConfigError(f"unknown experiment kind {kind!r}")
        schema = SCHEMAS[kind]
        values = dict(values)
        for short, full in ALIASES.get(kind, {}).items():
            if short in values:
                values[full] = values.pop(short)
        unknown = set(values) - set(schema) - set(_COMMON) - {"kind"}
        if unknown:
            raise ConfigError(f"unknown config keys for {kind}: {sorted(unknown)}")
        params = {k: _convert(k, t, values.get(k, d)) for k, (t, d) in schema.items()}
        common = {k: _convert(k, t, values.get(k, d)) for k, (t, d) in _COMMON.items()}
        cfg = cls(kind, params, **common)
        cfg.validate()
        return cfg

    def validate(self):
        p = self.params
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        try:
            if self.kind == "fluctuations":
                family_from(p)
                if p["samples"] < 2 or p["chunk_size"] < 1 or not p["n_list"]:
                    raise ConfigError("need samples >= 2, chunk_size >= 1 and a nonempty n_list")
                if p["centering"] not in ("nominal", "corrected", "crossover"):
                    raise ConfigError(f"unknown centering {p['centering']!r}")
                for n in p["n_list"]:
                    PolymerParams(n, p["alpha"])
            elif self.kind == "lindeberg":
                lindeberg_families(p)
                PolymerParams(p["n"], p["alpha"])
                if p["samples"] < 2 or p["chunk_size"] < 1:
                    raise ConfigError("need samples >= 2 and chunk_size >= 1")
                if p["mask_kind"] not in ("site", "strip"):
                    raise ConfigError("mask_kind must be site or strip")
            elif self.kind == "validity":
                family_from(p)
                if not p["beta_grid"] or any(not b > 0 for b in p["beta_grid"]):
                    raise ConfigError("beta_grid must be nonempty and strictly positive")
                if p["samples_per_point"] < 10_000:
                    raise ConfigError("samples_per_point must be at least 1e4")
                if not 0 < p["s"] < 1 or not p["k_list"]:
                    raise ConfigError("need s in (0, 1) and a nonempty k_list")
            elif self.kind == "exponents":
                for a in p["alpha_list"]:
                    for d in p["delta_list"]:
                        for s_ in p["s_list"]:
                            for k in p["k_list"]:
                                exponent_report(a, d, s_, k)
            elif self.kind == "localtime":
                if p["trials"] < 2 or p["meeting_trials"] < 2:
                    raise ConfigError("need at least two trials")
            elif self.kind == "tw_build":
                if p["order"] < 2 or p["tail_cut"] <= 0:
                    raise ConfigError("need order >= 2 and tail_cut > 0")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved(self) -> dict:
        out = {"kind": self.kind, "master_seed": self.master_seed}
        out.update(self.params)
        return out

    def digest(self) -> str:
        """Hash of everything that determines the results."""
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def output_path(self) -> Path:
        base = self.output_dir or os.environ.get("POLYMER_LAB_OUTPUT", "") or "polymer_lab_out"
        return Path(base)


def family_from(p: dict, variant_key="family", theta_key="theta") -> WeightFamily:
    noise = BaseNoise(kind=p["noise"], variance=p["noise_variance"])
    variant = p[variant_key]
    if variant == "log_gamma":
        theta = p.get(theta_key, "match")
        if theta == "match":
            return WeightFamily.log_gamma_matched(noise)
        return WeightFamily.log_gamma(float(theta))
    if variant in ("standard", "linear"):
        return WeightFamily(variant, noise=noise)
    raise ConfigError(f"unknown weight family {variant!r}")


def lindeberg_families(p: dict):
    """(family_a, family_b, control) for a swap config."""
    fa = family_from(p, "family_a")
    fb = family_from(p, "family_b", "theta_b")
    params = PolymerParams(p["n"], p["alpha"])
    control = None
    if p["control_theta_factor"] > 0:
        if fb.variant != "log_gamma":
            raise ConfigError("the control arm rescales theta and needs a log_gamma family_b")
        theta = fb.theta_at(params.beta) * p["control_theta_factor"]
        if theta <= 2:
            raise ConfigError("control theta must stay above 2")
        control = WeightFamily.log_gamma(theta)
    return fa, fb, control


@dataclass
class ResultRecord:
    experiment_id: str
    parameters: str
    statistic: str
    estimate: float
    stderr: float
    sample_count: int
    wall_time: float = 0.0

    CSV_FIELDS = ("experiment_id", "parameters", "statistic", "estimate", "stderr", "sample_count")

    def key(self):
        return (self.experiment_id, self.parameters, self.statistic)

    def csv_row(self):
        return [self.experiment_id, self.parameters, self.statistic, repr(float(self.estimate)),
                repr(float(self.stderr)), str(int(self.sample_count))]


def records_csv(records) -> str:
    """Canonical CSV text (sorted, wall time excluded so digests are stable)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ResultRecord.CSV_FIELDS)
    for r in sorted(records, key=lambda r: r.key()):
        w.writerow(r.csv_row())
    return buf.getvalue()


def read_records(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ResultRecord(row["experiment_id"], row["parameters"], row["statistic"],
                                    float(row["estimate"]), float(row["stderr"]), int(row["sample_count"])))
    return out


def dedup_records(records) -> list:
    seen = {}
    for r in records:
        seen[r.key()] = r
    return [seen[k] for k in sorted(seen)]


# ---------------------------------------------------------------------------
# Checkpoints and manifest
# ---------------------------------------------------------------------------


class Checkpoint:
    """Append-only NDJSON log of finished chunks, keyed by (task, start, stop)."""

    def __init__(self, path: Path, digest: str):
        self.path = path
        self.digest = digest
        self.done = {}
        if path.exists():
            with path.open() as fh:
                for line in fh:
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # torn final line from an interrupted write
                    if rec.get("digest") != digest:
                        continue
                    self.done[(rec["task"], rec["start"], rec["stop"])] = rec["data"]

    def has(self, task, start, stop) -> bool:
        return (task, start, stop) in self.done

    def write(self, entries):
        with self.path.open("a") as fh:
            for task, start, stop, data in entries:
                self.done[(task, start, stop)] = data
                fh.write(json.dumps({"digest": self.digest, "task": task, "start": start, "stop": stop,
                                     "data": data}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def _merge_ranges(ranges):
    out = []
    for a, b in sorted(ranges):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return out


def write_manifest(path: Path, cfg: ExperimentConfig, completed: dict, started: float, finished: float | None,
                   wall_times: dict):
    manifest = {
        "config_digest": cfg.digest(),
        "code_version": __version__,
        "kind": cfg.kind,
        "config": cfg.resolved(),
        "completed": {task: _merge_ranges(r) for task, r in sorted(completed.items())},
        "started": started,
        "finished": finished,
        "wall_time": wall_times,
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(path)


# ---------------------------------------------------------------------------
# Work units (module level so they pickle into worker processes)
# ---------------------------------------------------------------------------


def _fluct_chunk(args):
    spec, master_seed, start, stop = args
    samples = free_energy_ensemble(spec, stop - start, master_seed, start=start)
    return [s.log_z for s in samples]


def _swap_chunk(args):
    specs, master_seed, start, stop = args
    return [swap_log_partitions(specs, sample_seed(master_seed, s)).tolist() for s in range(start, stop)]


def _localtime_task(args):
    name, payload, seed = args
    rng = generator(seed)
    if name == "replace":
        ratio, y, h = bridge_replace_sup(payload["n"])
        return {"sup": ratio, "y": y, "h": h}
    if name == "nstar":
        sups = {n: bridge_replace_sup(n)[0] for n in payload["n_list"]}
        return {"sups": sups, "n_star": empirical_n_star(payload["n_list"])}
    if name == "platonov":
        n, p = payload["n"], payload["p"]
        d = platonov_deviation(n, p)
        return {"deviation": d, "constant": d * math.sqrt(n * p * (1 - p))}
    if name == "meeting":
        tails = first_meeting_tails(payload["p1"], payload["p2"], payload["n_list"], payload["trials"], rng)
        return {"tails": [[t.n, t.estimate, t.stderr] for t in tails]}
    if name == "pair":
        st = bridge_local_time_stats(payload["n"], (payload["p1"], payload["p2"]), payload["m_list"],
                                     payload["trials"], rng, payload["mgf_a"], payload["mgf_delta"])
        return {"estimates": st.estimates, "stderrs": st.stderrs, "normalized": st.normalized,
                "mgf": st.mgf_estimate, "mgf_stderr": st.mgf_stderr}
    if name == "triple":
        m1, s1, m2, s2 = triple_local_time_stats(payload["n"], payload["slopes"], payload["trials"], rng)
        return {"mean": m1, "mean_stderr": s1, "second": m2, "second_stderr": s2}
    raise ValueError(name)


def _map(fn, items, workers):
    if workers == 1:
        for it in items:
            yield fn(it)
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        yield from ex.map(fn, items)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    records: list
    output_dir: Path
    files: dict = field(default_factory=dict)
    complete: bool = True
    extra: dict = field(default_factory=dict)


class _Interrupted(Exception):
    pass


def run(cfg: ExperimentConfig, stop_after_chunks: int | None = None) -> RunResult:
    """Execute an experiment, resuming from any checkpoint in the output dir.

    ``stop_after_chunks`` aborts after that many newly computed chunks
    (used to exercise resume); the returned result then has complete=False.
    """
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    runner = {
        "fluctuations": _run_fluctuations,
        "lindeberg": _run_lindeberg,
        "localtime": _run_localtime,
        "validity": _run_validity,
        "exponents": _run_exponents,
        "tw_build": _run_tw_build,
    }[cfg.kind]
    started = time.time()
    ctx = _RunContext(cfg, out, stop_after_chunks, started)
    try:
        res = runner(ctx)
    except _Interrupted:
        ctx.manifest(None)
        return RunResult([], out, complete=False)
    ctx.manifest(time.time())
    results_path = out / f"{cfg.kind}_results.csv"
    results_path.write_text(records_csv(res.records))
    res.files["results"] = results_path
    res.files["manifest"] = ctx.manifest_path
    return res


class _RunContext:
    def __init__(self, cfg, out, stop_after, started):
        self.cfg = cfg
        self.out = out
        self.stop_after = stop_after
        self.started = started
        self.digest = cfg.digest()
        self.exp_id = self.digest[:12]
        self.checkpoint = Checkpoint(out / f"{cfg.kind}.checkpoint.ndjson", self.digest)
        self.manifest_path = out / f"{cfg.kind}.manifest.json"
        self.new_chunks = 0
        self.wall = {}

    def completed(self):
        done = {}
        for task, start, stop in self.checkpoint.done:
            done.setdefault(str(task), []).append((start, stop))
        return done

    def manifest(self, finished):
        write_manifest(self.manifest_path, self.cfg, self.completed(), self.started, finished, self.wall)

    def run_chunks(self, task: str, total: int, chunk: int, make_args, fn):
        """Run fn over [start, stop) chunks of 0..total, skipping checkpointed
        ones; returns the concatenated per-sample data in index order."""
        bounds = [(s, min(s + chunk, total)) for s in range(0, total, chunk)]
        todo = [(s, e) for s, e in bounds if not self.checkpoint.has(task, s, e)]
        t0 = time.time()
        pending = []
        interval = self.cfg.checkpoint_interval
        try:
            for (s, e), data in zip(todo, _map(fn, [make_args(s, e) for s, e in todo], self.cfg.workers)):
                pending.append((task, s, e, data))
                self.new_chunks += 1
                if len(pending) >= interval:
                    self.checkpoint.write(pending)
                    pending = []
                if self.stop_after is not None and self.new_chunks >= self.stop_after:
                    self.checkpoint.write(pending)
                    pending = []
                    raise _Interrupted()
        finally:
            if pending:
                self.checkpoint.write(pending)
        self.wall[task] = self.wall.get(task, 0.0) + time.time() - t0
        data = []
        for s, e in bounds:
            data.extend(self.checkpoint.done[(task, s, e)])
        return data

    def record(self, params, stat, est, se, count, task=None):
        return ResultRecord(self.exp_id, params, stat, float(est), float(se), int(count),
                            self.wall.get(task, 0.0) if task else 0.0)


def _safe_se(v):
    return float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan


def fluctuation_summary(x: np.ndarray) -> dict:
    """KS distances of centered samples to TW and to the best-fit normal."""
    table = default_table()
    m, sd = float(np.mean(x)), float(np.std(x, ddof=1))
    ks_tw = ks_test(x, lambda v: tw2_cdf(table, v))
    ks_n = ks_test(x, lambda v: normal_cdf((np.asarray(v) - m) / sd))
    return {"mean": m, "sd": sd, "ks_tw": ks_tw, "ks_normal": ks_n}


def _run_fluctuations(ctx: _RunContext) -> RunResult:
    cfg, p = ctx.cfg, ctx.cfg.params
    family = family_from(p)
    records, files, extra = [], {}, {}
    for n in p["n_list"]:
        params = PolymerParams(n, p["alpha"])
        spec = FieldSpec(params, family)
        task = f"n={n}"
        log_z = np.array(ctx.run_chunks(task, p["samples"], p["chunk_size"],
                                        lambda s, e: (spec, cfg.master_seed, s, e), _fluct_chunk))
        resolved = resolve_family(family, params.beta)
        center, scale = fluctuation_centering(resolved, params, p["centering"], noise=family.noise)
        x = (log_z - center) / scale
        path = ctx.out / f"fluctuations_n{n}.csv"
        with path.open("w") as fh:
            fh.write("seed_index,log_z,centered_scaled\n")
            for i, (lz, xi) in enumerate(zip(log_z, x)):
                fh.write(f"{i},{float(lz)!r},{float(xi)!r}\n")
        files[task] = path
        summ = fluctuation_summary(x)
        extra[n] = {"x": x, "log_z": log_z, "center": center, "scale": scale, **summ}
        m = len(x)
        records += [
            ctx.record(task, "mean_centered_scaled", summ["mean"], _safe_se(x), m, task),
            ctx.record(task, "var_centered_scaled", summ["sd"] ** 2, math.nan, m, task),
            ctx.record(task, "ks_tw", summ["ks_tw"].statistic, math.nan, m, task),
            ctx.record(task, "ks_tw_pvalue", summ["ks_tw"].p_value, math.nan, m, task),
            ctx.record(task, "ks_normal", summ["ks_normal"].statistic, math.nan, m, task),
            ctx.record(task, "mean_log_z", float(np.mean(log_z)), _safe_se(log_z), m, task),
        ]
        # the other centerings, reported for diagnosis only
        for mode in CENTERINGS:
            if mode == p["centering"]:
                continue
            c2, s2 = fluctuation_centering(resolved, params, mode, noise=family.noise)
            x2 = (log_z - c2) / s2
            alt = fluctuation_summary(x2)
            extra[n][mode] = alt
            records += [
                ctx.record(task, f"mean_centered_scaled[{mode}]", alt["mean"], _safe_se(x2), m, task),
                ctx.record(task, f"ks_tw[{mode}]", alt["ks_tw"].statistic, math.nan, m, task),
            ]
    return RunResult(records, ctx.out, files, extra=extra)


def _run_lindeberg(ctx: _RunContext) -> RunResult:
    cfg, p = ctx.cfg, ctx.cfg.params
    fa, fb, control = lindeberg_families(p)
    params = PolymerParams(p["n"], p["alpha"])
    arms = swap_arms(fa, fb, params, p["mask_fractions"], control, p["mask_kind"], p["mask_width"],
                     mask_seed=mix64(cfg.master_seed, TAG_MASK))
    names, fracs, specs = zip(*arms)
    task = "swap"
    lz = np.array(ctx.run_chunks(task, p["samples"], p["chunk_size"],
                                 lambda s, e: (specs, cfg.master_seed, s, e), _swap_chunk))
    resolved = resolve_family(fa, params.beta)
    center, scale = fluctuation_centering(resolved, params, p["centering"], noise=fa.noise)
    report = summarize_swap(names, fracs, specs, lz, center, scale)
    path = ctx.out / "lindeberg_report.json"
    path.write_text(json.dumps(report.to_record(), indent=2, sort_keys=True))
    records = []
    for arm in report.arms:
        for t in TEST_BATTERY:
            records.append(ctx.record(arm.name, f"E_{t}", arm.means[t], arm.stderrs[t], report.samples, task))
            records.append(ctx.record(arm.name, f"diff_{t}", arm.diffs[t], arm.diff_stderrs[t], report.samples, task))
    return RunResult(records, ctx.out, {"report": path}, extra={"report": report})


def _localtime_tasks(cfg):
    p = cfg.params
    ms = cfg.master_seed
    tasks = [("replace", {"n": p["replace_n"]}), ("nstar", {"n_list": p["nstar_n_list"]})]
    for n in p["platonov_n_list"]:
        for q in p["slopes"]:
            tasks.append(("platonov", {"n": n, "p": q}))
    for a in p["slopes"]:
        for b in p["slopes"]:
            tasks.append(("meeting", {"p1": a, "p2": b, "n_list": p["meeting_n_list"], "trials": p["meeting_trials"]}))
    for n in p["n_list"]:
        tasks.append(("pair", {"n": n, "p1": 0.5, "p2": 0.5, "m_list": p["m_list"], "trials": p["trials"],
                               "mgf_a": p["mgf_a"], "mgf_delta": p["mgf_delta"]}))
        tasks.append(("triple", {"n": n, "slopes": [0.5, 0.5, 0.5], "trials": p["trials"]}))
    out = []
    for k, (name, payload) in enumerate(tasks):
        key = f"{name}:{json.dumps(payload, sort_keys=True)}"
        seed = mix64(ms, int(hashlib.sha256(key.encode()).hexdigest()[:15], 16))
        out.append((key, (name, payload, seed)))
    return out


def _localtime_chunk(args):
    return [_localtime_task(args)]


def _run_localtime(ctx: _RunContext) -> RunResult:
    tasks = _localtime_tasks(ctx.cfg)
    results = {}
    for key, args in tasks:
        results[key] = ctx.run_chunks(key, 1, 1, lambda s, e, args=args: args, _localtime_chunk)[0]
    records, rows = [], []
    for key, (name, payload, _) in tasks:
        r = results[key]
        if name == "replace":
            records.append(ctx.record(f"n={payload['n']}", "bridge_replace_sup", r["sup"], 0.0, 0))
        elif name == "nstar":
            for n, v in r["sups"].items():
                records.append(ctx.record(f"n={n}", "bridge_replace_sup", v, 0.0, 0))
            records.append(ctx.record("scan", "n_star", r["n_star"] if r["n_star"] is not None else math.nan, 0.0, 0))
        elif name == "platonov":
            records.append(ctx.record(f"n={payload['n']},p={payload['p']}", "platonov_constant", r["constant"], 0.0, 0))
        elif name == "meeting":
            q = payload["p1"] * (1 - payload["p2"]) + (1 - payload["p1"]) * payload["p2"]
            for n, est, se in r["tails"]:
                par = f"n={n},p1={payload['p1']},p2={payload['p2']}"
                records.append(ctx.record(par, "meeting_tail", est, se, payload["trials"]))
                records.append(ctx.record(par, "meeting_ratio", math.sqrt(n) * est / q, math.sqrt(n) * se / q,
                                          payload["trials"]))
        elif name == "pair":
            par = f"n={payload['n']},p1={payload['p1']},p2={payload['p2']}"
            for m, e, se, z in zip(payload["m_list"], r["estimates"], r["stderrs"], r["normalized"]):
                records.append(ctx.record(par, f"EL^{m}", e, se, payload["trials"]))
                rows.append([payload["n"], payload["p1"], payload["p2"], m, e, se, z])
            records.append(ctx.record(par, "mgf", r["mgf"], r["mgf_stderr"], payload["trials"]))
        elif name == "triple":
            par = f"n={payload['n']}"
            records.append(ctx.record(par, "EL3", r["mean"], r["mean_stderr"], payload["trials"]))
            records.append(ctx.record(par, "EL3^2", r["second"], r["second_stderr"], payload["trials"]))
    path = ctx.out / "localtime_stats.csv"
    with path.open("w") as fh:
        fh.write("n,p1,p2,m,estimate,stderr,normalized\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return RunResult(records, ctx.out, {"localtime": path}, extra={"results": results})


def _run_validity(ctx: _RunContext) -> RunResult:
    p = ctx.cfg.params
    family = family_from(p)
    rng = generator(ctx.cfg.master_seed, 0x7A11D)
    rep = check_validity(family, p["beta_grid"], p["k_list"], p["s"], p["samples_per_point"], rng)
    records = []
    for row in rep.rows():
        par = f"beta={row['beta']}"
        records.append(ctx.record(par, "mean_error", row["mean_error"], 0.0, p["samples_per_point"]))
        records.append(ctx.record(par, "tail_prob", row["tail_prob"], 0.0, p["samples_per_point"]))
        for k in rep.k_list:
            records.append(ctx.record(par, f"C{k}", row[f"C{k}"], 0.0, p["samples_per_point"]))
    for k, v in rep.c_k.items():
        records.append(ctx.record("sup", f"C{k}", v, 0.0, p["samples_per_point"]))
    records.append(ctx.record("fit", "tail_slope", rep.tail_fit_slope, 0.0, p["samples_per_point"]))
    for name, ok in rep.verdicts.items():
        records.append(ctx.record("verdict", name, 1.0 if ok else 0.0, 0.0, 0))
    return RunResult(records, ctx.out, extra={"report": rep})


def _run_exponents(ctx: _RunContext) -> RunResult:
    p = ctx.cfg.params
    records, reports = [], []
    for a in p["alpha_list"]:
        for d in p["delta_list"]:
            for s in p["s_list"]:
                for k in p["k_list"]:
                    r = exponent_report(a, d, s, k)
                    reports.append(r)
                    par = f"alpha={a},delta={d},s={s},k={k}"
                    records.append(ctx.record(par, "lambda", r.lam, 0.0, 0))
                    records.append(ctx.record(par, "lambda_k", r.lam_k, 0.0, 0))
                    records.append(ctx.record(par, "strip_feasible", float(r.strip_feasible), 0.0, 0))
                    records.append(ctx.record(par, "alpha_floor_conjectured", r.alpha_floor_conjectured, 0.0, 0))
    return RunResult(records, ctx.out, extra={"reports": reports})


def _run_tw_build(ctx: _RunContext) -> RunResult:
    p = ctx.cfg.params
    t0 = time.time()
    table = tw2_build(p["order"], p["tail_cut"], refine_check=p["refine_check"])
    path = Path(p["table_path"]) if p["table_path"] else ctx.out / "tw2_gue.csv"
    table.to_csv(path)
    ctx.wall["build"] = time.time() - t0
    records = [
        ctx.record("table", "mean", table.mean(), 0.0, len(table.grid)),
        ctx.record("table", "variance", table.variance(), 0.0, len(table.grid)),
    ]
    return RunResult(records, ctx.out, {"table": path}, extra={"table": table})
