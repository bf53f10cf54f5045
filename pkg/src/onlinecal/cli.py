"""Command-line entry point: ``onlinecal {stream,bo,report}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bayesopt import BENCHMARKS, bo_run, get_benchmark
from .core import DataError, DomainError, NumericalError, OnlineCalError
from .metrics import TRACE_SCHEMA_VERSION, trace_columns
from .streams import METHODS, SYNTH_KINDS, load_csv, run_experiment, synth_stream

log = logging.getLogger("onlinecal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(OnlineCalError):
    """Invalid configuration file, flag or value."""


# key -> (type, default). None defaults mean "unset".
CONFIG_KEYS = {
    "dataset": (str, None),
    "target": (str, None),
    "features": (str, None),
    "synth": (str, None),
    "method": (str, "online"),
    "N": (int, 20),
    "M": (int, None),
    "n": (int, 10),
    "B": (float, 10.0),
    "seed": (int, 0),
    "T": (int, None),
    "probes": (int, 9),
    "K": (int, 200),
    "warmup": (int, 50),
    "out": (str, "out"),
    "synth_c": (float, None),
    "synth_noise": (float, None),
    "synth_d": (int, None),
    "synth_offset": (float, None),
    "benchmark": (str, None),
    "seeds": (str, "1,2,3,4,5"),
    "calibrated": (str, "both"),
    "kappa": (float, 2.0),
    "alpha": (float, 0.05),
    "budget": (int, 2048),
    "jobs": (int, 1),
}

POSITIVE = {"N", "M", "n", "B", "T", "probes", "K", "warmup", "synth_c", "synth_noise",
            "synth_d", "synth_offset", "budget", "jobs"}


def _coerce(key: str, raw) -> object:
    kind, _ = CONFIG_KEYS[key]
    if raw is None or not isinstance(raw, str):
        return raw
    try:
        value = kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")
    return value


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(file_values: dict, overrides: dict) -> dict:
    cfg = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    for source in (file_values, overrides):
        for key, raw in source.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            if raw is not None:
                cfg[key] = _coerce(key, raw)
    for key in POSITIVE:
        if cfg[key] is not None and not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive, got {cfg[key]!r}")
    if cfg["method"] not in METHODS:
        raise ConfigError(f"method must be one of {sorted(METHODS)}, got {cfg['method']!r}")
    if cfg["synth"] is not None and cfg["synth"] not in SYNTH_KINDS:
        raise ConfigError(f"synth must be one of {list(SYNTH_KINDS)}, got {cfg['synth']!r}")
    if cfg["benchmark"] is not None and cfg["benchmark"] not in BENCHMARKS:
        raise ConfigError(f"benchmark must be one of {sorted(BENCHMARKS)}")
    if cfg["calibrated"] not in ("both", "true", "false"):
        raise ConfigError("calibrated must be both, true or false")
    if not 0 < cfg["alpha"] < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg["kappa"] < 0:
        raise ConfigError("kappa must be non-negative")
    return cfg


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError:
        raise ConfigError(f"seeds must be a comma-separated integer list, got {text!r}") from None
    if not seeds:
        raise ConfigError("seeds list is empty")
    return seeds


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (int, np.integer)) else repr(float(v)) for v in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _synth_params(cfg) -> dict:
    params = {k[len("synth_"):]: cfg[k] for k in CONFIG_KEYS
              if k.startswith("synth_") and cfg[k] is not None}
    params.update(warmup=cfg["warmup"], batch_size=cfg["n"], B=cfg["B"])
    return params


def cmd_stream(cfg) -> int:
    if (cfg["dataset"] is None) == (cfg["synth"] is None):
        raise ConfigError("stream needs exactly one of dataset or synth")
    if cfg["dataset"] is not None:
        if cfg["target"] is None:
            raise ConfigError("dataset runs need a target column")
        features = cfg["features"].split(",") if cfg["features"] else None
        records = load_csv(cfg["dataset"], cfg["target"], features)
        if cfg["T"] is not None:
            records = records[: cfg["T"]]
        source = {"dataset": str(cfg["dataset"]), "sha256": _sha256_file(cfg["dataset"])}
    else:
        T = cfg["T"] if cfg["T"] is not None else 5000
        params = _synth_params(cfg)
        records = synth_stream(cfg["synth"], params, cfg["seed"], T)
        ident = json.dumps({"kind": cfg["synth"], "params": params, "seed": cfg["seed"], "T": T},
                           sort_keys=True)
        source = {"synth": cfg["synth"], "params": params,
                  "sha256": hashlib.sha256(ident.encode()).hexdigest()}
    run = run_experiment(records, method=cfg["method"], N=cfg["N"], M=cfg["M"],
                         batch_size=cfg["n"], B=cfg["B"], seed=cfg["seed"],
                         warmup=cfg["warmup"], n_probes=cfg["probes"], K=cfg["K"])
    summary = run.summary()
    summary["method"] = cfg["method"]
    out = Path(cfg["out"])
    manifest = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "version": __version__,
        "command": "stream",
        "seed": cfg["seed"],
        "config": cfg,
        "input": source,
        "scaling": run.preprocessor.describe(),
        "columns": run.trace.columns,
    }
    _atomic_write(out / "trace.csv", _csv_text(run.trace.columns, run.trace.rows))
    _atomic_write(out / "summary.json", _json_text(summary))
    _atomic_write(out / "manifest.json", _json_text(manifest))
    print(f"{cfg['method']}: rounds={summary['rounds']} pit_score={summary['pit_score_G']:.4f} "
          f"raw_pit_score={summary['pit_score_F']:.4f} crps_regret={summary['crps_regret']:.4f} "
          f"coverage_gap={summary['coverage_gap']:.4f} -> {out}")
    return EXIT_OK


BO_COLUMNS = ("iteration", "y", "best")


def _mean_se(values) -> dict:
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "se": se, "n": int(v.size), "final_best": v.tolist()}


def cmd_bo(cfg) -> int:
    if cfg["benchmark"] is None:
        raise ConfigError("bo needs a benchmark")
    fn = get_benchmark(cfg["benchmark"])
    T = cfg["T"] if cfg["T"] is not None else (30 if fn.dim <= 2 else 60)
    seeds = _seed_list(cfg["seeds"])
    flags = {"both": (False, True), "true": (True,), "false": (False,)}[cfg["calibrated"]]
    jobs = [(s, c) for s in seeds for c in flags]

    def one(job):
        seed, cal = job
        return bo_run(fn, T, seed, cal, kappa=cfg["kappa"], alpha=cfg["alpha"],
                      budget=cfg["budget"])

    with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
        results = list(pool.map(one, jobs))
    out = Path(cfg["out"])
    finals = {c: [] for c in flags}
    n_init = None
    for res in results:
        n_init = res.y.size - len(res.best)
        rows = [(i + 1, res.y[n_init + i], b) for i, b in enumerate(res.best)]
        tag = "calibrated" if res.calibrated else "uncalibrated"
        _atomic_write(out / f"bo_{fn.name}_seed{res.seed}_{tag}.csv", _csv_text(BO_COLUMNS, rows))
        finals[res.calibrated].append(res.final_best)
    summary = {"benchmark": fn.name, "T": T, "seeds": seeds,
               "aborted": sum(r.aborted for r in results)}
    for cal, vals in finals.items():
        summary["calibrated" if cal else "uncalibrated"] = _mean_se(vals)
    manifest = {"schema_version": TRACE_SCHEMA_VERSION, "version": __version__, "command": "bo",
                "seed": seeds, "config": cfg, "columns": list(BO_COLUMNS)}
    _atomic_write(out / "summary.json", _json_text(summary))
    _atomic_write(out / "manifest.json", _json_text(manifest))
    for cal in flags:
        s = summary["calibrated" if cal else "uncalibrated"]
        print(f"{fn.name} {'calibrated' if cal else 'uncalibrated'}: "
              f"{s['mean']:.3f} ({s['se']:.3f}) over {s['n']} seeds")
    return EXIT_OK


REPORT_KEYS = ("method", "rounds", "pit_score_G", "pit_score_F", "crps_mean_G",
               "crps_mean_F", "crps_regret", "coverage_gap", "calib_error_max")


def validate_trace(path) -> int:
    """Check a trace file's header and rows; returns the number of data rows."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open trace: {exc.strerror}", path=str(path)) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError("empty trace", path=str(path))
        n_probes = len(header) - len(trace_columns(0))
        if n_probes < 0 or header != trace_columns(n_probes):
            raise DataError("unrecognized trace header", row=0, path=str(path))
        count = 0
        for row, cells in enumerate(reader, start=1):
            if len(cells) != len(header):
                raise DataError(f"expected {len(header)} cells, found {len(cells)}",
                                row=row, path=str(path))
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise DataError("non-numeric cell", row=row, path=str(path)) from None
            if values[0] != row:
                raise DataError(f"round index {cells[0]} out of sequence", row=row, path=str(path))
            count += 1
    return count


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read: {exc.strerror}", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc.msg}", row=exc.lineno, path=str(path)) from None


def cmd_report(paths, out) -> int:
    if not paths:
        raise ConfigError("report needs at least one trace")
    table = []
    for p in map(Path, paths):
        rows = validate_trace(p)
        manifest = _load_json(p.parent / "manifest.json")
        version = manifest.get("schema_version")
        if version != TRACE_SCHEMA_VERSION:
            raise DataError(f"trace schema version {version!r}, expected {TRACE_SCHEMA_VERSION}",
                            path=str(p))
        summary = _load_json(p.parent / "summary.json")
        if summary.get("rounds") != rows:
            raise DataError(f"trace has {rows} rows but summary reports {summary.get('rounds')}",
                            path=str(p))
        missing = [k for k in REPORT_KEYS if k not in summary]
        if missing:
            raise DataError(f"summary lacks {missing}", path=str(p.parent / "summary.json"))
        table.append({"trace": str(p), **{k: summary[k] for k in REPORT_KEYS}})
    widths = [max(len(str(k)), 12) for k in REPORT_KEYS]
    print("  ".join(k.ljust(w) for k, w in zip(REPORT_KEYS, widths)) + "  trace")
    for entry in table:
        cells = [f"{v:.4f}" if isinstance(v, float) else str(v) for v in
                 (entry[k] for k in REPORT_KEYS)]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)) + "  " + entry["trace"])
    if out is not None:
        _atomic_write(Path(out), _json_text({"schema_version": TRACE_SCHEMA_VERSION,
                                             "rows": table}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onlinecal",
                                     description="Online calibrated regression experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--rounds", dest="T", help="stream length or BO iterations")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")

    s = sub.add_parser("stream", help="run one streaming recalibration experiment")
    common(s)
    s.add_argument("--method", choices=sorted(METHODS))
    s.add_argument("--dataset", help="CSV file with a header row")
    s.add_argument("--target")
    s.add_argument("--features", help="comma-separated feature columns")
    s.add_argument("--synth", choices=SYNTH_KINDS)
    s.add_argument("--batch-size", dest="n")
    s.add_argument("--resolution", dest="N", help="calibration grid size N")

    b = sub.add_parser("bo", help="paired plain vs recalibrated Bayesian optimization")
    common(b)
    b.add_argument("--benchmark", choices=sorted(BENCHMARKS))
    b.add_argument("--seeds", help="comma-separated seeds")
    b.add_argument("--calibrated", choices=("both", "true", "false"))

    r = sub.add_parser("report", help="compare finished stream runs")
    r.add_argument("traces", nargs="+", help="trace.csv files (summary and manifest alongside)")
    r.add_argument("--out", help="machine-readable comparison file (JSON)")
    return parser


def _overrides(args) -> dict:
    skip = {"command", "config", "set", "verbose"}
    out = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.traces, args.out)
        file_values = read_config_file(args.config) if args.config else {}
        cfg = build_config(file_values, _overrides(args))
        return cmd_stream(cfg) if args.command == "stream" else cmd_bo(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OnlineCalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
