"""Command-line interface: run, grid, table, validate.

Exit codes: 0 success, 1 config error, 2 at least one grid run failed.
Grid CSV output is deterministic; wall-clock timing is only written when
--timing is passed so that re-runs of the same manifest stay byte-identical.
"""

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import yaml

from .config import ConfigError, ExperimentConfig, config_from_dict, config_hash, config_to_dict, parse_config
from .protocol import run_experiment

CSV_COLUMNS = [
    "config",
    "config_hash",
    "seed",
    "rule",
    "attack",
    "max_mse",
    "max_ter",
    "max_asr",
    "consensus_error",
    "messages_total",
    "scalars_total",
    "status",
    "runtime_s",
]

NUMERIC_COLUMNS = ["max_mse", "max_ter", "max_asr", "consensus_error", "messages_total", "scalars_total"]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def _row_for(name, cfg, seed, result=None, error=None, runtime=None, timing=False):
    row = {c: "" for c in CSV_COLUMNS}
    row.update(
        config=name,
        config_hash=config_hash(cfg),
        seed=str(seed),
        rule=cfg.aggregator.rule,
        attack=cfg.attack.kind,
        status="ok" if error is None else "failed",
    )
    if result is not None:
        m = result.metrics
        row["max_mse"] = _fmt(m.max_mse)
        row["max_ter"] = _fmt(m.max_ter)
        row["max_asr"] = _fmt(m.max_asr)
        row["consensus_error"] = _fmt(m.consensus_error)
        row["messages_total"] = _fmt(int(result.messages_per_client.sum()))
        row["scalars_total"] = _fmt(int(result.messages_per_client.sum()) * result.final_models.shape[1])
    if timing and runtime is not None:
        row["runtime_s"] = format(runtime, ".3f")
    return row


def _aggregate_row(name, cfg, rows):
    ok = [r for r in rows if r["status"] == "ok"]
    agg = {c: "" for c in CSV_COLUMNS}
    agg.update(
        config=name,
        config_hash=config_hash(cfg),
        seed="mean",
        rule=cfg.aggregator.rule,
        attack=cfg.attack.kind,
        status="ok" if len(ok) == len(rows) else "failed",
    )
    for col in NUMERIC_COLUMNS:
        vals = [float(r[col]) for r in ok if r[col] != ""]
        if vals:
            agg[col] = _fmt(sum(vals) / len(vals))
    return agg


def _load_grid(path):
    """Yield (name, config) pairs from a config directory or a grid file.

    A grid file holds a `base` config plus a `runs` list of named override
    mappings (merged into the base section by section).
    """
    entries = []
    if os.path.isdir(path):
        for fname in sorted(os.listdir(path)):
            if fname.endswith((".yaml", ".yml")):
                entries.append((os.path.splitext(fname)[0], parse_config(os.path.join(path, fname))))
        if not entries:
            raise ConfigError(f"no config files found in {path}")
        return entries
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "runs" not in raw:
        # plain single config file
        return [(os.path.splitext(os.path.basename(path))[0], config_from_dict(raw))]
    base = raw.get("base") or {}
    for i, run in enumerate(raw["runs"]):
        if not isinstance(run, dict):
            raise ConfigError(f"runs[{i}]: expected a mapping")
        name = run.pop("name", f"run{i:03d}")
        merged = _deep_merge(base, run)
        entries.append((str(name), config_from_dict(merged)))
    return entries


def _deep_merge(base, override):
    out = {k: (v.copy() if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def _run_entry(args):
    name, cfg_dict, seed, timing = args
    cfg = config_from_dict(cfg_dict)
    cfg.seed = seed
    start = time.perf_counter()
    try:
        result = run_experiment(cfg)
        return _row_for(name, cfg, seed, result=result, runtime=time.perf_counter() - start, timing=timing)
    except Exception as exc:  # a failed run must not sink the grid
        sys.stderr.write(f"run {name} seed {seed} failed: {exc}\n")
        return _row_for(name, cfg, seed, error=exc, timing=timing)


def run_grid(entries, seeds, out_path, jobs=1, timing=False) -> int:
    """Run every (config, seed) pair; write per-run rows plus mean rows."""
    tasks = []
    for name, cfg in entries:
        for seed in seeds:
            tasks.append((name, config_to_dict(cfg), seed, timing))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_entry, tasks))
    else:
        rows = [_run_entry(t) for t in tasks]
    by_config = {}
    for (name, _cfg, _seed, _), row in zip(tasks, rows):
        by_config.setdefault(name, []).append(row)
    out_rows = []
    for name, cfg in entries:
        out_rows.extend(by_config[name])
        out_rows.append(_aggregate_row(name, cfg, by_config[name]))
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(out_rows)
    failed = any(r["status"] == "failed" for r in out_rows)
    return 2 if failed else 0


def emit_table(csv_path, rows_key="rule", cols_key="attack", value="max_mse", spec_path=None) -> str:
    """Render aggregate grid rows as an aligned rules-by-attacks text table."""
    if spec_path:
        with open(spec_path) as fh:
            spec = yaml.safe_load(fh) or {}
        rows_key = spec.get("rows", rows_key)
        cols_key = spec.get("cols", cols_key)
        value = spec.get("value", value)
        row_order = spec.get("row_order")
        col_order = spec.get("col_order")
    else:
        row_order = col_order = None
    cells = {}
    with open(csv_path, newline="") as fh:
        for record in csv.DictReader(fh):
            if record.get("seed") != "mean":
                continue
            key = (record[rows_key], record[cols_key])
            cells[key] = record.get(value, "")
    rows = row_order or sorted({r for r, _ in cells})
    cols = col_order or sorted({c for _, c in cells})

    def fmt_cell(raw):
        if raw in ("", None):
            return "—"
        v = float(raw)
        if v > 100:
            return ">100"
        return f"{v:.2f}"

    header = [rows_key] + list(cols)
    body = [[r] + [fmt_cell(cells.get((r, c), "")) for c in cols] for r in rows]
    widths = [max(len(str(line[j])) for line in [header] + body) for j in range(len(header))]
    lines = []
    for line in [header] + body:
        lines.append("  ".join(str(cell).ljust(widths[j]) for j, cell in enumerate(line)).rstrip())
    return "\n".join(lines) + "\n"


def _write_manifest(out_dir, entries, seeds, csv_path):
    manifest = {
        "version": "dflsim-0.1.0",
        "seeds": list(seeds),
        "output": os.path.basename(csv_path),
        "configs": {name: config_hash(cfg) for name, cfg in entries},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dflsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="", help="directory for result.json")
    p_run.add_argument("--workers", type=int, default=1, help="engine worker threads")

    p_grid = sub.add_parser("grid", help="run a config directory or grid file over seeds")
    p_grid.add_argument("path")
    p_grid.add_argument("--seeds", type=int, default=10, help="number of seeds (0..k-1)")
    p_grid.add_argument("--out", default="grid.csv")
    p_grid.add_argument("--jobs", type=int, default=int(os.environ.get("DFLSIM_WORKERS", "1")))
    p_grid.add_argument("--timing", action="store_true", help="record wall-clock runtime per row")

    p_table = sub.add_parser("table", help="render a grid CSV as a text table")
    p_table.add_argument("csv")
    p_table.add_argument("--spec", default=None, help="YAML table spec (rows/cols/value/orders)")
    p_table.add_argument("--value", default="max_mse")

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("config")

    args = parser.parse_args(argv)

    try:
        if args.command == "validate":
            parse_config(args.config)
            print("ok")
            return 0
        if args.command == "run":
            cfg = parse_config(args.config)
            result = run_experiment(cfg, workers=args.workers)
            payload = {
                "config_hash": config_hash(cfg),
                "metrics": {
                    "max_mse": result.metrics.max_mse,
                    "max_ter": result.metrics.max_ter,
                    "avg_ter": result.metrics.avg_ter,
                    "max_asr": result.metrics.max_asr,
                    "consensus_error": result.metrics.consensus_error,
                },
                "messages_total": int(result.messages_per_client.sum()),
                "metadata": result.metadata,
            }
            text = json.dumps(payload, indent=2, sort_keys=True, default=str)
            print(text)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                with open(os.path.join(args.out, "result.json"), "w") as fh:
                    fh.write(text + "\n")
            return 0
        if args.command == "grid":
            entries = _load_grid(args.path)
            seeds = list(range(args.seeds))
            out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
            os.makedirs(out_dir, exist_ok=True)
            code = run_grid(entries, seeds, args.out, jobs=args.jobs, timing=args.timing)
            _write_manifest(out_dir, entries, seeds, args.out)
            return code
        if args.command == "table":
            print(emit_table(args.csv, value=args.value, spec_path=args.spec), end="")
            return 0
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
