"""Command-line experiment runner.

    dualhsic run <config.toml> [--seed N ...] [--override key=value ...]
    dualhsic sweep <config.toml> --axis <dotted.key> --values <v1,v2,...>
    dualhsic export-embeddings <checkpoint.npz> <data.csv> <out.csv>
    dualhsic validate <results.jsonl>

Outputs go to ``--out``, else ``$DUALHSIC_OUTPUT_DIR``, else ``./results``.
``run`` writes ``<stem>.jsonl`` plus one ``<stem>.seed<N>.ckpt.npz`` per seed;
``sweep`` writes ``<stem>.<axis>=<value>.jsonl`` per value and a summary in
``<stem>.sweep.csv`` / ``<stem>.sweep.json`` naming the best value by mean A_T.
Exit status: 0 success, 2 bad input (config, data, checkpoint), 3 training
diverged.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, atomic_write_bytes, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, get_dotted, parse_value
from .data import DatasetFormatError, read_csv_table
from .network import TrainingDivergenceError, forward
from .results import ResultsError, build_records, run_seeds, summarize, validate_file, write_records

OUTPUT_ENV = "DUALHSIC_OUTPUT_DIR"
EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("dualhsic")


class UsageError(ValueError):
    pass


def output_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "results")


def split_values(text: str) -> list:
    """Split a comma list, keeping commas inside brackets, and parse each item as TOML."""
    items, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            items.append(cur)
            cur = ""
            continue
        depth += ch in "[{"
        depth -= ch in "]}"
        cur += ch
    items.append(cur)
    return [parse_value(v.strip()) for v in items if v.strip()]


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, args.override)
    if args.seed:
        cfg = cfg.with_value("seeds", list(args.seed))
    return cfg


def _slug(value) -> str:
    return str(value).replace(" ", "").replace("/", "_")


def cmd_run(args) -> int:
    cfg = _load(args)
    out = output_dir(args.out)
    stem = args.name or Path(args.config).stem
    results = run_seeds(cfg)
    outputs = {"results": str(out / f"{stem}.jsonl")}
    if not args.no_checkpoint:
        ckpts = {}
        for r in results:
            path = out / f"{stem}.seed{r.seed}.ckpt.npz"
            save_checkpoint(
                path, r.state.params, r.state.head, r.stream.mean, r.stream.std,
                r.stream.classes_per_task, r.state.buffer, cfg.to_dict(),
            )
            ckpts[str(r.seed)] = str(path)
        outputs["checkpoints"] = ckpts
    write_records(out / f"{stem}.jsonl", build_records(cfg, results, outputs, label=stem))
    s = summarize(results)
    print(f"{stem}: A_T {s['average_accuracy_mean']:.4f} ± {s['average_accuracy_std']:.4f}", end="")
    if s["forgetting_mean"] is not None:
        print(f"  F_T {s['forgetting_mean']:.4f} ± {s['forgetting_std']:.4f}", end="")
    print(f"  -> {outputs['results']}")
    return EXIT_OK


def sweep(cfg: ExperimentConfig, axis: str, values: list, out: Path, stem: str) -> dict:
    """Run every seed at every axis value; returns the summary written next to the results."""
    if not values:
        raise UsageError("sweep needs at least one value")
    try:
        get_dotted(cfg.raw, axis)
    except (KeyError, TypeError):
        raise ConfigError(f"unknown sweep axis {axis!r}") from None
    rows = []
    for value in values:
        point = cfg.with_value(axis, value)
        results = run_seeds(point)
        path = out / f"{stem}.{axis}={_slug(value)}.jsonl"
        write_records(path, build_records(point, results, {"results": str(path)}, label=f"{axis}={value}"))
        rows.append({"value": value, "results": str(path), **summarize(results)})
        log.info("%s=%s A_T %.4f", axis, value, rows[-1]["average_accuracy_mean"])
    best = max(rows, key=lambda r: r["average_accuracy_mean"])
    summary = {
        "axis": axis,
        "values": values,
        "seeds": cfg.seeds,
        "best_value": best["value"],
        "rows": rows,
    }
    doc = {"config": cfg.to_dict(), "created": datetime.now(timezone.utc).isoformat(timespec="seconds"), **summary}
    atomic_write_bytes(out / f"{stem}.sweep.json", (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([axis, "A_T_mean", "A_T_std", "F_T_mean", "F_T_std", "seeds", "results"])
    for r in rows:
        w.writerow([r["value"], r["average_accuracy_mean"], r["average_accuracy_std"], r["forgetting_mean"], r["forgetting_std"], r["num_seeds"], r["results"]])
    atomic_write_bytes(out / f"{stem}.sweep.csv", buf.getvalue().encode())
    return summary


def cmd_sweep(args) -> int:
    values = split_values(args.values)
    if not values:
        raise UsageError("--values is empty")
    cfg = _load(args)
    out = output_dir(args.out)
    summary = sweep(cfg, args.axis, values, out, args.name or Path(args.config).stem)
    for r in summary["rows"]:
        print(f"{args.axis}={r['value']}: A_T {r['average_accuracy_mean']:.4f}  F_T {r['forgetting_mean']}")
    print(f"best {args.axis} = {summary['best_value']}")
    return EXIT_OK


def export_embeddings(checkpoint, data, out) -> int:
    """Write last-hidden-layer features of ``data`` as CSV (z_1..z_d, label, task_id); returns row count."""
    ckpt = load_checkpoint(checkpoint)
    x, y, task_ids, _ = read_csv_table(data)
    spec = ckpt.params.spec
    if x.shape[1] != spec.input_dim:
        raise CheckpointError(f"data has {x.shape[1]} features but the checkpoint expects {spec.input_dim}")
    if ckpt.mean is not None:
        x = (x - ckpt.mean) / ckpt.std
    if task_ids is None:
        per = ckpt.classes_per_task or spec.num_classes
        task_ids = y // per
    z = forward(ckpt.params, x).hidden[-1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"z_{i + 1}" for i in range(z.shape[1])] + ["label", "task_id"])
    for row, label, tid in zip(z, y, task_ids):
        w.writerow([repr(float(v)) for v in row] + [int(label), int(tid)])
    atomic_write_bytes(Path(out), buf.getvalue().encode())
    return len(z)


def cmd_export(args) -> int:
    n = export_embeddings(args.checkpoint, args.data, args.out)
    print(f"wrote {n} embeddings to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    records = validate_file(args.results)
    print(f"{args.results}: {len(records)} records OK")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualhsic", description="DualHSIC continual-learning experiments")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, action="append", help="seed to run (repeatable); overrides config seeds")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
        sp.add_argument("--name", help="output file stem (default: config file stem)")

    r = sub.add_parser("run", help="run an experiment for each seed")
    common(r)
    r.add_argument("--no-checkpoint", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run an experiment per value of one config key")
    common(s)
    s.add_argument("--axis", required=True)
    s.add_argument("--values", required=True, help="comma-separated TOML literals")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("export-embeddings", help="dump last-layer features for a CSV dataset")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("out")
    e.set_defaults(func=cmd_export)

    v = sub.add_parser("validate", help="schema-check a results file and recompute its metrics")
    v.add_argument("results")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError, DatasetFormatError, CheckpointError, ResultsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
