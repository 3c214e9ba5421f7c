"""Line-delimited JSON results files.

A results file holds one ``manifest`` record (the exact config, seeds and
output paths), one ``task`` record per seed and task, one ``seed_summary``
per seed and a closing ``footer`` with the across-seed means.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .checkpoint import atomic_write_bytes
from .config import ExperimentConfig
from .trainer import AccuracyMatrix, RunResult, average_accuracy, forgetting, run_experiment

VOLATILE_KEYS = ("created", "timings")


class ResultsError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("dualhsic").joinpath("schemas/results.schema.json").read_text())


def run_seeds(cfg: ExperimentConfig, seeds=None) -> list[RunResult]:
    return [run_experiment(cfg, seed=s) for s in (seeds if seeds is not None else cfg.seeds)]


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def summarize(results: list[RunResult]) -> dict:
    a_mean, a_std = _mean_std([r.final_average_accuracy for r in results])
    f_mean, f_std = _mean_std([r.final_forgetting for r in results])
    return {
        "average_accuracy_mean": a_mean,
        "average_accuracy_std": a_std,
        "forgetting_mean": f_mean,
        "forgetting_std": f_std,
        "num_seeds": len(results),
    }


def build_records(cfg: ExperimentConfig, results: list[RunResult], outputs: dict | None = None, label: str = "", extra: dict | None = None) -> list[dict]:
    manifest = {
        "type": "manifest",
        "artifact_version": __version__,
        "label": label,
        "config": cfg.to_dict(),
        "seeds": [r.seed for r in results],
        "outputs": outputs or {},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        manifest.update(extra)
    records = [manifest]
    for r in results:
        for rec in r.task_records():
            records.append({"type": "task", "seed": r.seed, **rec})
        records.append(
            {
                "type": "seed_summary",
                "seed": r.seed,
                "accuracy_matrix": r.accuracy.to_list(),
                "average_accuracy": r.final_average_accuracy,
                "forgetting": r.final_forgetting,
                "timings": r.timings,
            }
        )
    records.append({"type": "footer", **summarize(results)})
    return records


def _clean(obj):
    if isinstance(obj, float) and np.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def write_records(path, records: list[dict]) -> Path:
    path = Path(path)
    text = "".join(json.dumps(_clean(r), sort_keys=True) + "\n" for r in records)
    atomic_write_bytes(path, text.encode())
    return path


def read_records(path) -> list[dict]:
    path = Path(path)
    out = []
    for i, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ResultsError(f"{path}:{i}: invalid JSON ({exc})") from None
    return out


def strip_volatile(records: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k not in VOLATILE_KEYS} for r in records]


def _matrix_from_rows(rows) -> AccuracyMatrix:
    T = len(rows)
    m = AccuracyMatrix(T)
    for t, row in enumerate(rows, start=1):
        vals = [np.nan if v is None else v for v in row]
        if vals and not all(np.isnan(vals)):
            m.set_row(t, vals)
    return m


def validate_records(records: list[dict]) -> None:
    """Schema-check every record and recompute each seed's metrics from its stored matrix.

    Raises :class:`ResultsError` on the first problem.
    """
    schema = load_schema()
    if not records or records[0].get("type") != "manifest":
        raise ResultsError("first record must be the manifest")
    if records[-1].get("type") != "footer":
        raise ResultsError("last record must be the footer")
    for i, rec in enumerate(records):
        try:
            jsonschema.validate(rec, schema)
        except jsonschema.ValidationError as exc:
            raise ResultsError(f"record {i} ({rec.get('type')}): {exc.message}") from None
    summaries = [r for r in records if r["type"] == "seed_summary"]
    if sorted(r["seed"] for r in summaries) != sorted(records[0]["seeds"]):
        raise ResultsError("seed summaries do not match the manifest's seed list")
    for s in summaries:
        S = _matrix_from_rows(s["accuracy_matrix"])
        T = S.num_tasks
        a = average_accuracy(S, T)
        if a != s["average_accuracy"]:
            raise ResultsError(f"seed {s['seed']}: stored A_T {s['average_accuracy']} != recomputed {a}")
        f = forgetting(S, T) if T >= 2 and not np.isnan(S.values[0, 0]) else None
        if f != s["forgetting"]:
            raise ResultsError(f"seed {s['seed']}: stored F_T {s['forgetting']} != recomputed {f}")
    footer = records[-1]
    a_mean, _ = _mean_std([s["average_accuracy"] for s in summaries])
    if footer["average_accuracy_mean"] != a_mean:
        raise ResultsError("footer mean accuracy does not match the seed summaries")


def validate_file(path) -> list[dict]:
    records = read_records(path)
    validate_records(records)
    return records
