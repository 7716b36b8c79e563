"""metrics.csv / summary.json reading and writing."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Optional, Sequence

from .trainer import MetricsRecord

COLUMNS = ("step", "think_fraction", "acc_short", "acc_think", "all_correct_short", "mean_reward",
           "objective", "kl", "think_frac_easy", "think_frac_medium", "think_frac_hard")
PROFILE_COLUMNS = {"easy": "think_frac_easy", "medium": "think_frac_medium", "hard": "think_frac_hard"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def metrics_row(rec: MetricsRecord) -> list:
    prof = rec.think_fraction_by_profile
    return [_fmt(rec.step), _fmt(rec.think_fraction), _fmt(rec.acc_short), _fmt(rec.acc_think),
            _fmt(rec.all_correct_short), _fmt(rec.mean_reward), _fmt(rec.objective_value), _fmt(rec.kl),
            _fmt(prof.get("easy")), _fmt(prof.get("medium")), _fmt(prof.get("hard"))]


class MetricsWriter:
    """Appends one row per step; flushes so partial runs stay readable."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "x", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(COLUMNS)

    def write(self, rec: MetricsRecord) -> None:
        self._w.writerow(metrics_row(rec))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def metrics_csv_text(records: Sequence[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for rec in records:
        w.writerow(metrics_row(rec))
    return buf.getvalue()


class MalformedMetrics(ValueError):
    pass


def read_metrics(path) -> list:
    """Rows as dicts of floats (None for empty fields); ``step`` and counts as int."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise MalformedMetrics(f"{path}:1: header does not match the metrics schema")
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(COLUMNS):
                raise MalformedMetrics(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(raw)}")
            row = {}
            for key, text in zip(COLUMNS, raw):
                if text == "":
                    if key in ("step", "think_fraction", "all_correct_short"):
                        raise MalformedMetrics(f"{path}:{lineno}: {key} may not be empty")
                    row[key] = None
                    continue
                try:
                    row[key] = int(text) if key in ("step", "all_correct_short") else float(text)
                except ValueError:
                    raise MalformedMetrics(f"{path}:{lineno}: {key}={text!r} is not a number") from None
            rows.append(row)
    return rows


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def summarize(records: Sequence[MetricsRecord], last_k: int = 50) -> dict:
    tail = list(records[-last_k:])
    if not tail:
        return {"steps": 0}

    def avg(values):
        vals = [v for v in values if v is not None and not math.isnan(v)]
        return sum(vals) / len(vals) if vals else None

    last = tail[-1]
    return {
        "steps": len(records),
        "final": {"think_fraction": last.think_fraction, "acc_short": last.acc_short,
                  "acc_think": last.acc_think, "all_correct_short": last.all_correct_short,
                  "mean_reward": last.mean_reward},
        f"last_{len(tail)}_mean": {
            "think_fraction": avg(r.think_fraction for r in tail),
            "acc_short": avg(r.acc_short for r in tail),
            "acc_think": avg(r.acc_think for r in tail),
            "all_correct_short": avg(float(r.all_correct_short) for r in tail),
            "mean_reward": avg(r.mean_reward for r in tail),
            "kl": avg(r.kl for r in tail),
        },
    }


def unique_path(path) -> Path:
    """``path`` if free, else ``path-1``, ``path-2``, ... (suffix kept for files)."""
    path = Path(path)
    if not path.exists():
        return path
    stem, suffix = (path.stem, path.suffix) if path.suffix else (path.name, "")
    i = 1
    while True:
        cand = path.with_name(f"{stem}-{i}{suffix}")
        if not cand.exists():
            return cand
        i += 1


def first_crossing(values: Sequence[int], threshold: float) -> Optional[int]:
    """Index of the first value strictly above ``threshold``, or None."""
    for i, v in enumerate(values):
        if v > threshold:
            return i
    return None
