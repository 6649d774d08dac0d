"""Run reports: accuracy matrix plus memory/compute accounting, CSV and JSON output."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


@dataclass
class RunReport:
    strategy: str
    config_hash: str
    seed: int
    # accuracy[a][o]: accuracy on task o+1's test set after learning task a+1 (o <= a)
    accuracy: list[list[float]] = field(default_factory=list)
    # accuracy on the union of test sets 1..a+1, i.e. over every class seen so far
    cumulative: list[float] = field(default_factory=list)
    test_counts: list[int] = field(default_factory=list)
    stored_bytes: list[int] = field(default_factory=list)
    occupied_bytes: list[int] = field(default_factory=list)
    memory_entries: list[int] = field(default_factory=list)
    memory_capacity: int = 0
    samples_processed: list[int] = field(default_factory=list)
    wall_seconds: float | None = None
    schema_version: int = SCHEMA_VERSION

    @property
    def final_accuracy(self) -> float:
        return self.cumulative[-1] if self.cumulative else float("nan")

    @property
    def n_tasks(self) -> int:
        return len(self.accuracy)

    def check(self) -> None:
        for a, row in enumerate(self.accuracy):
            if len(row) != a + 1:
                raise ValueError(f"accuracy row {a + 1} has {len(row)} entries, expected {a + 1}")
            if any(not 0.0 <= v <= 1.0 for v in row):
                raise ValueError(f"accuracy outside [0, 1] in row {a + 1}")

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        d["final_accuracy"] = self.final_accuracy
        if not timing:
            d["wall_seconds"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def report_json(report: RunReport, timing: bool = True) -> str:
    return json.dumps(report.to_dict(timing), indent=2, sort_keys=True) + "\n"


def report_csv(report: RunReport) -> str:
    T = report.n_tasks
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["after_task"] + [f"on_task_{k}" for k in range(1, T + 1)] + ["final"])
    for a, row in enumerate(report.accuracy):
        cells = [repr(float(v)) for v in row] + [""] * (T - len(row))
        w.writerow([a + 1] + cells + [repr(float(report.cumulative[a]))])
    return buf.getvalue()


def emit_report(report: RunReport, path, fmt: str | None = None, timing: bool = True) -> Path:
    """Write ``report`` as CSV (accuracy matrix) or JSON (everything)."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported report format {fmt!r}")
    text = report_csv(report) if fmt == "csv" else report_json(report, timing)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))


def final_from_csv(path) -> float:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return float(rows[-1]["final"])


def mean_sem(values) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(n)); SEM is 0 for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    sem = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), sem


def aggregate(finals: dict[str, list[float]]) -> list[dict]:
    rows = []
    for strategy in sorted(finals):
        mean, sem = mean_sem(finals[strategy])
        rows.append({"strategy": strategy, "runs": len(finals[strategy]), "mean": mean, "sem": sem})
    return rows


def summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "runs", "mean_accuracy", "sem"])
    for r in rows:
        w.writerow([r["strategy"], r["runs"], f"{100 * r['mean']:.2f}", f"{100 * r['sem']:.2f}"])
    return buf.getvalue()
