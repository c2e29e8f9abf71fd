"""
DDReason Metric Log
Append-only CSV logs for training curves and evaluation results.
"""

import csv
import math
import os
from typing import Dict, Iterable, List, Optional, Sequence

from logger import log


def format_value(value) -> str:
    """Floats use the shortest round-trip form so reruns compare byte for byte."""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


class MetricLog:
    """CSV file with a fixed header. Rows are only ever appended."""

    def __init__(self, path: str, fields: Sequence[str]):
        self.path = path
        self.fields = list(fields)
        self._init_file()

    def _init_file(self):
        if os.path.exists(self.path) and os.path.getsize(self.path) > 0:
            with open(self.path, "r", encoding="utf-8", newline="") as f:
                header = next(csv.reader(f), [])
            if header != self.fields:
                log.warning(f"Metric log {self.path} has header {header}, expected {self.fields}")
            return
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "w", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(self.fields)

    def append(self, **row):
        missing = [k for k in self.fields if k not in row]
        if missing:
            raise KeyError(f"metric row missing fields {missing}")
        with open(self.path, "a", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow([format_value(row[k]) for k in self.fields])

    def rows(self) -> List[Dict[str, str]]:
        return read_rows(self.path)

    def truncate_after(self, epoch: int):
        """Drop rows logged after `epoch` (used when resuming from an earlier checkpoint)."""
        kept = [r for r in self.rows() if int(r["epoch"]) <= epoch]
        with open(self.path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self.fields)
            for r in kept:
                writer.writerow([r[k] for k in self.fields])


def read_rows(path: str) -> List[Dict[str, str]]:
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def write_table(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow(["" if v is None else format_value(v) for v in row])
    return path


def column(rows: Iterable[Dict[str, str]], name: str, default: Optional[float] = None) -> List[float]:
    return [float(r[name]) if r.get(name) not in (None, "") else default for r in rows]
