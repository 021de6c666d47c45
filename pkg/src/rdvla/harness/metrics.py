"""Append-only metrics CSV with a fixed header, plus a JSON summary sidecar."""

from __future__ import annotations

import csv
import json
import os

HEADER = ["run_id", "step", "tier", "seed", "success", "k_star", "exec_horizon", "loss", "wall_time"]


class MetricsWriter:
    """Single writer; every row is flushed and fsynced so a crash loses at most one row."""

    def __init__(self, path, run_id, extra_columns=()):
        self.path = path
        self.run_id = run_id
        self.columns = HEADER + list(extra_columns)
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        self._fh = open(path, "a", newline="")
        self._w = csv.DictWriter(self._fh, fieldnames=self.columns, restval="", extrasaction="raise")
        if fresh:
            self._w.writeheader()
            self._flush()
        self.rows = 0

    def _flush(self):
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def write(self, **row):
        row.setdefault("run_id", self.run_id)
        self._w.writerow({k: _fmt(v) for k, v in row.items()})
        self._flush()
        self.rows += 1

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
