"""Run records: one directory per run with a JSON manifest and CSV tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Check", "RunRecord", "canonical_json", "input_hash", "table_csv", "save_record", "load_record"]

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))


def _plain(obj):
    """Numpy scalars and containers to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


@dataclass
class RunRecord:
    config: dict
    master_seed: int
    replica_seeds: list
    tables: dict
    summary: dict
    checks: list
    meta: dict = field(default_factory=dict)

    @property
    def content_hash(self) -> str:
        return input_hash(self.config, self.master_seed)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def manifest(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "config": self.config,
            "master_seed": self.master_seed,
            "replica_seeds": self.replica_seeds,
            "input_hash": self.content_hash,
            "summary": _plain(self.summary),
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
            "tables": sorted(self.tables),
            "table_sha256": {k: hashlib.sha256(table_csv(v).encode()).hexdigest() for k, v in sorted(self.tables.items())},
            "meta": self.meta,
        }


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def input_hash(config: dict, seed: int) -> str:
    return hashlib.sha256(canonical_json({"config": config, "seed": seed, "format": FORMAT_VERSION}).encode()).hexdigest()


def _cell(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return v


def table_csv(rows) -> str:
    rows = list(rows)
    buf = io.StringIO()
    if not rows:
        return ""
    names = list(rows[0].keys())
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for r in rows:
        w.writerow([_cell(r[n]) for n in names])
    return buf.getvalue()


def _read_table(text: str) -> list:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({k: _parse_cell(v) for k, v in r.items()})
    return rows


def _parse_cell(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def save_record(record: RunRecord, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    record.meta.setdefault("saved_at", time.strftime("%Y-%m-%dT%H:%M:%S"))
    record.meta.setdefault("python", platform.python_version())
    (d / "manifest.json").write_text(json.dumps(record.manifest(), sort_keys=True, indent=2, allow_nan=True))
    for name, rows in record.tables.items():
        (d / f"{name}.csv").write_text(table_csv(rows))
    return d


def load_record(directory) -> RunRecord:
    d = Path(directory)
    if d.is_file():
        d = d.parent
    m = json.loads((d / "manifest.json").read_text())
    tables = {name: _read_table((d / f"{name}.csv").read_text()) for name in m["tables"]}
    checks = [Check(c["name"], c["passed"], c.get("detail", "")) for c in m["checks"]]
    rec = RunRecord(m["config"], m["master_seed"], m["replica_seeds"], tables, m["summary"], checks, m.get("meta", {}))
    rec.meta["table_sha256"] = m.get("table_sha256", {})
    rec.meta["disk_sha256"] = {name: hashlib.sha256((d / f"{name}.csv").read_bytes()).hexdigest() for name in m["tables"]}
    return rec
