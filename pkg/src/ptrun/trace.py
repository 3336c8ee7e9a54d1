"""Versioned JSONL run traces: one record object per line.

A trace is self-contained: the header embeds the task, metadata, full run
configuration, and the tool environment description, so every deterministic
stage can be recomputed from the trace alone.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

SCHEMA_VERSION = 1

# Keys dropped before structural comparison: wall-clock and output-location
# metadata, never semantic content.
VOLATILE_KEYS = ("wall_time", "timing", "trace_path")


class TraceSchemaError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


class TraceWriter:
    """Collects records in memory and, when given a path, appends JSONL lines."""

    def __init__(self, path: str | Path | None = None):
        self.path = str(path) if path else None
        self.records: list[dict] = []
        self._fh = open(self.path, "w", encoding="utf-8") if self.path else None

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def read_trace(source: str | Path | list[dict]) -> list[dict]:
    if isinstance(source, list):
        records = source
    else:
        with open(source, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise TraceSchemaError("trace is empty")
    header = records[0]
    if header.get("type") != "header":
        raise TraceSchemaError("first trace record must be the header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise TraceSchemaError(
            f"unsupported trace schema version {header.get('schema_version')!r}")
    return records


def strip_volatile(obj):
    """Recursively drop wall-clock fields so structural comparison is exact."""
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


def structurally_equal(a, b) -> bool:
    return strip_volatile(a) == strip_volatile(b)
