"""Append-only structured run logs.

One self-describing JSON record per line, header first, so partially
completed runs remain analyzable after a crash. Serialization is fully
deterministic (sorted keys, shortest round-trip float repr via json), which
is what makes byte-identical reruns possible. Timing information therefore
never goes into these files; it is printed to the console instead.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError, RlweaveError, UsageError


class RunLog:
    """Header plus an append-only sequence of per-cycle (or per-step) records."""

    def __init__(self, header: dict):
        self.header = dict(header)
        self.records = []
        self._last_env_steps = None
        self._last_updates = None

    def append(self, record: dict):
        record = dict(record)
        if "env_steps" in record and record["env_steps"] is not None:
            if self._last_env_steps is not None and record["env_steps"] < self._last_env_steps:
                raise RlweaveError("env_steps decreased: %s -> %s"
                                   % (self._last_env_steps, record["env_steps"]))
            self._last_env_steps = record["env_steps"]
        if "updates" in record and record["updates"] is not None:
            if self._last_updates is not None and record["updates"] < self._last_updates:
                raise RlweaveError("updates decreased: %s -> %s"
                                   % (self._last_updates, record["updates"]))
            self._last_updates = record["updates"]
        self.records.append(record)
        return record

    def series(self, key, record_type="cycle"):
        return [r.get(key) for r in self.records if r.get("record") == record_type]

    def cycles(self):
        return [r for r in self.records if r.get("record") == "cycle"]

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write(json.dumps({"record": "header", **self.header}, sort_keys=True) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise UsageError("run log not found: %s" % path)
        log = None
        with open(path) as f:
            for i, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ConfigError("log %s: record %d is not valid JSON (%s)" % (path, i, e)) from e
                if not isinstance(rec, dict) or "record" not in rec:
                    raise ConfigError("log %s: record %d lacks a 'record' field" % (path, i))
                if rec["record"] == "header":
                    rec.pop("record")
                    log = cls(rec)
                else:
                    if log is None:
                        raise ConfigError("log %s: record %d precedes the header" % (path, i))
                    log.records.append(rec)
        if log is None:
            raise ConfigError("log %s: no header record found" % path)
        return log
