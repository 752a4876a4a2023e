"""Append-only JSON-lines event store with snapshot-on-clean-shutdown.

Each entity family gets one <family>.jsonl file of events, one JSON object
per line, never rewritten. A clean shutdown writes snapshot.json holding
the full reduced state plus per-family line offsets; the next startup loads
the snapshot and replays only lines appended after it. A crash simply skips
the snapshot step: startup then replays whole logs, so no acknowledged
append is ever lost. Files stay human-readable and diff-able.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import IO, Iterable

FAMILIES = ("users", "devices", "profiles", "prescriptions", "proposals", "records")


class EventStore:
    def __init__(self, data_dir: str | Path, families: Iterable[str] = FAMILIES) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.families = tuple(families)
        self._lock = threading.Lock()
        self._handles: dict[str, IO[str]] = {}
        self._counts: dict[str, int] = {}

    def _path(self, family: str) -> Path:
        return self.data_dir / f"{family}.jsonl"

    @property
    def snapshot_path(self) -> Path:
        return self.data_dir / "snapshot.json"

    def load(self) -> tuple[dict | None, dict[str, list[dict]]]:
        """Return (snapshot state or None, events per family appended after it)."""
        state = None
        offsets: dict[str, int] = {}
        if self.snapshot_path.exists():
            snap = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
            state = snap["state"]
            offsets = {k: int(v) for k, v in snap.get("log_offsets", {}).items()}
        tails: dict[str, list[dict]] = {}
        for family in self.families:
            events: list[dict] = []
            total = 0
            path = self._path(family)
            if path.exists():
                with path.open("r", encoding="utf-8") as fh:
                    for lineno, line in enumerate(fh):
                        line = line.strip()
                        if not line:
                            continue
                        try:
                            event = json.loads(line)
                        except json.JSONDecodeError:
                            # torn final line from a crash mid-write; drop it
                            break
                        total += 1
                        if lineno >= offsets.get(family, 0):
                            events.append(event)
            self._counts[family] = total
            tails[family] = events
        return state, tails

    def append(self, family: str, event: dict) -> None:
        """Durably append one event; safe under concurrent callers."""
        if family not in self.families:
            raise ValueError(f"unknown family: {family!r}")
        line = json.dumps(event, sort_keys=True, separators=(",", ":"))
        with self._lock:
            fh = self._handles.get(family)
            if fh is None:
                fh = self._path(family).open("a", encoding="utf-8")
                self._handles[family] = fh
            fh.write(line + "\n")
            fh.flush()
            self._counts[family] = self._counts.get(family, 0) + 1

    def write_snapshot(self, state: dict) -> None:
        """Record full state plus current log offsets; replaces any prior snapshot."""
        with self._lock:
            snap = {"state": state, "log_offsets": dict(self._counts)}
            tmp = self.snapshot_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(snap, sort_keys=True, indent=2), encoding="utf-8")
            tmp.replace(self.snapshot_path)

    def close(self) -> None:
        with self._lock:
            for fh in self._handles.values():
                fh.close()
            self._handles.clear()
