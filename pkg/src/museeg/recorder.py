"""Durable session recording: per-stream CSV files, an events file, and a
session manifest.

One writer thread owns every stream file (rows arrive through an unbounded
queue, so the recording path never drops). Files are flushed at least once
per second; the manifest is written up front with finalized=false and
atomically replaced at finalize time, which is how a crash mid-session
stays detectable.
"""

from __future__ import annotations

import csv
import json
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .errors import RecordingError

MANIFEST_NAME = "manifest.json"
EVENTS_STREAM = "events"

STREAM_COLUMNS = {
    "eeg": ["t_ref", "device_ts", "tp9", "af7", "af8", "tp10",
            "q_tp9", "q_af7", "q_af8", "q_tp10"],
    "acc": ["t_ref", "device_ts", "ax", "ay", "az", "mag"],
    "gaze": ["t_ref", "device_ts", "gaze_x", "gaze_y", "confidence"],
}
EVENT_COLUMNS = ["t_ref", "participant_id", "type", "label"]


def stream_id(participant: str, sensor: str) -> str:
    return f"{participant}/{sensor}"


def stream_filename(participant: str, sensor: str) -> str:
    return f"{sensor}_{participant}.csv"


@dataclass
class SessionManifest:
    """Everything analysis needs to load a recorded session."""

    session_id: str
    participants: list[dict]
    condition_plan: list[str]
    stream_files: dict[str, str]
    events_file: str
    sample_rate: float
    created_at: str
    finalized: bool = False
    row_counts: dict[str, int] = field(default_factory=dict)
    sync_metadata: dict[str, dict] = field(default_factory=dict)
    out_dir: str = ""

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "session_id": self.session_id,
            "participants": self.participants,
            "condition_plan": self.condition_plan,
            "stream_files": self.stream_files,
            "events_file": self.events_file,
            "sample_rate": self.sample_rate,
            "created_at": self.created_at,
            "finalized": self.finalized,
            "row_counts": self.row_counts,
            "sync_metadata": self.sync_metadata,
        }

    @classmethod
    def from_json(cls, data: dict, out_dir: str = "") -> "SessionManifest":
        return cls(
            session_id=data["session_id"],
            participants=data["participants"],
            condition_plan=data.get("condition_plan", []),
            stream_files=data["stream_files"],
            events_file=data["events_file"],
            sample_rate=data.get("sample_rate", 256.0),
            created_at=data.get("created_at", ""),
            finalized=data.get("finalized", False),
            row_counts=data.get("row_counts", {}),
            sync_metadata=data.get("sync_metadata", {}),
            out_dir=out_dir,
        )

    def path_for(self, sid: str) -> Path:
        return Path(self.out_dir) / self.stream_files[sid]


def load_manifest(path: str | Path) -> SessionManifest:
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return SessionManifest.from_json(data, out_dir=str(path.parent))


class SessionRecorder:
    """Owns the output directory for one session."""

    def __init__(
        self,
        out_dir: str | Path,
        session_id: str,
        participants: list[dict],
        condition_plan: Optional[list[str]] = None,
        sample_rate: float = 256.0,
        flush_interval: float = 1.0,
    ):
        self.out_dir = Path(out_dir)
        self.session_id = session_id
        self.participants = participants
        self.condition_plan = list(condition_plan or [])
        self.sample_rate = sample_rate
        self.flush_interval = flush_interval
        self._files: dict[str, object] = {}
        self._writers: dict[str, csv.writer] = {}
        self._counts: dict[str, int] = {}
        self._queue: queue.Queue = queue.Queue()
        self._thread: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self._started = False

    def start(self) -> SessionManifest:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            probe = self.out_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise RecordingError(f"output directory not writable: {exc}") from exc

        stream_files = {}
        for p in self.participants:
            pid = p["id"]
            for sensor in ("eeg", "acc", "gaze"):
                sid = stream_id(pid, sensor)
                fname = stream_filename(pid, sensor)
                stream_files[sid] = fname
                fh = open(self.out_dir / fname, "w", newline="")
                w = csv.writer(fh)
                w.writerow(STREAM_COLUMNS[sensor])
                fh.flush()
                self._files[sid] = fh
                self._writers[sid] = w
                self._counts[sid] = 0
        events_file = f"events_{self.session_id}.csv"
        fh = open(self.out_dir / events_file, "w", newline="")
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        fh.flush()
        self._files[EVENTS_STREAM] = fh
        self._writers[EVENTS_STREAM] = w
        self._counts[EVENTS_STREAM] = 0

        self.manifest = SessionManifest(
            session_id=self.session_id,
            participants=self.participants,
            condition_plan=self.condition_plan,
            stream_files=stream_files,
            events_file=events_file,
            sample_rate=self.sample_rate,
            created_at=datetime.now(timezone.utc).isoformat(),
            finalized=False,
            out_dir=str(self.out_dir),
        )
        self._write_manifest()
        self._stop.clear()
        self._thread = threading.Thread(target=self._writer_loop, daemon=True)
        self._thread.start()
        self._started = True
        return self.manifest

    def _write_manifest(self) -> None:
        tmp = self.out_dir / (MANIFEST_NAME + ".tmp")
        with open(tmp, "w") as fh:
            json.dump(self.manifest.to_json(), fh, indent=2)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.out_dir / MANIFEST_NAME)

    def append(self, sid: str, row: list) -> None:
        """Queue one row for the stream's file (never blocks intake)."""
        self._queue.put((sid, row))

    def event(self, t_ref: float, participant: Optional[str], etype: str, label: str) -> None:
        self.append(EVENTS_STREAM, [t_ref, participant or "", etype, label])

    def gap_marker(self, participant: str, sensor: str, t_ref: float) -> None:
        self.event(t_ref, participant, "gap", stream_id(participant, sensor))

    def _writer_loop(self) -> None:
        last_flush = time.monotonic()
        while True:
            try:
                item = self._queue.get(timeout=0.1)
            except queue.Empty:
                item = None
            if item is not None:
                sid, row = item
                writer = self._writers.get(sid)
                if writer is not None:
                    writer.writerow(row)
                    self._counts[sid] += 1
            now = time.monotonic()
            if now - last_flush >= self.flush_interval:
                for fh in self._files.values():
                    try:
                        fh.flush()
                    except OSError:
                        pass
                last_flush = now
            if self._stop.is_set() and self._queue.empty():
                return

    def row_counts(self) -> dict[str, int]:
        return dict(self._counts)

    def finalize(self, sync_metadata: Optional[dict] = None) -> SessionManifest:
        """Drain the queue, close files, write the final manifest."""
        if not self._started:
            raise RecordingError("recorder was never started")
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=30.0)
        for fh in self._files.values():
            try:
                fh.flush()
                fh.close()
            except OSError:
                pass
        self.manifest.finalized = True
        self.manifest.row_counts = dict(self._counts)
        self.manifest.sync_metadata = sync_metadata or {}
        self._write_manifest()
        self._started = False
        return self.manifest


def read_stream_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a stream CSV, tolerating a truncated final line after a crash."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], []
        width = len(header)
        for row in reader:
            if len(row) == width and all(cell != "" for cell in row[:1]):
                rows.append(row)
    return header, rows
