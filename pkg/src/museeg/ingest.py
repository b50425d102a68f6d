"""Network acquisition: OSC-over-UDP EEG/accel intake, MQTT gaze intake,
clock synchronization, durable recording, and live state for the dashboard.

Wire conventions (config-overridable): the MindMonitor OSC address map
("/muse/eeg" four floats in µV, "/muse/acc" three floats, and
"/muse/elements/horseshoe" four contact-quality floats where values below 3
count as good); gaze arrives as MQTT JSON payloads with device_ts, gaze_x,
gaze_y and confidence.

Reference timestamps: frames wrapped in OSC bundles carry their device
timestamp in the bundle time tag and are mapped through per-stream clock
sync (clock_mode="sync"); plain messages are stamped with the arrival
clock. clock_mode="device" trusts device timestamps as already being on
the reference clock, which is how accelerated replays stay coherent.

Concurrency: one intake thread per network source, a single writer thread
owning all stream files (inside SessionRecorder), operator commands
serialized through one lock, and live consumers reading snapshots.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .clocksync import ClockSync
from .errors import ArityMismatchError, MalformedPacketError
from .labels import Baseline, ConditionLabel, Modality, label_to_str
from .mqtt import MqttClient
from .osc import OscMessage, parse_osc_packet
from .recorder import SessionRecorder, stream_id

logger = logging.getLogger(__name__)

REORDER_WINDOW_S = 0.100
QUALITY_GOOD_BELOW = 3.0  # horseshoe: 1 good, 2 ok, 4 poor

DEFAULT_ADDRESS_MAP = {
    "/muse/eeg": "eeg",
    "/muse/acc": "accel",
    "/muse/elements/horseshoe": "quality",
}
_EXPECTED_ARITY = {"eeg": 4, "accel": 3, "quality": 4}


@dataclass(frozen=True)
class FrameFragment:
    kind: str  # "eeg" | "accel" | "quality"
    values: tuple
    device_ts: Optional[float]
    t_arrival: Optional[float]


def decode_frame(msg: OscMessage, mapping: Optional[dict] = None) -> Optional[FrameFragment]:
    """Map one OSC message onto an EEG/accel/quality fragment.

    Returns None for unmapped addresses (callers count them); raises
    ArityMismatchError when a mapped address has the wrong argument count.
    """
    mapping = DEFAULT_ADDRESS_MAP if mapping is None else mapping
    kind = mapping.get(msg.address)
    if kind is None:
        return None
    expected = _EXPECTED_ARITY[kind]
    if len(msg.args) != expected:
        raise ArityMismatchError(
            f"{msg.address} expects {expected} args, got {len(msg.args)}"
        )
    values = tuple(float(v) for v in msg.args)
    if kind == "quality":
        values = tuple(v < QUALITY_GOOD_BELOW for v in msg.args)
    return FrameFragment(
        kind=kind, values=values, device_ts=msg.timetag, t_arrival=msg.t_arrival
    )


class _ReorderBuffer:
    """Re-sorts out-of-order arrivals within a bounded time window."""

    def __init__(self, window_s: float = REORDER_WINDOW_S):
        self.window_s = window_s
        self._keys: list[float] = []
        self._rows: dict[float, list] = {}
        self._max_seen = -math.inf

    def push(self, t_ref: float, row: list) -> list[list]:
        if t_ref in self._rows:
            self._rows[t_ref] = row  # duplicate timestamps: last arrival wins
        else:
            bisect.insort(self._keys, t_ref)
            self._rows[t_ref] = row
        self._max_seen = max(self._max_seen, t_ref)
        return self._drain(self._max_seen - self.window_s)

    def _drain(self, watermark: float) -> list[list]:
        out = []
        while self._keys and self._keys[0] <= watermark:
            t = self._keys.pop(0)
            out.append(self._rows.pop(t))
        return out

    def flush(self) -> list[list]:
        return self._drain(math.inf)


@dataclass
class LiveChannelState:
    """Ring buffers backing the live dashboard for one participant."""

    sample_rate: float
    trace: deque = field(default_factory=lambda: deque(maxlen=1))
    valid: deque = field(default_factory=lambda: deque(maxlen=1))
    rows: dict = field(default_factory=lambda: {"eeg": 0, "acc": 0, "gaze": 0})

    def __post_init__(self):
        n5, n10 = int(5 * self.sample_rate), int(10 * self.sample_rate)
        self.trace = deque(maxlen=n5)
        self.valid = deque(maxlen=n10)


class StreamAssembler:
    """Builds timestamped frames for one participant from decoded fragments."""

    def __init__(
        self,
        participant: str,
        sample_rate: float,
        clock_mode: str = "sync",
        on_eeg_row: Optional[Callable[[list], None]] = None,
        on_acc_row: Optional[Callable[[list], None]] = None,
    ):
        if clock_mode not in ("sync", "device"):
            raise ValueError(f"unknown clock_mode {clock_mode!r}")
        self.participant = participant
        self.sample_rate = sample_rate
        self.clock_mode = clock_mode
        self.on_eeg_row = on_eeg_row
        self.on_acc_row = on_acc_row
        self.sync = {
            "eeg": ClockSync(stream_id(participant, "eeg")),
            "acc": ClockSync(stream_id(participant, "acc")),
        }
        self.quality = (True, True, True, True)
        self.accel: Optional[tuple] = None  # (ax, ay, az, mag)
        self.live = LiveChannelState(sample_rate)
        self._reorder = _ReorderBuffer()
        self._last_eeg: Optional[tuple] = None
        self.frames_emitted = 0

    def _t_ref(self, sensor: str, frag: FrameFragment) -> Optional[float]:
        if frag.device_ts is None:
            return frag.t_arrival
        sync = self.sync[sensor]
        if frag.t_arrival is not None:
            sync.update(frag.device_ts, frag.t_arrival)
        if self.clock_mode == "device":
            return frag.device_ts
        return sync.t_ref_for(frag.device_ts)

    def feed(self, frag: FrameFragment) -> None:
        if frag.kind == "quality":
            self.quality = frag.values
            return
        if frag.kind == "accel":
            ax, ay, az = frag.values
            mag = math.sqrt(ax * ax + ay * ay + az * az)
            self.accel = (ax, ay, az, mag)
            t_ref = self._t_ref("acc", frag)
            if t_ref is not None and self.on_acc_row is not None:
                self.on_acc_row([t_ref, _fmt_ts(frag.device_ts), ax, ay, az, mag])
            self.live.rows["acc"] += 1
            return
        # EEG sample
        t_ref = self._t_ref("eeg", frag)
        if t_ref is None:
            return
        q = self.quality
        row = [
            t_ref,
            _fmt_ts(frag.device_ts),
            *frag.values,
            *(int(v) for v in q),
        ]
        self._push_live(t_ref, frag.values, q)
        for ordered in self._reorder.push(t_ref, row):
            if self.on_eeg_row is not None:
                self.on_eeg_row(ordered)
            self.frames_emitted += 1
            self.live.rows["eeg"] += 1

    def _push_live(self, t_ref: float, eeg: tuple, quality: tuple) -> None:
        prev = self._last_eeg
        valid = []
        for c in range(4):
            ok = quality[c] and abs(eeg[c]) <= 100.0
            if ok and prev is not None and abs(eeg[c] - prev[c]) > 50.0:
                ok = False
            valid.append(ok)
        self._last_eeg = eeg
        self.live.trace.append((t_ref, eeg))
        self.live.valid.append(tuple(valid))

    def flush(self) -> None:
        for row in self._reorder.flush():
            if self.on_eeg_row is not None:
                self.on_eeg_row(row)
            self.frames_emitted += 1
            self.live.rows["eeg"] += 1

    def sync_summary(self) -> dict:
        return {name: s.summary() for name, s in self.sync.items()}


def _fmt_ts(ts: Optional[float]) -> object:
    return "" if ts is None else ts


class GazeIntake:
    """MQTT gaze subscriber with bounded-backoff reconnect and gap markers."""

    def __init__(
        self,
        participant: str,
        broker_host: str,
        broker_port: int,
        topic: str,
        clock: Callable[[], float],
        recorder: SessionRecorder,
        assembler: StreamAssembler,
        clock_mode: str = "sync",
    ):
        self.participant = participant
        self.topic = topic
        self.clock = clock
        self.recorder = recorder
        self.assembler = assembler
        self.clock_mode = clock_mode
        self.sync = ClockSync(stream_id(participant, "gaze"))
        self.decode_errors = 0
        self.records = 0
        self._broker = (broker_host, broker_port)
        self._client: Optional[MqttClient] = None
        self._stop = threading.Event()
        self._had_session = False
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        backoff = 0.1
        while not self._stop.is_set():
            client = MqttClient(
                self._broker[0],
                self._broker[1],
                client_id=f"museeg-gaze-{self.participant}",
                on_message=self._on_message,
            )
            try:
                client.connect(timeout=2.0)
                client.subscribe(self.topic, qos=1)
            except Exception as exc:
                logger.warning("gaze %s: connect failed: %s", self.participant, exc)
                client.disconnect()
                if self._stop.wait(backoff):
                    return
                backoff = min(backoff * 2, 2.0)
                continue
            if self._had_session:
                self.recorder.gap_marker(self.participant, "gaze", self.clock())
            self._had_session = True
            backoff = 0.1
            self._client = client
            dropped = threading.Event()
            client.on_disconnect = lambda exc: dropped.set()
            while not self._stop.is_set() and not dropped.is_set():
                dropped.wait(0.2)
            client.disconnect()
            self._client = None

    def _on_message(self, topic: str, payload: bytes) -> None:
        arrival = self.clock()
        try:
            data = json.loads(payload.decode("utf-8"))
            device_ts = float(data["device_ts"])
            gaze_x = float(data["gaze_x"])
            gaze_y = float(data["gaze_y"])
            confidence = float(data.get("confidence", 1.0))
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            self.decode_errors += 1
            logger.warning("gaze %s: payload decode error: %s", self.participant, exc)
            return
        self.sync.update(device_ts, arrival)
        if self.clock_mode == "device":
            t_ref = device_ts
        else:
            t_ref = self.sync.t_ref_for(device_ts)
        self.recorder.append(
            stream_id(self.participant, "gaze"),
            [t_ref, device_ts, gaze_x, gaze_y, confidence],
        )
        self.records += 1
        self.assembler.live.rows["gaze"] += 1

    def stop(self) -> None:
        self._stop.set()
        if self._client is not None:
            self._client.disconnect()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


class IngestService:
    """The acquisition service: UDP OSC intake per participant, optional MQTT
    gaze intake, durable recording, operator commands, live snapshots."""

    def __init__(
        self,
        out_dir: str,
        participants: list[dict],
        session_id: str = "session",
        sample_rate: float = 256.0,
        clock_mode: str = "sync",
        address_map: Optional[dict] = None,
        mqtt_host: Optional[str] = None,
        mqtt_port: int = 1883,
        condition_plan: Optional[list[str]] = None,
    ):
        self.participants = participants
        self.sample_rate = sample_rate
        self.clock_mode = clock_mode
        self.address_map = dict(DEFAULT_ADDRESS_MAP if address_map is None else address_map)
        self.mqtt_host = mqtt_host
        self.mqtt_port = mqtt_port
        self.recorder = SessionRecorder(
            out_dir,
            session_id,
            participants,
            condition_plan=condition_plan,
            sample_rate=sample_rate,
        )
        self.epoch: float = 0.0
        self._sockets: dict[str, socket.socket] = {}
        self._threads: list[threading.Thread] = []
        self._gaze: list[GazeIntake] = []
        self.assemblers: dict[str, StreamAssembler] = {}
        self._running = False
        self._command_lock = threading.Lock()
        self.active_condition: Optional[object] = None
        self.parse_errors = 0
        self.unmapped = 0
        self.datagrams = 0

    # -- lifecycle -----------------------------------------------------------

    def clock(self) -> float:
        return time.monotonic() - self.epoch

    def start(self) -> None:
        self.recorder.start()
        self.epoch = time.monotonic()
        self._running = True
        for p in self.participants:
            pid = p["id"]
            asm = StreamAssembler(
                pid,
                self.sample_rate,
                clock_mode=self.clock_mode,
                on_eeg_row=lambda row, sid=stream_id(pid, "eeg"): self.recorder.append(sid, row),
                on_acc_row=lambda row, sid=stream_id(pid, "acc"): self.recorder.append(sid, row),
            )
            self.assemblers[pid] = asm
            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
            sock.bind(("0.0.0.0", int(p["udp_port"])))
            sock.settimeout(0.2)
            self._sockets[pid] = sock
            t = threading.Thread(target=self._udp_loop, args=(pid, sock, asm), daemon=True)
            t.start()
            self._threads.append(t)
            if self.mqtt_host and p.get("mqtt_topic"):
                gi = GazeIntake(
                    pid,
                    self.mqtt_host,
                    self.mqtt_port,
                    p["mqtt_topic"],
                    self.clock,
                    self.recorder,
                    asm,
                    clock_mode=self.clock_mode,
                )
                gi.start()
                self._gaze.append(gi)

    def udp_port(self, participant: str) -> int:
        return self._sockets[participant].getsockname()[1]

    def _udp_loop(self, pid: str, sock: socket.socket, asm: StreamAssembler) -> None:
        mapping = self.address_map
        while self._running:
            try:
                data, addr = sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            arrival = self.clock()
            self.datagrams += 1
            try:
                messages = parse_osc_packet(data, source=addr, t_arrival=arrival)
            except MalformedPacketError as exc:
                self.parse_errors += 1
                logger.warning("udp %s: %s", pid, exc)
                continue
            for msg in messages:
                try:
                    frag = decode_frame(msg, mapping)
                except ArityMismatchError as exc:
                    self.parse_errors += 1
                    logger.warning("udp %s: %s", pid, exc)
                    continue
                if frag is None:
                    self.unmapped += 1
                    continue
                asm.feed(frag)

    def frames_processed(self) -> int:
        return sum(a.frames_emitted for a in self.assemblers.values())

    # -- operator commands ----------------------------------------------------

    def command(
        self,
        ctype: str,
        label: Optional[str] = None,
        participant: Optional[str] = None,
        t_ref: Optional[float] = None,
    ) -> dict:
        """Handle mark_event / start_block / stop_block; serialized, appended
        to the events file. t_ref defaults to the reference clock "now";
        scripted replays pass explicit device-timeline boundaries."""
        with self._command_lock:
            t_ref = self.clock() if t_ref is None else t_ref
            if ctype == "mark_event":
                if not label:
                    return {"ok": False, "error": "mark_event needs a label"}
                self.recorder.event(t_ref, participant, "mark", label)
                return {"ok": True, "event": {"t_ref": t_ref, "type": "mark", "label": label}}
            if ctype == "start_block":
                if self.active_condition is not None:
                    return {"ok": False, "error": "a block is already active"}
                try:
                    cond = _parse_block_label(label or "")
                except (ValueError, KeyError) as exc:
                    return {"ok": False, "error": f"bad label: {exc}"}
                self.active_condition = cond
                self.recorder.event(t_ref, participant, "block_start", label_to_str(cond))
                return {"ok": True, "event": {"t_ref": t_ref, "type": "block_start",
                                              "label": label_to_str(cond)}}
            if ctype == "stop_block":
                if self.active_condition is None:
                    return {"ok": False, "error": "no active block"}
                cond = self.active_condition
                self.active_condition = None
                self.recorder.event(t_ref, participant, "block_end", label_to_str(cond))
                return {"ok": True, "event": {"t_ref": t_ref, "type": "block_end",
                                              "label": label_to_str(cond)}}
            return {"ok": False, "error": f"unknown command {ctype!r}"}

    # -- live snapshot ---------------------------------------------------------

    def live_snapshot(self, trace_points: int = 256) -> dict:
        """JSON-serializable state for the dashboard broadcast."""
        out = {
            "type": "live",
            "v": 1,
            "t": self.clock(),
            "active_condition": label_to_str(self.active_condition)
            if self.active_condition is not None
            else None,
            "participants": {},
        }
        for pid, asm in self.assemblers.items():
            trace = list(asm.live.trace)
            valid = list(asm.live.valid)
            entry: dict = {
                "rows": dict(asm.live.rows),
                "sync": asm.sync_summary(),
                "validity": [1.0, 1.0, 1.0, 1.0],
                "trace": {"t0": None, "dt": None, "channels": [[], [], [], []]},
                "band_powers": None,
                "faa": None,
                "arousal": None,
            }
            if valid:
                v = np.array(valid, dtype=float)
                entry["validity"] = [float(x) for x in v.mean(axis=0)]
            if trace:
                stride = max(1, len(trace) // trace_points)
                decimated = trace[::stride]
                entry["trace"] = {
                    "t0": decimated[0][0],
                    "dt": stride / self.sample_rate,
                    "channels": [
                        [round(pt[1][c], 2) for pt in decimated] for c in range(4)
                    ],
                }
            indexes = self._rolling_indexes(asm)
            entry.update(indexes)
            out["participants"][pid] = entry
        return out

    def _rolling_indexes(self, asm: StreamAssembler) -> dict:
        from .engagement import arousal as arousal_ratio
        from .engagement import faa as faa_index
        from .spectral import BAND_NAMES, CANONICAL_BANDS, band_power

        n4 = int(4 * self.sample_rate)
        trace = list(asm.live.trace)[-n4:]
        if len(trace) < n4:
            return {"band_powers": None, "faa": None, "arousal": None}
        x = np.array([pt[1] for pt in trace], dtype=np.float64)
        powers = {}
        try:
            for band in CANONICAL_BANDS:
                powers[band.name] = [
                    band_power(x[:, c], band, self.sample_rate) for c in range(4)
                ]
            mean = {b: float(np.mean(powers[b])) for b in BAND_NAMES}
            faa_v = faa_index(*powers["alpha"])
            arousal_v = arousal_ratio(mean["beta"], mean["alpha"])
        except Exception:
            return {"band_powers": None, "faa": None, "arousal": None}
        return {
            "band_powers": {b: round(mean[b], 4) for b in BAND_NAMES},
            "faa": round(faa_v, 4),
            "arousal": round(arousal_v, 4),
        }

    # -- shutdown ---------------------------------------------------------------

    def stop(self, finalize: bool = True):
        self._running = False
        for gi in self._gaze:
            gi.stop()
        for sock in self._sockets.values():
            try:
                sock.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=5.0)
        for asm in self.assemblers.values():
            asm.flush()
        if finalize:
            sync_meta = {
                pid: asm.sync_summary() for pid, asm in self.assemblers.items()
            }
            for gi in self._gaze:
                sync_meta.setdefault(gi.participant, {})["gaze"] = gi.sync.summary()
            return self.recorder.finalize(sync_meta)
        return None


def _parse_block_label(label: str) -> ConditionLabel | Baseline:
    if label in (Baseline.EO.value, Baseline.EC.value):
        return Baseline(label)
    name, _, block = label.partition("/")
    return ConditionLabel(Modality(name), int(block) if block else 1)
