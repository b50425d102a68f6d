"""Ground-truth synthetic EEG/accel/gaze generation and OSC/MQTT replay.

The generator sums per-band sinusoids at band-center frequencies (2, 6,
10.5, 21.5 and 40 Hz: maximal in-band energy, minimal boundary leakage)
plus Gaussian noise, and injects scheduled artifacts. GroundTruth carries
the analytic band powers (A²/2 per sinusoid) and the injected artifact
events with their expected flag indexes.

The replayer encodes frames as OSC datagrams (each frame wrapped in a
bundle whose time tag is the device timestamp) and gaze as MQTT JSON, with
configurable latency/jitter, paced at a multiple of real time; a rate of 0
means "as fast as possible", in which case an optional throttle callback
keeps the receiver's buffers bounded.
"""

from __future__ import annotations

import json
import math
import socket
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidGeneratorSpecError, NetworkUnreachableError
from .frames import SampleFrame, Segment
from .labels import Label
from .mqtt import MqttClient
from .osc import bundle, encode_packet, message
from .spectral import BAND_NAMES

BAND_CENTER_HZ = {"delta": 2.0, "theta": 6.0, "alpha": 10.5, "beta": 21.5, "gamma": 40.0}

AMPLITUDE_THRESHOLD = 100.0
GRADIENT_THRESHOLD = 50.0
# filtering smears injected artifacts; exclude this halo from false-flag counts
HALO_SAMPLES = 64


@dataclass(frozen=True)
class SpikeEvent:
    """High-amplitude in-band pulse (amplitude criterion)."""

    t: float
    amplitude_uv: float = 180.0
    width_s: float = 0.3
    channel: int = 0


@dataclass(frozen=True)
class JumpEvent:
    """Step discontinuity (gradient criterion)."""

    t: float
    height_uv: float = 160.0
    width_s: float = 0.1
    channel: int = 0


@dataclass(frozen=True)
class BlinkEvent:
    """Low-frequency frontal transient (ICA blink signature)."""

    t: float
    amplitude_uv: float = 120.0
    width_s: float = 0.3


@dataclass(frozen=True)
class MovementBurst:
    t: float
    duration_s: float = 0.5
    accel_boost: float = 3.0


@dataclass
class GeneratorSpec:
    duration_s: float
    band_amplitudes: dict[str, tuple] = field(default_factory=dict)  # band -> 4 µV
    noise_std: float = 0.0
    sample_rate: float = 256.0
    seed: int = 0
    t0: float = 0.0
    accel_rate: float = 52.0
    accel_base: float = 9.81
    accel_noise_std: float = 0.0
    gaze_rate: float = 30.0
    quality_rate: float = 1.0
    spikes: list[SpikeEvent] = field(default_factory=list)
    jumps: list[JumpEvent] = field(default_factory=list)
    blinks: list[BlinkEvent] = field(default_factory=list)
    movement_bursts: list[MovementBurst] = field(default_factory=list)
    poor_quality_spans: list[tuple] = field(default_factory=list)  # (t, dur, channel)

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise InvalidGeneratorSpecError("duration must be positive")
        if self.sample_rate <= 0:
            raise InvalidGeneratorSpecError("sample_rate must be positive")
        for band, amps in self.band_amplitudes.items():
            if band not in BAND_CENTER_HZ:
                raise InvalidGeneratorSpecError(f"unknown band {band!r}")
            if len(amps) != 4 or any(a < 0 for a in amps):
                raise InvalidGeneratorSpecError(
                    f"band {band}: need 4 non-negative amplitudes"
                )

    @classmethod
    def from_json(cls, data: dict) -> "GeneratorSpec":
        events = {
            "spikes": SpikeEvent,
            "jumps": JumpEvent,
            "blinks": BlinkEvent,
            "movement_bursts": MovementBurst,
        }
        kwargs = dict(data)
        for key, etype in events.items():
            kwargs[key] = [etype(**e) for e in data.get(key, [])]
        kwargs["band_amplitudes"] = {
            b: tuple(v) for b, v in data.get("band_amplitudes", {}).items()
        }
        kwargs["poor_quality_spans"] = [tuple(s) for s in data.get("poor_quality_spans", [])]
        return cls(**kwargs)


@dataclass
class ArtifactEvent:
    kind: str  # "amplitude" | "gradient" | "blink" | "movement"
    start: int
    end: int
    samples: list[int]


@dataclass
class GroundTruth:
    band_powers: np.ndarray  # (4 channels, 5 bands), µV²
    events: list[ArtifactEvent]
    clean: np.ndarray  # (n,) bool: outside any artifact halo

    def events_of(self, kind: str) -> list[ArtifactEvent]:
        return [e for e in self.events if e.kind == kind]


@dataclass
class SynthSession:
    """One participant's generated tracks, ready for analysis or replay."""

    spec: GeneratorSpec
    eeg_t: np.ndarray
    eeg: np.ndarray  # (n, 4) µV
    accel_t: np.ndarray
    accel: np.ndarray  # (m, 3)
    quality_t: np.ndarray
    quality: np.ndarray  # (k, 4) horseshoe floats
    gaze_t: np.ndarray
    gaze: np.ndarray  # (g, 3): x, y, confidence
    truth: GroundTruth

    def to_segment(self, label: Optional[Label] = None) -> Segment:
        """Frames with accel magnitude and quality forward-filled per sample."""
        accel_mag = np.linalg.norm(self.accel, axis=1) if len(self.accel) else None
        frames = []
        ai = qi = 0
        cur_accel = None
        cur_quality = (True, True, True, True)
        for i, t in enumerate(self.eeg_t):
            while ai < len(self.accel_t) and self.accel_t[ai] <= t:
                cur_accel = float(accel_mag[ai])
                ai += 1
            while qi < len(self.quality_t) and self.quality_t[qi] <= t:
                cur_quality = tuple(bool(v < 3.0) for v in self.quality[qi])
                qi += 1
            frames.append(
                SampleFrame(
                    t_ref=float(t),
                    eeg=tuple(float(v) for v in self.eeg[i]),
                    device_quality=cur_quality,
                    accel_mag=cur_accel,
                )
            )
        return Segment(sample_rate=self.spec.sample_rate, frames=frames, label=label)


def generate(spec: GeneratorSpec) -> SynthSession:
    """Deterministic synthesis from the spec; the seed fixes all randomness."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    fs = spec.sample_rate
    n = int(round(spec.duration_s * fs))
    t = spec.t0 + np.arange(n) / fs
    eeg = np.zeros((n, 4))
    truth_powers = np.zeros((4, 5))
    for b, band in enumerate(BAND_NAMES):
        amps = spec.band_amplitudes.get(band)
        if not amps:
            continue
        freq = BAND_CENTER_HZ[band]
        for c in range(4):
            amp = float(amps[c])
            if amp == 0:
                continue
            phase = rng.uniform(0, 2 * np.pi)
            eeg[:, c] += amp * np.sin(2 * np.pi * freq * (t - spec.t0) + phase)
            truth_powers[c, b] = amp * amp / 2.0
    if spec.noise_std > 0:
        eeg += rng.normal(0, spec.noise_std, size=eeg.shape)

    events: list[ArtifactEvent] = []
    halo = np.zeros(n, dtype=bool)

    def mark(kind, start, end, samples):
        start = max(0, start)
        end = min(n, end)
        events.append(ArtifactEvent(kind, start, end, [s for s in samples if start <= s < end]))
        halo[max(0, start - HALO_SAMPLES) : min(n, end + HALO_SAMPLES)] = True

    for spike in spec.spikes:
        width = max(2, int(spike.width_s * fs))
        start = int((spike.t - spec.t0) * fs)
        pulse = spike.amplitude_uv * np.sin(np.linspace(0, np.pi, width))
        end = min(n, start + width)
        if start >= n or end <= 0:
            continue
        eeg[max(0, start) : end, spike.channel] += pulse[: end - max(0, start)]
        over = [max(0, start) + i for i, v in enumerate(pulse[: end - max(0, start)])
                if abs(v) > AMPLITUDE_THRESHOLD]
        mark("amplitude", start, end, over)

    for jump in spec.jumps:
        width = max(2, int(jump.width_s * fs))
        start = int((jump.t - spec.t0) * fs)
        end = min(n, start + width)
        if start >= n or end <= 0:
            continue
        eeg[max(0, start) : end, jump.channel] += jump.height_uv
        samples = []
        if jump.height_uv > GRADIENT_THRESHOLD:
            samples = [s for s in (start, end) if 0 <= s < n]
        mark("gradient", start, end + 1, samples)

    for blink in spec.blinks:
        width = max(2, int(blink.width_s * fs))
        start = int((blink.t - spec.t0) * fs)
        end = min(n, start + width)
        if start >= n or end <= 0:
            continue
        pulse = blink.amplitude_uv * np.hanning(width)[: end - max(0, start)]
        for c in (1, 2):  # AF7, AF8
            eeg[max(0, start) : end, c] += pulse
        mark("blink", start, end, list(range(max(0, start), end)))

    m = int(round(spec.duration_s * spec.accel_rate))
    accel_t = spec.t0 + np.arange(m) / spec.accel_rate
    accel = np.zeros((m, 3))
    accel[:, 2] = spec.accel_base
    if spec.accel_noise_std > 0:
        accel[:, 2] += rng.normal(0, spec.accel_noise_std, size=m)
    for burst in spec.movement_bursts:
        sel = (accel_t >= burst.t) & (accel_t < burst.t + burst.duration_s)
        accel[sel, 2] += burst.accel_boost
        start = int((burst.t - spec.t0) * fs)
        end = int((burst.t + burst.duration_s - spec.t0) * fs)
        mark("movement", start, end, list(range(max(0, start), min(n, end))))

    k = max(1, int(round(spec.duration_s * spec.quality_rate)))
    quality_t = spec.t0 + np.arange(k) / spec.quality_rate
    quality = np.ones((k, 4))
    for (qt, dur, channel) in spec.poor_quality_spans:
        sel = (quality_t >= qt) & (quality_t < qt + dur)
        quality[sel, channel] = 4.0

    g = int(round(spec.duration_s * spec.gaze_rate))
    gaze_t = spec.t0 + np.arange(g) / spec.gaze_rate
    gaze = np.column_stack(
        [
            0.5 + 0.1 * np.sin(2 * np.pi * 0.2 * (gaze_t - spec.t0)),
            0.5 + 0.1 * np.cos(2 * np.pi * 0.13 * (gaze_t - spec.t0)),
            np.full(g, 0.99),
        ]
    ) if g else np.zeros((0, 3))

    return SynthSession(
        spec=spec,
        eeg_t=t,
        eeg=eeg,
        accel_t=accel_t,
        accel=accel,
        quality_t=quality_t,
        quality=quality,
        gaze_t=gaze_t,
        gaze=gaze,
        truth=GroundTruth(band_powers=truth_powers, events=events, clean=~halo),
    )


@dataclass
class ScriptedPhase:
    """One labeled block of a scripted session ("EO", "DisplayVideo/1", ...)."""

    label: str
    spec: GeneratorSpec


# quiet span between scripted phases so clock offsets cannot smear frames
# across block boundaries
PHASE_GAP_S = 0.25


def run_scripted_session(
    phases: list[ScriptedPhase],
    host: str,
    udp_port: int,
    command: Callable[..., dict],
    rate: float = 1.0,
    latency_range_s: tuple[float, float] = (0.0, 0.0),
    seed: int = 0,
    batch: int = 1,
    epoch: Optional[float] = None,
    throttle: Optional[Callable[[int], None]] = None,
    mqtt_host: Optional[str] = None,
    mqtt_port: int = 1883,
    mqtt_topic: Optional[str] = None,
) -> list[ReplaySummary]:
    """Drive one participant's phases through a live ingest endpoint.

    Each phase is announced with start_block/stop_block commands carrying
    explicit device-timeline boundaries, then its generated tracks are
    replayed. Phase start times are laid out back to back with a small gap.
    """
    summaries = []
    t0 = 0.0
    epoch = time.monotonic() if epoch is None else epoch
    for k, phase in enumerate(phases):
        spec = phase.spec
        spec.t0 = t0
        session = generate(spec)
        command("start_block", label=phase.label, t_ref=t0 - PHASE_GAP_S / 2)
        summaries.append(
            replay(
                session,
                host,
                udp_port,
                rate=rate,
                latency_range_s=latency_range_s,
                seed=seed * 1009 + k,
                batch=batch,
                epoch=epoch,
                throttle=throttle,
                mqtt_host=mqtt_host,
                mqtt_port=mqtt_port,
                mqtt_topic=mqtt_topic,
            )
        )
        command(
            "stop_block",
            label=phase.label,
            t_ref=t0 + spec.duration_s + PHASE_GAP_S / 2,
        )
        t0 += spec.duration_s + PHASE_GAP_S
    return summaries


@dataclass
class ReplaySummary:
    datagrams_sent: int
    eeg_frames: int
    accel_frames: int
    quality_frames: int
    gaze_messages: int
    latency_min_s: float
    latency_mean_s: float
    latency_max_s: float
    wall_seconds: float


def replay(
    session: SynthSession,
    host: str,
    udp_port: int,
    rate: float = 1.0,
    latency_range_s: tuple[float, float] = (0.0, 0.0),
    seed: int = 0,
    batch: int = 1,
    epoch: Optional[float] = None,
    throttle: Optional[Callable[[int], None]] = None,
    mqtt_host: Optional[str] = None,
    mqtt_port: int = 1883,
    mqtt_topic: Optional[str] = None,
) -> ReplaySummary:
    """Send one participant's tracks over the wire.

    rate > 0 paces against the wall clock (1.0 = real time); rate = 0 sends
    as fast as possible. epoch anchors device time 0 on time.monotonic();
    it defaults to "now". The throttle callback (datagrams sent so far) may
    block to keep an in-process receiver's buffers bounded.
    """
    rng = np.random.default_rng(seed)
    lo, hi = latency_range_s
    try:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.connect((host, udp_port))
    except OSError as exc:
        raise NetworkUnreachableError(f"cannot reach {host}:{udp_port}: {exc}") from exc
    mqtt_client = None
    if mqtt_host and mqtt_topic is not None and len(session.gaze_t):
        mqtt_client = MqttClient(mqtt_host, mqtt_port, client_id=f"replay-{seed}")
        mqtt_client.connect()

    # schedule: (send_time, kind, index)
    sched: list[tuple[float, str, int]] = []
    latencies = []

    def lat() -> float:
        v = rng.uniform(lo, hi) if hi > lo else lo
        latencies.append(v)
        return v

    for i, t in enumerate(session.eeg_t):
        sched.append((t + lat(), "eeg", i))
    for i, t in enumerate(session.accel_t):
        sched.append((t + lat(), "acc", i))
    for i, t in enumerate(session.quality_t):
        sched.append((t + lat(), "quality", i))
    for i, t in enumerate(session.gaze_t):
        sched.append((t + lat(), "gaze", i))
    sched.sort(key=lambda e: e[0])

    epoch = time.monotonic() if epoch is None else epoch
    sent = {"eeg": 0, "acc": 0, "quality": 0, "gaze": 0}
    datagrams = 0
    pending: list[bytes] = []
    wall_start = time.monotonic()

    def flush_pending():
        nonlocal datagrams
        if not pending:
            return
        if len(pending) == 1:
            sock.send(pending[0])
        else:
            parts = [b"#bundle\x00" + struct.pack(">II", 0, 1)]
            for payload in pending:
                parts.append(struct.pack(">i", len(payload)))
                parts.append(payload)
            sock.send(b"".join(parts))
        pending.clear()
        datagrams += 1
        if throttle is not None:
            throttle(datagrams)

    for send_time, kind, i in sched:
        if rate > 0:
            target = epoch + send_time / rate
            delay = target - time.monotonic()
            if delay > 0:
                flush_pending()
                time.sleep(delay)
        if kind == "eeg":
            device_ts = float(session.eeg_t[i])
            msg = message("/muse/eeg", *(float(v) for v in session.eeg[i]))
            pending.append(encode_packet(bundle(device_ts, msg)))
            sent["eeg"] += 1
        elif kind == "acc":
            device_ts = float(session.accel_t[i])
            msg = message("/muse/acc", *(float(v) for v in session.accel[i]))
            pending.append(encode_packet(bundle(device_ts, msg)))
            sent["acc"] += 1
        elif kind == "quality":
            device_ts = float(session.quality_t[i])
            msg = message(
                "/muse/elements/horseshoe", *(float(v) for v in session.quality[i])
            )
            pending.append(encode_packet(bundle(device_ts, msg)))
            sent["quality"] += 1
        else:  # gaze
            flush_pending()
            if mqtt_client is not None:
                payload = json.dumps(
                    {
                        "device_ts": float(session.gaze_t[i]),
                        "gaze_x": float(session.gaze[i][0]),
                        "gaze_y": float(session.gaze[i][1]),
                        "confidence": float(session.gaze[i][2]),
                    }
                ).encode()
                mqtt_client.publish(mqtt_topic, payload, qos=1)
                sent["gaze"] += 1
            continue
        if len(pending) >= batch:
            flush_pending()
    flush_pending()
    sock.close()
    if mqtt_client is not None:
        time.sleep(0.05)  # let the broker drain before dropping the connection
        mqtt_client.disconnect()
    return ReplaySummary(
        datagrams_sent=datagrams,
        eeg_frames=sent["eeg"],
        accel_frames=sent["acc"],
        quality_frames=sent["quality"],
        gaze_messages=sent["gaze"],
        latency_min_s=float(min(latencies)) if latencies else 0.0,
        latency_mean_s=float(np.mean(latencies)) if latencies else 0.0,
        latency_max_s=float(max(latencies)) if latencies else 0.0,
        wall_seconds=time.monotonic() - wall_start,
    )
