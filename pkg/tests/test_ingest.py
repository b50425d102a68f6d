import json
import math
import time

import numpy as np
import pytest

from museeg.errors import ArityMismatchError
from museeg.ingest import (
    DEFAULT_ADDRESS_MAP,
    IngestService,
    StreamAssembler,
    _ReorderBuffer,
    decode_frame,
)
from museeg.mqtt import MiniMqttBroker, MqttClient
from museeg.osc import OscMessage, message
from museeg.recorder import load_manifest, read_stream_csv, stream_id
from museeg.synth import GeneratorSpec, generate, replay


def msg(address, *args, timetag=None, t_arrival=None):
    m = message(address, *args)
    return OscMessage(
        address=m.address,
        type_tags=m.type_tags,
        args=m.args,
        timetag=timetag,
        t_arrival=t_arrival,
    )


class TestDecodeFrame:
    def test_eeg_mapping(self):
        frag = decode_frame(msg("/muse/eeg", 10.0, 11.0, 12.0, 13.0))
        assert frag.kind == "eeg"
        assert frag.values == (10.0, 11.0, 12.0, 13.0)

    def test_accel_passthrough(self):
        frag = decode_frame(msg("/muse/acc", 3.0, 4.0, 0.0))
        assert frag.kind == "accel"
        assert frag.values == (3.0, 4.0, 0.0)

    def test_quality_thresholds(self):
        frag = decode_frame(msg("/muse/elements/horseshoe", 1.0, 2.0, 4.0, 1.0))
        assert frag.values == (True, True, False, True)

    def test_wrong_arity(self):
        with pytest.raises(ArityMismatchError):
            decode_frame(msg("/muse/eeg", 1.0, 2.0))

    def test_unmapped_address_ignored(self):
        assert decode_frame(msg("/muse/gyro", 1.0, 2.0, 3.0)) is None


class TestReorderBuffer:
    def test_out_of_order_resorted(self):
        buf = _ReorderBuffer(window_s=0.1)
        out = []
        for t in (0.0, 0.008, 0.004, 0.012, 0.25):
            out.extend(buf.push(t, [t]))
        out.extend(buf.flush())
        assert [r[0] for r in out] == [0.0, 0.004, 0.008, 0.012, 0.25]

    def test_duplicate_keeps_last(self):
        buf = _ReorderBuffer(window_s=0.1)
        buf.push(0.0, [0.0, "first"])
        buf.push(0.0, [0.0, "second"])
        out = buf.flush()
        assert out == [[0.0, "second"]]


class TestAssembler:
    def test_quality_and_accel_ride_on_eeg_rows(self):
        rows = []
        asm = StreamAssembler(
            "p1", 256.0, clock_mode="device", on_eeg_row=rows.append
        )
        asm.feed(decode_frame(msg("/muse/elements/horseshoe", 1.0, 4.0, 1.0, 1.0,
                                  timetag=0.0, t_arrival=0.0)))
        asm.feed(decode_frame(msg("/muse/acc", 0.0, 0.0, 9.81,
                                  timetag=0.0, t_arrival=0.0)))
        for i in range(60):
            asm.feed(decode_frame(msg("/muse/eeg", 1.0, 2.0, 3.0, 4.0,
                                      timetag=i / 256.0, t_arrival=i / 256.0)))
        asm.flush()
        assert len(rows) == 60
        t_ref, device_ts, *vals = rows[0]
        assert t_ref == 0.0
        assert vals[:4] == [1.0, 2.0, 3.0, 4.0]
        assert vals[4:] == [1, 0, 1, 1]  # AF7 poor

    def test_sync_mode_applies_offset(self):
        rows = []
        asm = StreamAssembler("p1", 256.0, clock_mode="sync", on_eeg_row=rows.append)
        for i in range(400):
            device = i / 256.0
            asm.feed(decode_frame(msg("/muse/eeg", 0.0, 0.0, 0.0, 0.0,
                                      timetag=device, t_arrival=device + 0.02)))
        asm.flush()
        assert abs(asm.sync["eeg"].offset - 0.02) < 0.002
        # t_ref of later rows reflects the offset
        assert abs(rows[-1][0] - (399 / 256.0 + 0.02)) < 0.005


@pytest.fixture
def service(tmp_path):
    svc = IngestService(
        out_dir=tmp_path,
        participants=[
            {"id": "p1", "group": "ImmersiveGroup", "udp_port": 0},
            {"id": "p2", "group": "DisplayGroup", "udp_port": 0},
        ],
        session_id="itest",
        clock_mode="device",
    )
    svc.start()
    yield svc
    if svc._running:
        svc.stop(finalize=False)


class TestCommands:
    def test_block_lifecycle(self, service):
        ack = service.command("start_block", label="DisplayVideo/1")
        assert ack["ok"]
        assert service.live_snapshot()["active_condition"] == "DisplayVideo/1"
        dup = service.command("start_block", label="DisplayVideo/2")
        assert not dup["ok"]
        stop = service.command("stop_block")
        assert stop["ok"]
        again = service.command("stop_block")
        assert not again["ok"]

    def test_mark_event_lands_in_events_file(self, service, tmp_path):
        ack = service.command("mark_event", label="note1")
        assert ack["ok"]
        manifest = service.stop()
        header, rows = read_stream_csv(tmp_path / manifest.events_file)
        assert any(r[2] == "mark" and r[3] == "note1" for r in rows)

    def test_baseline_block_label(self, service):
        ack = service.command("start_block", label="EO")
        assert ack["ok"]
        assert service.live_snapshot()["active_condition"] == "EO"
        service.command("stop_block")


class TestWireTransfer:
    def test_replayed_session_recorded(self, service, tmp_path):
        spec = GeneratorSpec(
            duration_s=2.0,
            band_amplitudes={"alpha": (20.0,) * 4},
            noise_std=1.0,
            accel_noise_std=0.02,
            seed=5,
        )
        session = generate(spec)
        for pid in ("p1", "p2"):
            summary = replay(
                session,
                "127.0.0.1",
                service.udp_port(pid),
                rate=0,
                batch=16,
                throttle=lambda sent: time.sleep(0.0005),
            )
            assert summary.eeg_frames == 512
        deadline = time.monotonic() + 10
        while service.frames_processed() < 2 * (512 - 30) and time.monotonic() < deadline:
            time.sleep(0.05)
        manifest = service.stop()
        for pid in ("p1", "p2"):
            sid = stream_id(pid, "eeg")
            header, rows = read_stream_csv(tmp_path / manifest.stream_files[sid])
            assert abs(len(rows) - 512) <= 0.02 * 512
            t_refs = [float(r[0]) for r in rows]
            assert t_refs == sorted(t_refs)
            acc_sid = stream_id(pid, "acc")
            _, acc_rows = read_stream_csv(tmp_path / manifest.stream_files[acc_sid])
            assert abs(len(acc_rows) - 104) <= 4

    def test_malformed_datagrams_counted_not_fatal(self, service):
        import socket

        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.sendto(b"abc", ("127.0.0.1", service.udp_port("p1")))
        sock.sendto(b"\x00" * 7, ("127.0.0.1", service.udp_port("p1")))
        deadline = time.monotonic() + 5
        while service.parse_errors < 2 and time.monotonic() < deadline:
            time.sleep(0.02)
        assert service.parse_errors >= 2
        sock.close()


class TestGazeIntake:
    def test_gaze_records_and_reconnect_gap(self, tmp_path):
        broker = MiniMqttBroker().start()
        svc = IngestService(
            out_dir=tmp_path,
            participants=[{"id": "p1", "udp_port": 0, "mqtt_topic": "gaze/p1"}],
            session_id="gtest",
            clock_mode="device",
            mqtt_host=broker.host,
            mqtt_port=broker.port,
        )
        svc.start()
        try:
            pub = MqttClient(broker.host, broker.port, "gazer")
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                try:
                    pub.connect()
                    break
                except Exception:
                    time.sleep(0.05)
            sent = 0
            deadline = time.monotonic() + 8
            while svc._gaze[0].records < 5 and time.monotonic() < deadline:
                pub.publish(
                    "gaze/p1",
                    json.dumps(
                        {"device_ts": sent / 30.0, "gaze_x": 0.5, "gaze_y": 0.4,
                         "confidence": 0.97}
                    ).encode(),
                    qos=1,
                )
                sent += 1
                time.sleep(0.02)
            assert svc._gaze[0].records >= 5
            # malformed payload: logged, no record, stream continues
            before = svc._gaze[0].records
            pub.publish("gaze/p1", b"{not json", qos=1)
            time.sleep(0.3)
            assert svc._gaze[0].decode_errors >= 1
            assert svc._gaze[0].records >= before
            pub.disconnect()
        finally:
            manifest = svc.stop()
            broker.stop()
        sid = stream_id("p1", "gaze")
        header, rows = read_stream_csv(tmp_path / manifest.stream_files[sid])
        assert len(rows) >= 5
        assert header == ["t_ref", "device_ts", "gaze_x", "gaze_y", "confidence"]
