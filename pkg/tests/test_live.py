import json
import time

import pytest
from websockets.exceptions import ConnectionClosed
from websockets.sync.client import connect

from museeg.ingest import IngestService
from museeg.live import LiveBroadcaster
from museeg.recorder import read_stream_csv
from museeg.synth import GeneratorSpec, generate, replay


@pytest.fixture
def stack(tmp_path):
    svc = IngestService(
        out_dir=tmp_path,
        participants=[{"id": "p1", "udp_port": 0}],
        session_id="live",
        clock_mode="device",
    )
    svc.start()
    cast = LiveBroadcaster(svc, rate_hz=20.0).start()
    yield svc, cast, tmp_path
    cast.stop()
    if svc._running:
        svc.stop(finalize=False)


def test_live_frames_and_commands(stack):
    svc, cast, tmp_path = stack
    session = generate(
        GeneratorSpec(duration_s=6.0, band_amplitudes={"alpha": (30.0,) * 4},
                      noise_std=1.0, seed=2)
    )
    replay(session, "127.0.0.1", svc.udp_port("p1"), rate=0, batch=32,
           throttle=lambda n: time.sleep(0.0005))
    deadline = time.monotonic() + 10
    while svc.frames_processed() < 1400 and time.monotonic() < deadline:
        time.sleep(0.05)

    with connect(cast.url) as ws:
        frame = None
        for _ in range(40):
            data = json.loads(ws.recv(timeout=5))
            if data.get("type") == "live" and data["participants"]["p1"]["band_powers"]:
                frame = data
                break
        assert frame is not None
        p1 = frame["participants"]["p1"]
        # clean alpha feed: alpha is the dominant rolling band
        bp = p1["band_powers"]
        assert bp["alpha"] == max(bp.values())
        assert p1["rows"]["eeg"] > 1000
        assert len(p1["trace"]["channels"]) == 4
        assert len(p1["trace"]["channels"][0]) <= 512
        assert p1["validity"][0] > 0.9

        ws.send(json.dumps({"type": "mark_event", "label": "block1_start"}))
        ack = None
        for _ in range(40):
            data = json.loads(ws.recv(timeout=5))
            if data.get("type") == "ack":
                ack = data
                break
        assert ack is not None and ack["ok"]

        ws.send(json.dumps({"type": "stop_block"}))
        for _ in range(40):
            data = json.loads(ws.recv(timeout=5))
            if data.get("type") == "ack":
                assert not data["ok"]  # no active block: rejection surfaced
                break

    manifest = svc.stop()
    _, rows = read_stream_csv(tmp_path / manifest.events_file)
    assert any(r[2] == "mark" and r[3] == "block1_start" for r in rows)


def test_no_clients_is_noop(stack):
    svc, cast, _ = stack
    time.sleep(0.3)
    assert cast.client_count() == 0
    assert svc._running


def test_slow_consumer_disconnected(tmp_path):
    svc = IngestService(
        out_dir=tmp_path,
        participants=[{"id": "p1", "udp_port": 0}],
        session_id="slow",
        clock_mode="device",
    )
    svc.start()
    # heavy frames (full 5 s trace) at a fast tick so TCP slack fills quickly
    session = generate(
        GeneratorSpec(duration_s=6.0, band_amplitudes={"alpha": (30.0,) * 4},
                      noise_std=1.0, seed=4)
    )
    replay(session, "127.0.0.1", svc.udp_port("p1"), rate=0, batch=32,
           throttle=lambda n: time.sleep(0.0005))
    cast = LiveBroadcaster(svc, rate_hz=100.0, queue_limit=4).start()
    ws = connect(cast.url)
    try:
        # never read: the send queue overflows and the server drops us
        deadline = time.monotonic() + 30
        while time.monotonic() < deadline and cast.slow_disconnects == 0:
            time.sleep(0.1)
        assert cast.slow_disconnects >= 1
        assert cast.client_count() == 0
        assert svc._running  # recording unaffected
    finally:
        try:
            ws.close()
        except ConnectionClosed:
            pass
        cast.stop()
        svc.stop(finalize=False)


def test_unknown_path_rejected(stack):
    _, cast, _ = stack
    url = cast.url.replace("/live", "/other")
    with connect(url) as ws:
        with pytest.raises(ConnectionClosed):
            ws.recv(timeout=5)
