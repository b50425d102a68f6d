"""WebSocket live broadcast for the operator dashboard.

Serves the "/live" endpoint. Outbound: one JSON frame per tick (default
10 Hz) with per-participant trace window, validity rates, rolling band
powers, FAA/arousal, clock-sync health and the active condition — the
schema produced by IngestService.live_snapshot(). Inbound: operator
commands {"type": "mark_event"|"start_block"|"stop_block", "label": ...}
answered with {"type": "ack", "ok": bool, ...}.

Slow consumers are disconnected once their send queue overflows; recording
is never affected by broadcast backpressure.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
from typing import Optional

from websockets.exceptions import ConnectionClosed
from websockets.sync.server import ServerConnection, serve

logger = logging.getLogger(__name__)

SEND_QUEUE_LIMIT = 8


class LiveBroadcaster:
    def __init__(self, service, host: str = "127.0.0.1", port: int = 0,
                 rate_hz: float = 10.0, queue_limit: int = SEND_QUEUE_LIMIT):
        self.service = service
        self.rate_hz = rate_hz
        self.queue_limit = queue_limit
        self.slow_disconnects = 0
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(8)
        self.host, self.port = self._sock.getsockname()
        self._server = None
        self._clients: dict[ServerConnection, queue.Queue] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}/live"

    def start(self) -> "LiveBroadcaster":
        self._server = serve(self._handler, sock=self._sock, close_timeout=0.5)
        t_serve = threading.Thread(target=self._server.serve_forever, daemon=True)
        t_tick = threading.Thread(target=self._tick_loop, daemon=True)
        t_serve.start()
        t_tick.start()
        self._threads = [t_serve, t_tick]
        return self

    def stop(self) -> None:
        self._stop.set()
        with self._lock:
            clients = list(self._clients)
            self._clients.clear()
        for conn in clients:
            try:
                conn.close()
            except Exception:
                pass
        if self._server is not None:
            self._server.shutdown()

    def client_count(self) -> int:
        with self._lock:
            return len(self._clients)

    def _handler(self, conn: ServerConnection) -> None:
        if conn.request is not None and conn.request.path != "/live":
            conn.close(code=1008, reason="unknown endpoint")
            return
        outbound: queue.Queue = queue.Queue(maxsize=self.queue_limit)
        with self._lock:
            self._clients[conn] = outbound
        sender = threading.Thread(
            target=self._send_loop, args=(conn, outbound), daemon=True
        )
        sender.start()
        try:
            while not self._stop.is_set():
                try:
                    raw = conn.recv(timeout=0.5)
                except TimeoutError:
                    continue
                self._handle_command(conn, raw)
        except (ConnectionClosed, OSError):
            pass
        finally:
            with self._lock:
                self._clients.pop(conn, None)
            outbound.put(None)

    def _handle_command(self, conn: ServerConnection, raw) -> None:
        try:
            payload = json.loads(raw)
            ctype = payload["type"]
        except (ValueError, KeyError, TypeError):
            conn.send(json.dumps({"type": "ack", "ok": False,
                                  "error": "malformed command"}))
            return
        result = self.service.command(
            ctype,
            label=payload.get("label"),
            participant=payload.get("participant"),
        )
        conn.send(json.dumps({"type": "ack", **result}))

    def _send_loop(self, conn: ServerConnection, outbound: queue.Queue) -> None:
        while True:
            item = outbound.get()
            if item is None:
                return
            try:
                conn.send(item)
            except (ConnectionClosed, OSError):
                return

    def _tick_loop(self) -> None:
        interval = 1.0 / self.rate_hz
        while not self._stop.wait(interval):
            with self._lock:
                clients = dict(self._clients)
            if not clients:
                continue
            data = json.dumps(self.service.live_snapshot())
            for conn, outbound in clients.items():
                try:
                    outbound.put_nowait(data)
                except queue.Full:
                    # slow consumer: drop the connection, never the recording
                    logger.warning("disconnecting slow live consumer")
                    self.slow_disconnects += 1
                    with self._lock:
                        self._clients.pop(conn, None)
                    try:
                        conn.close(code=1013, reason="slow consumer")
                    except Exception:
                        pass
