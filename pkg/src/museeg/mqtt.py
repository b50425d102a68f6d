"""Minimal MQTT 3.1.1 client and in-process broker.

The client supports clean-session connect, QoS 0/1 publish and subscribe,
keepalive pings and graceful disconnect; that is all the gaze stream needs.
The broker exists so simulated sessions and tests run without external
infrastructure; it routes PUBLISH packets to matching subscriptions
('+' and '#' wildcards) with QoS capped at 1.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    ConnectionRefusedByBrokerError,
    NetworkUnreachableError,
    SubscriptionDeniedError,
)

CONNECT, CONNACK, PUBLISH, PUBACK = 1, 2, 3, 4
SUBSCRIBE, SUBACK, UNSUBSCRIBE, UNSUBACK = 8, 9, 10, 11
PINGREQ, PINGRESP, DISCONNECT = 12, 13, 14


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


def _encode_varint(n: int) -> bytes:
    out = bytearray()
    while True:
        byte = n % 128
        n //= 128
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _packet(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + _encode_varint(len(body)) + body


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("socket closed")
        buf += chunk
    return buf


def _read_packet(sock: socket.socket) -> tuple[int, int, bytes]:
    head = _recv_exact(sock, 1)[0]
    ptype, flags = head >> 4, head & 0x0F
    length = 0
    shift = 0
    while True:
        byte = _recv_exact(sock, 1)[0]
        length |= (byte & 0x7F) << shift
        if not byte & 0x80:
            break
        shift += 7
        if shift > 21:
            raise ConnectionError("malformed remaining-length varint")
    body = _recv_exact(sock, length) if length else b""
    return ptype, flags, body


def topic_matches(filter_: str, topic: str) -> bool:
    """MQTT topic filter match with '+' (one level) and '#' (rest)."""
    f_parts = filter_.split("/")
    t_parts = topic.split("/")
    for i, f in enumerate(f_parts):
        if f == "#":
            return True
        if i >= len(t_parts):
            return False
        if f != "+" and f != t_parts[i]:
            return False
    return len(f_parts) == len(t_parts)


class MqttClient:
    """Blocking MQTT 3.1.1 client with a background reader thread."""

    def __init__(
        self,
        host: str,
        port: int,
        client_id: str,
        keepalive: int = 30,
        on_message: Optional[Callable[[str, bytes], None]] = None,
        on_disconnect: Optional[Callable[[Exception], None]] = None,
    ):
        self.host = host
        self.port = port
        self.client_id = client_id
        self.keepalive = keepalive
        self.on_message = on_message
        self.on_disconnect = on_disconnect
        self._sock: Optional[socket.socket] = None
        self._send_lock = threading.Lock()
        self._reader: Optional[threading.Thread] = None
        self._suback: dict[int, list[int]] = {}
        self._suback_event = threading.Event()
        self._next_pid = 1
        self._closing = False
        self._last_send = 0.0

    @property
    def connected(self) -> bool:
        return self._sock is not None

    def connect(self, timeout: float = 5.0) -> None:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=timeout)
        except OSError as exc:
            raise NetworkUnreachableError(
                f"cannot reach MQTT broker {self.host}:{self.port}: {exc}"
            ) from exc
        sock.settimeout(timeout)
        body = (
            _encode_str("MQTT")
            + bytes([4])           # protocol level 3.1.1
            + bytes([0x02])        # clean session
            + struct.pack(">H", self.keepalive)
            + _encode_str(self.client_id)
        )
        sock.sendall(_packet(CONNECT, 0, body))
        ptype, _, resp = _read_packet(sock)
        if ptype != CONNACK or len(resp) < 2:
            sock.close()
            raise ConnectionRefusedByBrokerError("no CONNACK from broker")
        if resp[1] != 0:
            sock.close()
            raise ConnectionRefusedByBrokerError(f"broker returned code {resp[1]}")
        sock.settimeout(1.0)
        self._sock = sock
        self._closing = False
        self._last_send = time.monotonic()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _send(self, data: bytes) -> None:
        sock = self._sock
        if sock is None:
            raise ConnectionError("not connected")
        with self._send_lock:
            sock.sendall(data)
            self._last_send = time.monotonic()

    def _read_loop(self) -> None:
        sock = self._sock
        try:
            while not self._closing and sock is not None:
                try:
                    ptype, flags, body = _read_packet(sock)
                except socket.timeout:
                    if time.monotonic() - self._last_send > self.keepalive / 2:
                        self._send(_packet(PINGREQ, 0, b""))
                    continue
                if ptype == PUBLISH:
                    qos = (flags >> 1) & 0x03
                    (tlen,) = struct.unpack(">H", body[:2])
                    topic = body[2 : 2 + tlen].decode("utf-8")
                    pos = 2 + tlen
                    if qos > 0:
                        (pid,) = struct.unpack(">H", body[pos : pos + 2])
                        pos += 2
                        self._send(_packet(PUBACK, 0, struct.pack(">H", pid)))
                    payload = body[pos:]
                    if self.on_message is not None:
                        self.on_message(topic, payload)
                elif ptype == SUBACK:
                    (pid,) = struct.unpack(">H", body[:2])
                    self._suback[pid] = list(body[2:])
                    self._suback_event.set()
                # PUBACK / PINGRESP need no action
        except (ConnectionError, OSError) as exc:
            if not self._closing:
                self._sock = None
                if self.on_disconnect is not None:
                    self.on_disconnect(exc)
            return
        finally:
            if self._closing and sock is not None:
                sock.close()

    def subscribe(self, topic: str, qos: int = 1, timeout: float = 5.0) -> None:
        pid = self._next_pid
        self._next_pid = self._next_pid % 65535 + 1
        body = struct.pack(">H", pid) + _encode_str(topic) + bytes([qos])
        self._suback_event.clear()
        self._send(_packet(SUBSCRIBE, 0x02, body))
        deadline = time.monotonic() + timeout
        while pid not in self._suback:
            if time.monotonic() > deadline:
                raise SubscriptionDeniedError(f"no SUBACK for {topic!r}")
            self._suback_event.wait(0.05)
        codes = self._suback.pop(pid)
        if any(c == 0x80 for c in codes):
            raise SubscriptionDeniedError(f"broker refused subscription to {topic!r}")

    def publish(self, topic: str, payload: bytes, qos: int = 0) -> None:
        flags = qos << 1
        body = _encode_str(topic)
        if qos > 0:
            pid = self._next_pid
            self._next_pid = self._next_pid % 65535 + 1
            body += struct.pack(">H", pid)
        body += payload
        self._send(_packet(PUBLISH, flags, body))

    def disconnect(self) -> None:
        self._closing = True
        sock = self._sock
        self._sock = None
        if sock is not None:
            try:
                with self._send_lock:
                    sock.sendall(_packet(DISCONNECT, 0, b""))
            except OSError:
                pass
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()


@dataclass
class _BrokerSession:
    sock: socket.socket
    addr: tuple
    client_id: str = ""
    subscriptions: dict[str, int] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    alive: bool = True

    def send(self, data: bytes) -> None:
        with self.lock:
            self.sock.sendall(data)


class MiniMqttBroker:
    """Single-process MQTT 3.1.1 broker for simulation and tests."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self.host, self.port = self._listener.getsockname()
        self._sessions: list[_BrokerSession] = []
        self._lock = threading.Lock()
        self._running = False
        self._accept_thread: Optional[threading.Thread] = None
        self._next_pid = 1
        self.messages_routed = 0

    def start(self) -> "MiniMqttBroker":
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            sessions = list(self._sessions)
            self._sessions.clear()
        for s in sessions:
            s.alive = False
            try:
                s.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                s.sock.close()
            except OSError:
                pass

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            session = _BrokerSession(sock=sock, addr=addr)
            with self._lock:
                self._sessions.append(session)
            threading.Thread(
                target=self._serve, args=(session,), daemon=True
            ).start()

    def _serve(self, session: _BrokerSession) -> None:
        sock = session.sock
        try:
            ptype, _, body = _read_packet(sock)
            if ptype != CONNECT:
                sock.close()
                return
            # client id sits after the 10-byte variable header
            (cid_len,) = struct.unpack(">H", body[10:12])
            session.client_id = body[12 : 12 + cid_len].decode("utf-8")
            session.send(_packet(CONNACK, 0, b"\x00\x00"))
            while self._running and session.alive:
                ptype, flags, body = _read_packet(sock)
                if ptype == SUBSCRIBE:
                    (pid,) = struct.unpack(">H", body[:2])
                    pos = 2
                    codes = bytearray()
                    while pos < len(body):
                        (tlen,) = struct.unpack(">H", body[pos : pos + 2])
                        topic = body[pos + 2 : pos + 2 + tlen].decode("utf-8")
                        qos = min(body[pos + 2 + tlen], 1)
                        session.subscriptions[topic] = qos
                        codes.append(qos)
                        pos += 3 + tlen
                    session.send(_packet(SUBACK, 0, struct.pack(">H", pid) + bytes(codes)))
                elif ptype == PUBLISH:
                    qos = (flags >> 1) & 0x03
                    (tlen,) = struct.unpack(">H", body[:2])
                    topic = body[2 : 2 + tlen].decode("utf-8")
                    pos = 2 + tlen
                    if qos > 0:
                        (pid,) = struct.unpack(">H", body[pos : pos + 2])
                        pos += 2
                        session.send(_packet(PUBACK, 0, struct.pack(">H", pid)))
                    self._route(topic, body[pos:], qos)
                elif ptype == PINGREQ:
                    session.send(_packet(PINGRESP, 0, b""))
                elif ptype == DISCONNECT:
                    break
                # PUBACKs from subscribers are consumed silently
        except (ConnectionError, OSError):
            pass
        finally:
            session.alive = False
            try:
                sock.close()
            except OSError:
                pass
            with self._lock:
                if session in self._sessions:
                    self._sessions.remove(session)

    def _route(self, topic: str, payload: bytes, pub_qos: int) -> None:
        with self._lock:
            sessions = list(self._sessions)
        for s in sessions:
            if not s.alive:
                continue
            for filt, sub_qos in s.subscriptions.items():
                if topic_matches(filt, topic):
                    qos = min(pub_qos, sub_qos)
                    body = _encode_str(topic)
                    if qos > 0:
                        body += struct.pack(">H", self._next_pid)
                        self._next_pid = self._next_pid % 65535 + 1
                    body += payload
                    try:
                        s.send(_packet(PUBLISH, qos << 1, body))
                        self.messages_routed += 1
                    except OSError:
                        s.alive = False
                    break
