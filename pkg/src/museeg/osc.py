"""OSC 1.0 codec: messages, bundles (recursive, with time tags), UDP payloads.

Supports the core argument types int32 ('i'), float32 ('f'), string ('s')
and blob ('b'). decode_packet/encode_packet preserve structure so that
encode(decode(bytes)) reproduces well-formed datagrams byte for byte;
parse_osc_packet flattens bundles into messages, each stamped with its
immediately enclosing bundle's time tag.

Time tags are kept as raw NTP (seconds, fraction) 32-bit pairs; the float
view used for device timestamps is seconds + fraction / 2**32.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import MalformedPacketError

IMMEDIATE = (0, 1)  # OSC "execute immediately" time tag

_FRAC = 2.0**32


@dataclass(frozen=True)
class OscMessage:
    address: str
    type_tags: str  # leading ','
    args: tuple
    source: Optional[tuple[str, int]] = None
    t_arrival: Optional[float] = None
    timetag: Optional[float] = None  # enclosing bundle's tag, seconds

    def __post_init__(self):
        if not self.address.startswith("/"):
            raise ValueError(f"address must begin with '/', got {self.address!r}")
        if not self.type_tags.startswith(","):
            raise ValueError(f"type tags must begin with ',', got {self.type_tags!r}")
        if len(self.args) != len(self.type_tags) - 1:
            raise ValueError(
                f"{len(self.args)} args for {len(self.type_tags) - 1} type tags"
            )


@dataclass(frozen=True)
class OscBundle:
    timetag_raw: tuple[int, int]  # (NTP seconds, fraction), uint32 each
    elements: tuple[Union["OscBundle", OscMessage], ...]

    @property
    def timetag_seconds(self) -> float:
        sec, frac = self.timetag_raw
        return sec + frac / _FRAC


def timetag_from_seconds(t: float) -> tuple[int, int]:
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"time tag seconds must be finite and ≥ 0, got {t}")
    sec = int(t)
    frac = int(round((t - sec) * _FRAC))
    if frac >= 2**32:
        sec += 1
        frac = 0
    return sec, frac


def _pad4(n: int) -> int:
    return (n + 3) & ~3


def _encode_string(s: str) -> bytes:
    raw = s.encode("utf-8") + b"\x00"
    return raw + b"\x00" * (_pad4(len(raw)) - len(raw))


def _encode_blob(data: bytes) -> bytes:
    body = struct.pack(">i", len(data)) + data
    return body + b"\x00" * (_pad4(len(body)) - len(body))


def encode_message(msg: OscMessage) -> bytes:
    parts = [_encode_string(msg.address), _encode_string(msg.type_tags)]
    for tag, arg in zip(msg.type_tags[1:], msg.args):
        if tag == "i":
            parts.append(struct.pack(">i", arg))
        elif tag == "f":
            parts.append(struct.pack(">f", arg))
        elif tag == "s":
            parts.append(_encode_string(arg))
        elif tag == "b":
            parts.append(_encode_blob(arg))
        else:
            raise ValueError(f"unsupported type tag {tag!r}")
    return b"".join(parts)


def encode_bundle(bundle: OscBundle) -> bytes:
    parts = [_encode_string("#bundle"), struct.pack(">II", *bundle.timetag_raw)]
    for el in bundle.elements:
        payload = encode_packet(el)
        parts.append(struct.pack(">i", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def encode_packet(element: Union[OscMessage, OscBundle]) -> bytes:
    if isinstance(element, OscBundle):
        return encode_bundle(element)
    return encode_message(element)


class _Reader:
    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, pos: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def fail(self, why: str) -> MalformedPacketError:
        return MalformedPacketError(why, self.pos)

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise self.fail(f"truncated: needed {n} bytes, "
                            f"{self.end - self.pos} remain")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def read_string(self) -> str:
        nul = self.data.find(b"\x00", self.pos, self.end)
        if nul < 0:
            raise self.fail("unterminated string")
        raw = self.data[self.pos : nul]
        advance = _pad4(nul - self.pos + 1)
        if self.pos + advance > self.end:
            raise self.fail("string padding truncated")
        pad = self.data[nul : self.pos + advance]
        if pad.strip(b"\x00"):
            raise self.fail("non-zero bytes in string padding")
        self.pos += advance
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise self.fail("string is not valid UTF-8") from None

    def read_blob(self) -> bytes:
        (size,) = struct.unpack(">i", self.take(4))
        if size < 0:
            raise self.fail(f"negative blob size {size}")
        body = self.take(size)
        pad_n = _pad4(size) - size
        pad = self.take(pad_n)
        if pad.strip(b"\x00"):
            raise self.fail("non-zero bytes in blob padding")
        return body


def _decode_message(r: _Reader, source, t_arrival, timetag) -> OscMessage:
    addr_pos = r.pos
    address = r.read_string()
    if not address.startswith("/"):
        raise MalformedPacketError(f"address {address!r} does not begin with '/'", addr_pos)
    tags_pos = r.pos
    tags = r.read_string()
    if not tags.startswith(","):
        raise MalformedPacketError("type tag string does not begin with ','", tags_pos)
    args = []
    for tag in tags[1:]:
        if tag == "i":
            args.append(struct.unpack(">i", r.take(4))[0])
        elif tag == "f":
            args.append(struct.unpack(">f", r.take(4))[0])
        elif tag == "s":
            args.append(r.read_string())
        elif tag == "b":
            args.append(r.read_blob())
        else:
            raise MalformedPacketError(f"unsupported type tag {tag!r}", tags_pos)
    if r.pos != r.end:
        raise MalformedPacketError(
            f"{r.end - r.pos} trailing bytes after the last argument", r.pos
        )
    return OscMessage(
        address=address,
        type_tags=tags,
        args=tuple(args),
        source=source,
        t_arrival=t_arrival,
        timetag=timetag,
    )


def _decode_element(r: _Reader, source, t_arrival):
    if r.data[r.pos : r.pos + 8] == b"#bundle\x00":
        r.pos += 8
        sec, frac = struct.unpack(">II", r.take(8))
        elements = []
        while r.pos < r.end:
            (size,) = struct.unpack(">i", r.take(4))
            if size < 0 or size % 4 != 0:
                raise r.fail(f"bundle element size {size} is not a positive multiple of 4")
            if r.pos + size > r.end:
                raise r.fail(f"bundle element of {size} bytes exceeds packet")
            sub = _Reader(r.data, r.pos, r.pos + size)
            elements.append(_decode_element(sub, source, t_arrival))
            r.pos += size
        return OscBundle(timetag_raw=(sec, frac), elements=tuple(elements))
    return _decode_message(r, source, t_arrival, None)


def decode_packet(
    data: bytes,
    source: Optional[tuple[str, int]] = None,
    t_arrival: Optional[float] = None,
) -> Union[OscMessage, OscBundle]:
    """Structure-preserving decode of one UDP datagram."""
    if len(data) == 0:
        raise MalformedPacketError("empty datagram", 0)
    if len(data) % 4 != 0:
        raise MalformedPacketError(
            f"datagram length {len(data)} is not a multiple of 4", len(data)
        )
    return _decode_element(_Reader(data), source, t_arrival)


def _flatten(element, timetag: Optional[float], out: list[OscMessage]) -> None:
    if isinstance(element, OscBundle):
        raw = element.timetag_raw
        tag = None if raw == IMMEDIATE else element.timetag_seconds
        for el in element.elements:
            _flatten(el, tag, out)
    else:
        if timetag is not None:
            element = OscMessage(
                address=element.address,
                type_tags=element.type_tags,
                args=element.args,
                source=element.source,
                t_arrival=element.t_arrival,
                timetag=timetag,
            )
        out.append(element)


def parse_osc_packet(
    data: bytes,
    source: Optional[tuple[str, int]] = None,
    t_arrival: Optional[float] = None,
) -> list[OscMessage]:
    """Decode a datagram into messages; bundle members share the bundle's tag."""
    out: list[OscMessage] = []
    _flatten(decode_packet(data, source, t_arrival), None, out)
    return out


def message(address: str, *args, source=None, t_arrival=None) -> OscMessage:
    """Build a message, inferring type tags from Python argument types."""
    tags = [","]
    for a in args:
        if isinstance(a, bool):
            raise TypeError("boolean OSC arguments are not supported")
        if isinstance(a, int):
            tags.append("i")
        elif isinstance(a, float):
            tags.append("f")
        elif isinstance(a, str):
            tags.append("s")
        elif isinstance(a, (bytes, bytearray)):
            tags.append("b")
        else:
            raise TypeError(f"unsupported OSC argument type {type(a).__name__}")
    return OscMessage(
        address=address,
        type_tags="".join(tags),
        args=tuple(bytes(a) if isinstance(a, bytearray) else a for a in args),
        source=source,
        t_arrival=t_arrival,
    )


def bundle(timetag_seconds: float, *elements) -> OscBundle:
    return OscBundle(
        timetag_raw=timetag_from_seconds(timetag_seconds), elements=tuple(elements)
    )
