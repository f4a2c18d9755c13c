"""Framed wire messages.

Frame: ``b"PCM"`` magic, version byte, type byte, big-endian u32 body
length, body. Query and Response bodies carry a JSON header followed by
length-prefixed serialized ciphertexts; Error bodies carry a u16 code and
UTF-8 text.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Sequence

from pcm.errors import MalformedFrame, UnsupportedVersion

MAGIC = b"PCM"
VERSION = 0x01
MAX_BODY = 1 << 30
_HEAD = struct.Struct(">3sBBI")


class MessageType(IntEnum):
    HELLO = 1
    SETUP = 2
    QUERY = 3
    RESPONSE = 4
    ERROR = 5


class ErrorCode(IntEnum):
    SETUP_REQUIRED = 1
    UNEXPECTED_MESSAGE = 2
    MALFORMED = 3
    CONFIG_MISMATCH = 4
    EVALUATION_FAILED = 5
    BAD_QUERY = 6


@dataclass(frozen=True)
class WireMessage:
    type: MessageType
    body: bytes = b""

    def to_bytes(self) -> bytes:
        return _HEAD.pack(MAGIC, VERSION, int(self.type), len(self.body)) + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "WireMessage":
        if len(data) < _HEAD.size:
            raise MalformedFrame("truncated frame header")
        msg_type, length = _parse_head(data[:_HEAD.size])
        body = data[_HEAD.size:]
        if len(body) != length:
            raise MalformedFrame(f"length prefix {length} does not match body of {len(body)} bytes")
        return cls(msg_type, body)


def _parse_head(head: bytes) -> tuple[MessageType, int]:
    magic, version, msg_type, length = _HEAD.unpack(head)
    if magic != MAGIC:
        raise MalformedFrame("bad magic")
    if version != VERSION:
        raise UnsupportedVersion(f"wire version {version:#04x}")
    try:
        t = MessageType(msg_type)
    except ValueError:
        raise MalformedFrame(f"unknown message type {msg_type}") from None
    if length > MAX_BODY:
        raise MalformedFrame(f"body of {length} bytes exceeds the limit")
    return t, length


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks, left = [], n
    while left:
        chunk = stream.read(left)
        if not chunk:
            raise MalformedFrame(f"stream ended {left} bytes early")
        chunks.append(chunk)
        left -= len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> WireMessage | None:
    """Next frame, or ``None`` on a clean end of stream."""
    first = stream.read(1)
    if not first:
        return None
    head = first + _read_exact(stream, _HEAD.size - 1)
    msg_type, length = _parse_head(head)
    return WireMessage(msg_type, _read_exact(stream, length))


def write_message(stream: BinaryIO, msg: WireMessage) -> int:
    data = msg.to_bytes()
    stream.write(data)
    stream.flush()
    return len(data)


# -- bodies ------------------------------------------------------------------

def json_body(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def parse_json_body(body: bytes) -> dict:
    try:
        obj = json.loads(body.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"bad JSON body: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedFrame("JSON body must be an object")
    return obj


def pack_payload(header: dict, blobs: Sequence[bytes]) -> bytes:
    """Body of Query and Response messages."""
    h = json_body(header)
    parts = [struct.pack(">I", len(h)), h, struct.pack(">I", len(blobs))]
    for b in blobs:
        parts.append(struct.pack(">I", len(b)))
        parts.append(b)
    return b"".join(parts)


def unpack_payload(body: bytes) -> tuple[dict, list[bytes]]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise MalformedFrame("payload truncated")
        out = body[pos:pos + n]
        pos += n
        return out

    (hlen,) = struct.unpack(">I", take(4))
    header = parse_json_body(take(hlen))
    (count,) = struct.unpack(">I", take(4))
    blobs = []
    for _ in range(count):
        (n,) = struct.unpack(">I", take(4))
        blobs.append(take(n))
    if pos != len(body):
        raise MalformedFrame("trailing bytes after payload")
    return header, blobs


def error_body(code: int, text: str) -> bytes:
    return struct.pack(">H", int(code)) + text.encode()


def parse_error_body(body: bytes) -> tuple[int, str]:
    if len(body) < 2:
        raise MalformedFrame("error body too short")
    (code,) = struct.unpack(">H", body[:2])
    try:
        return code, body[2:].decode()
    except UnicodeDecodeError as exc:
        raise MalformedFrame("error text is not UTF-8") from exc


def error_message(code: int, text: str) -> WireMessage:
    return WireMessage(MessageType.ERROR, error_body(code, text))
