"""Wire framing shared by every backend.

Frame layout, all little-endian:
    length  u32   counts every byte after itself: 1 (type) + 4 (src) + payload
    type    u8    0=Readiness 1=Schedule 2=ChunkData 3=FileTransfer 4=Control
    src     u32   sender rank
    payload bytes

Payload layouts:
    Readiness     epoch u32 | name_len u16 | name
    Schedule      epoch u32 | count u16 | repeated (name_len u16 | name)
    ChunkData     epoch u32 | name_len u16 | name | chunk u32 | offset u64
                  | count u32 | count float32 values
    FileTransfer  id_len u16 | file id | size u64 | raw bytes
    Control       kind_len u16 | kind | body_len u32 | body
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MSG_READINESS = 0
MSG_SCHEDULE = 1
MSG_CHUNK_DATA = 2
MSG_FILE_TRANSFER = 3
MSG_CONTROL = 4

_VALID_TYPES = (MSG_READINESS, MSG_SCHEDULE, MSG_CHUNK_DATA,
                MSG_FILE_TRANSFER, MSG_CONTROL)

_HEAD = struct.Struct("<IBI")


class TransportError(Exception):
    pass


class ProtocolError(TransportError):
    pass


class TransportClosed(TransportError):
    pass


@dataclass(frozen=True)
class Frame:
    msg_type: int
    src_rank: int
    payload: bytes

    def __post_init__(self):
        if self.msg_type not in _VALID_TYPES:
            raise ProtocolError(f"unknown msg_type {self.msg_type}")
        if self.src_rank < 0:
            raise ProtocolError(f"bad src_rank {self.src_rank}")


def encode_frame(frame: Frame) -> bytes:
    return _HEAD.pack(1 + 4 + len(frame.payload), frame.msg_type,
                      frame.src_rank) + frame.payload


def decode_frame(data: bytes, offset: int = 0):
    """Decode one frame at ``offset``; returns (frame, next offset)."""
    if len(data) - offset < _HEAD.size:
        raise ProtocolError("truncated frame header")
    length, msg_type, src = _HEAD.unpack_from(data, offset)
    if length < 5:
        raise ProtocolError(f"frame length {length} below minimum")
    end = offset + 4 + length
    if len(data) < end:
        raise ProtocolError("truncated frame payload")
    return Frame(msg_type, src, bytes(data[offset + _HEAD.size:end])), end


class FrameReader:
    """Incremental decoder for stream transports: feed bytes, pop frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < _HEAD.size:
                break
            length = struct.unpack_from("<I", self._buf)[0]
            if length < 5:
                raise ProtocolError(f"frame length {length} below minimum")
            if len(self._buf) < 4 + length:
                break
            frame, end = decode_frame(bytes(self._buf[:4 + length]))
            del self._buf[:end]
            out.append(frame)
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# -- payload codecs ---------------------------------------------------------


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProtocolError("name too long")
    return struct.pack("<H", len(raw)) + raw


def _unpack_name(payload: bytes, off: int):
    (n,) = struct.unpack_from("<H", payload, off)
    off += 2
    return payload[off:off + n].decode("utf-8"), off + n


def pack_readiness(epoch: int, name: str) -> bytes:
    return struct.pack("<I", epoch) + _pack_name(name)


def unpack_readiness(payload: bytes):
    (epoch,) = struct.unpack_from("<I", payload)
    name, off = _unpack_name(payload, 4)
    if off != len(payload):
        raise ProtocolError("trailing bytes in readiness payload")
    return epoch, name


def pack_schedule(epoch: int, names) -> bytes:
    names = list(names)
    if len(names) > 0xFFFF:
        raise ProtocolError("schedule too long")
    parts = [struct.pack("<IH", epoch, len(names))]
    parts.extend(_pack_name(n) for n in names)
    return b"".join(parts)


def unpack_schedule(payload: bytes):
    epoch, count = struct.unpack_from("<IH", payload)
    off = 6
    names = []
    for _ in range(count):
        name, off = _unpack_name(payload, off)
        names.append(name)
    if off != len(payload):
        raise ProtocolError("trailing bytes in schedule payload")
    return epoch, names


def pack_chunk(epoch: int, name: str, chunk_index: int, offset: int,
               values) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 1:
        raise ProtocolError("chunk values must be one-dimensional")
    return (struct.pack("<I", epoch) + _pack_name(name)
            + struct.pack("<IQI", chunk_index, offset, values.size)
            + values.tobytes())


def unpack_chunk(payload: bytes):
    (epoch,) = struct.unpack_from("<I", payload)
    name, off = _unpack_name(payload, 4)
    chunk_index, offset, count = struct.unpack_from("<IQI", payload, off)
    off += 16
    if len(payload) != off + 4 * count:
        raise ProtocolError("chunk payload size mismatch")
    values = np.frombuffer(payload, dtype="<f4", count=count, offset=off).copy()
    return epoch, name, chunk_index, offset, values


def pack_file(file_id: str, data: bytes) -> bytes:
    return _pack_name(file_id) + struct.pack("<Q", len(data)) + data


def unpack_file(payload: bytes):
    file_id, off = _unpack_name(payload, 0)
    (size,) = struct.unpack_from("<Q", payload, off)
    off += 8
    if len(payload) != off + size:
        raise ProtocolError("file payload size mismatch")
    return file_id, payload[off:]


def pack_control(kind: str, body: bytes = b"") -> bytes:
    return _pack_name(kind) + struct.pack("<I", len(body)) + body


def unpack_control(payload: bytes):
    kind, off = _unpack_name(payload, 0)
    (size,) = struct.unpack_from("<I", payload, off)
    off += 4
    if len(payload) != off + size:
        raise ProtocolError("control payload size mismatch")
    return kind, payload[off:]
