"""Rank-to-rank message transport: framing plus in-process and TCP backends."""

from .frame import (MSG_CHUNK_DATA, MSG_CONTROL, MSG_FILE_TRANSFER,
                    MSG_READINESS, MSG_SCHEDULE, Frame, FrameReader,
                    ProtocolError, TransportClosed, TransportError,
                    decode_frame, encode_frame, pack_chunk, pack_control,
                    pack_file, pack_readiness, pack_schedule, unpack_chunk,
                    unpack_control, unpack_file, unpack_readiness,
                    unpack_schedule)
from .inproc import InprocFabric
from .router import Demux
from .tcp import TcpEndpoint

__all__ = [
    "Demux", "Frame", "FrameReader", "InprocFabric", "MSG_CHUNK_DATA",
    "MSG_CONTROL", "MSG_FILE_TRANSFER", "MSG_READINESS", "MSG_SCHEDULE",
    "ProtocolError", "TcpEndpoint", "TransportClosed", "TransportError",
    "decode_frame", "encode_frame", "pack_chunk", "pack_control", "pack_file",
    "pack_readiness", "pack_schedule", "unpack_chunk", "unpack_control",
    "unpack_file", "unpack_readiness", "unpack_schedule",
]
