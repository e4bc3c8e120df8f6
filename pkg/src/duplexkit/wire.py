"""Length-prefixed binary framing for streaming sessions.

Frame layout on the byte stream::

    +----------------+--------+-----------------+
    | length (u32 BE)| type u8| payload bytes   |
    +----------------+--------+-----------------+

``length`` counts the type byte plus the payload, so an empty-payload frame
has length 1.  Payloads are either raw little-endian 16-bit PCM (AUDIO_DATA)
or UTF-8 JSON (everything else).
"""
from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

HEADER = struct.Struct(">IB")
#: hard sanity cap on a single frame; service-level overload limits are lower
MAX_FRAME_PAYLOAD = 1 << 24


class ProtocolError(RuntimeError):
    """Malformed frame, unknown type, or unexpected message."""


class ConnectionLost(ConnectionError):
    """Peer went away mid-session."""


class RemoteTimeout(TimeoutError):
    """Peer did not answer within the deadline."""


class MessageType(IntEnum):
    HELLO = 1
    AUDIO_DATA = 2
    TEACHER_TEXT = 3
    STATE_EVENT = 4
    ASR_PARTIAL = 5
    ACTION_EVENT = 6
    FINALIZE = 7
    ERROR = 8
    BYE = 9


@dataclass(frozen=True)
class WireFrame:
    type: MessageType
    payload: bytes = b""

    def encode(self) -> bytes:
        return HEADER.pack(len(self.payload) + 1, int(self.type)) + self.payload

    def json(self) -> dict:
        try:
            return json.loads(self.payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"bad JSON payload in {self.type.name} frame: {exc}") from exc


def json_frame(msg_type: MessageType, obj) -> WireFrame:
    return WireFrame(msg_type, json.dumps(obj, ensure_ascii=False).encode("utf-8"))


def decode_frame(data: bytes) -> tuple[WireFrame, int]:
    """Decode one frame from the head of ``data``; returns (frame, consumed).

    Raises ProtocolError on garbage; callers needing more bytes should check
    remaining length against the header first (see FrameStream for sockets).
    """
    if len(data) < HEADER.size:
        raise ProtocolError("short frame header")
    length, type_byte = HEADER.unpack_from(data)
    if length < 1 or length - 1 > MAX_FRAME_PAYLOAD:
        raise ProtocolError(f"implausible frame length {length}")
    end = 4 + length
    if len(data) < end:
        raise ProtocolError("truncated frame body")
    try:
        msg_type = MessageType(type_byte)
    except ValueError:
        raise ProtocolError(f"unknown message type {type_byte}") from None
    return WireFrame(msg_type, bytes(data[HEADER.size:end])), end


class FrameStream:
    """Blocking frame reader/writer over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send(self, frame: WireFrame) -> None:
        try:
            self.sock.sendall(frame.encode())
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc

    def recv(self) -> WireFrame | None:
        """Read one frame; None on clean EOF at a frame boundary."""
        header = self._read_exact(4, allow_eof=True)
        if header is None:
            return None
        (length,) = struct.unpack(">I", header)
        if length < 1 or length - 1 > MAX_FRAME_PAYLOAD:
            raise ProtocolError(f"implausible frame length {length}")
        body = self._read_exact(length)
        try:
            msg_type = MessageType(body[0])
        except ValueError:
            raise ProtocolError(f"unknown message type {body[0]}") from None
        return WireFrame(msg_type, body[1:])

    def _read_exact(self, n: int, allow_eof: bool = False) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            try:
                piece = self.sock.recv(n - len(buf))
            except socket.timeout as exc:
                raise RemoteTimeout("read timed out") from exc
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not piece:
                if allow_eof and not buf:
                    return None
                raise ConnectionLost("connection closed mid-frame")
            buf.extend(piece)
        return bytes(buf)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
