"""Framed binary wire protocol for window streaming and steering.

Every message travels as one frame: magic ``SWIN`` (4 bytes), version u8,
type u8, payload length u32, then the payload.  All integers are
little-endian; boxes are 6 x f64 (min xyz, max xyz).  The same frames
move bit-identically over raw stream sockets and WebSocket binary
messages.

Frame types::

    1 WindowRequest   session u32 | request u32 | box 6xf64 | fields u8
                      | max_bytes u64
    2 WindowResponse  request u32 | step u64 | depth u8 | stride 3xu16
                      | fields u8 | n_blocks u32 | cell_count u64
                      | raw_size u64 | n_blocks x block record
                      | DEFLATE-compressed cell payload
                      block record: uid u64 | start 3xu32 | count 3xu32
    3 Steering        request u32 | kind u8 | kind parameters
    4 Ack/Error       request u32 | ok u8 | step u64 | utf-8 message
    5 Status          session u32 | step u64 | time f64 | paused u8
                      | domain 6xf64 | max_depth u8 | n_levels u8
                      | n_levels x (depth u8, blocks u32)
                      | n_spheres u32 | n_spheres x 4xf64

The cell payload of a WindowResponse is block-major: each block record's
cells in turn, selected fields in canonical bitmask order (u_x, u_y,
u_z, p, |u|, flags), C order, floats as f32 and flags as u8.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

MAGIC = b"SWIN"
VERSION = 1

T_WINDOW_REQUEST = 1
T_WINDOW_RESPONSE = 2
T_STEERING = 3
T_ACK = 4
T_STATUS = 5

K_SET_INFLOW = 1
K_SET_VISCOSITY = 2
K_REFINE_REGION = 3
K_PAUSE = 4
K_RESUME = 5

_HEADER = struct.Struct("<4sBBI")
_WREQ = struct.Struct("<II6dBQ")
_WRESP = struct.Struct("<IQB3HBIQQ")
_BLOCK = struct.Struct("<Q3I3I")
_STEER = struct.Struct("<IB")
_ACK = struct.Struct("<IBQ")
_STATUS = struct.Struct("<IQdB6dBB")
_LEVEL = struct.Struct("<BI")

MAX_FRAME_BYTES = 1 << 31  # one frame never exceeds 2 GiB


class ProtocolError(ValueError):
    """Malformed, truncated, or corrupt wire data."""


# ---- framing ---------------------------------------------------------------


def encode_frame(ftype: int, payload: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, ftype, len(payload)) + payload


class FrameReader:
    """Incremental frame splitter for a byte stream.

    Feed arbitrary chunks; complete (type, payload) frames come back in
    order.  Partial frames wait in the buffer for more bytes.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf += data
        frames = []
        while True:
            if len(self._buf) < _HEADER.size:
                return frames
            magic, ver, ftype, size = _HEADER.unpack_from(self._buf)
            if magic != MAGIC:
                raise ProtocolError(f"bad frame magic {bytes(magic)!r}")
            if ver != VERSION:
                raise ProtocolError(f"unsupported protocol version {ver}")
            if size > MAX_FRAME_BYTES:
                raise ProtocolError(f"frame of {size} bytes exceeds limit")
            if len(self._buf) < _HEADER.size + size:
                return frames
            payload = bytes(self._buf[_HEADER.size:_HEADER.size + size])
            del self._buf[:_HEADER.size + size]
            frames.append((ftype, payload))


# ---- compression -----------------------------------------------------------


def compress_stream(data: bytes) -> bytes:
    """Raw DEFLATE block stream (no container header or checksum)."""
    c = zlib.compressobj(6, zlib.DEFLATED, -15)
    return c.compress(data) + c.flush()


def decompress_stream(data: bytes) -> bytes:
    d = zlib.decompressobj(-15)
    try:
        out = d.decompress(data)
        out += d.flush()
    except zlib.error as exc:
        raise ProtocolError(f"corrupt compressed stream: {exc}") from exc
    if not d.eof:
        raise ProtocolError("truncated compressed stream")
    if d.unused_data:
        raise ProtocolError("trailing bytes after compressed stream")
    return out


# ---- messages --------------------------------------------------------------


@dataclass(frozen=True)
class WindowRequest:
    session: int
    request: int
    box: tuple  # (x0, y0, z0, x1, y1, z1) in metres
    fields: int
    max_bytes: int


@dataclass(frozen=True)
class BlockRecord:
    uid: int
    start: tuple  # global level cell coordinates of the first cell
    count: tuple  # cells per axis at the response stride


@dataclass(frozen=True)
class WindowResponse:
    request: int
    step: int
    depth: int
    stride: tuple
    fields: int
    blocks: tuple
    cell_count: int
    raw_size: int
    data: bytes  # compressed cell payload


@dataclass(frozen=True)
class Steering:
    request: int
    kind: int
    params: tuple


@dataclass(frozen=True)
class Ack:
    request: int
    ok: bool
    step: int
    message: str = ""


@dataclass(frozen=True)
class Status:
    session: int
    step: int
    time: float
    paused: bool
    domain: tuple
    max_depth: int
    levels: tuple  # ((depth, block count), ...)
    spheres: tuple  # ((cx, cy, cz, r), ...)


_STEER_PARAMS = {
    K_SET_INFLOW: struct.Struct("<3d"),
    K_SET_VISCOSITY: struct.Struct("<d"),
    K_REFINE_REGION: struct.Struct("<6d"),
    K_PAUSE: struct.Struct(""),
    K_RESUME: struct.Struct(""),
}


def encode_window_request(m: WindowRequest) -> bytes:
    payload = _WREQ.pack(m.session, m.request, *m.box, m.fields, m.max_bytes)
    return encode_frame(T_WINDOW_REQUEST, payload)


def encode_window_response(m: WindowResponse) -> bytes:
    head = _WRESP.pack(m.request, m.step, m.depth, *m.stride, m.fields,
                       len(m.blocks), m.cell_count, m.raw_size)
    recs = b"".join(_BLOCK.pack(b.uid, *b.start, *b.count) for b in m.blocks)
    return encode_frame(T_WINDOW_RESPONSE, head + recs + m.data)


def encode_steering(m: Steering) -> bytes:
    fmt = _STEER_PARAMS.get(m.kind)
    if fmt is None:
        raise ProtocolError(f"unknown steering kind {m.kind}")
    return encode_frame(T_STEERING, _STEER.pack(m.request, m.kind)
                        + fmt.pack(*m.params))


def encode_ack(m: Ack) -> bytes:
    payload = _ACK.pack(m.request, 1 if m.ok else 0, m.step)
    return encode_frame(T_ACK, payload + m.message.encode("utf-8"))


def encode_status(m: Status) -> bytes:
    head = _STATUS.pack(m.session, m.step, m.time, 1 if m.paused else 0,
                        *m.domain, m.max_depth, len(m.levels))
    levels = b"".join(_LEVEL.pack(d, n) for d, n in m.levels)
    tail = struct.pack("<I", len(m.spheres))
    tail += b"".join(struct.pack("<4d", *s) for s in m.spheres)
    return encode_frame(T_STATUS, head + levels + tail)


def _need(payload: bytes, size: int, what: str):
    if len(payload) < size:
        raise ProtocolError(f"truncated {what} payload: "
                            f"{len(payload)} < {size} bytes")


def decode_window_request(payload: bytes) -> WindowRequest:
    _need(payload, _WREQ.size, "WindowRequest")
    session, request, *rest = _WREQ.unpack_from(payload)
    box, fields, max_bytes = tuple(rest[:6]), rest[6], rest[7]
    if max_bytes <= 0:
        raise ProtocolError(f"max_bytes must be positive, got {max_bytes}")
    return WindowRequest(session, request, box, fields, max_bytes)


def decode_window_response(payload: bytes) -> WindowResponse:
    _need(payload, _WRESP.size, "WindowResponse")
    vals = _WRESP.unpack_from(payload)
    request, step, depth = vals[0], vals[1], vals[2]
    stride, fields = vals[3:6], vals[6]
    n_blocks, cell_count, raw_size = vals[7], vals[8], vals[9]
    off = _WRESP.size
    _need(payload, off + n_blocks * _BLOCK.size, "WindowResponse records")
    blocks = []
    for _ in range(n_blocks):
        rec = _BLOCK.unpack_from(payload, off)
        blocks.append(BlockRecord(rec[0], rec[1:4], rec[4:7]))
        off += _BLOCK.size
    return WindowResponse(request, step, depth, stride, fields, tuple(blocks),
                          cell_count, raw_size, payload[off:])


def decode_steering(payload: bytes) -> Steering:
    _need(payload, _STEER.size, "Steering")
    request, kind = _STEER.unpack_from(payload)
    fmt = _STEER_PARAMS.get(kind)
    if fmt is None:
        raise ProtocolError(f"unknown steering kind {kind}")
    if len(payload) != _STEER.size + fmt.size:
        raise ProtocolError(f"steering kind {kind} expects {fmt.size} "
                            f"parameter bytes, got {len(payload) - _STEER.size}")
    return Steering(request, kind, fmt.unpack_from(payload, _STEER.size))


def decode_ack(payload: bytes) -> Ack:
    _need(payload, _ACK.size, "Ack")
    request, ok, step = _ACK.unpack_from(payload)
    try:
        message = payload[_ACK.size:].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"bad ack message encoding: {exc}") from exc
    return Ack(request, bool(ok), step, message)


def decode_status(payload: bytes) -> Status:
    _need(payload, _STATUS.size, "Status")
    vals = _STATUS.unpack_from(payload)
    session, step, time, paused = vals[0], vals[1], vals[2], bool(vals[3])
    domain, max_depth, n_levels = vals[4:10], vals[10], vals[11]
    off = _STATUS.size
    _need(payload, off + n_levels * _LEVEL.size + 4, "Status levels")
    levels = []
    for _ in range(n_levels):
        levels.append(_LEVEL.unpack_from(payload, off))
        off += _LEVEL.size
    (n_spheres,) = struct.unpack_from("<I", payload, off)
    off += 4
    _need(payload, off + n_spheres * 32, "Status spheres")
    spheres = []
    for _ in range(n_spheres):
        spheres.append(struct.unpack_from("<4d", payload, off))
        off += 32
    return Status(session, step, time, paused, domain, max_depth,
                  tuple(levels), tuple(spheres))


_DECODERS = {
    T_WINDOW_REQUEST: decode_window_request,
    T_WINDOW_RESPONSE: decode_window_response,
    T_STEERING: decode_steering,
    T_ACK: decode_ack,
    T_STATUS: decode_status,
}


def decode_message(ftype: int, payload: bytes):
    decoder = _DECODERS.get(ftype)
    if decoder is None:
        raise ProtocolError(f"unknown frame type {ftype}")
    return decoder(payload)
