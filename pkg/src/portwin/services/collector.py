"""Client gateway: sessions, window serving, and steering routing.

One collector fronts one data source (a live simulation or a stored
state) and speaks the framed window protocol over plain TCP and over
WebSocket, bit-identically.  Each connection gets a session id, a reader
loop, and a dedicated sender thread, so a slow or dead client stalls
only its own socket; the stepping loop never executes a blocking wait on
any client-facing channel.

Outbound traffic per session is a FIFO of responses and acks plus a
newest-wins status slot: per-step status pushes overwrite each other
instead of queueing behind a stalled client.  The connect-time status
carries the specimen spheres for overlay drawing; later pushes leave the
sphere list empty since the specimen never changes mid-run.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import struct
import threading
from collections import deque

import numpy as np

from ..grid import refine
from .protocol import (
    Ack,
    BlockRecord,
    K_PAUSE,
    K_REFINE_REGION,
    K_RESUME,
    K_SET_INFLOW,
    K_SET_VISCOSITY,
    ProtocolError,
    Status,
    T_STEERING,
    T_WINDOW_REQUEST,
    FrameReader,
    WindowResponse,
    compress_stream,
    decode_steering,
    decode_window_request,
    encode_ack,
    encode_status,
    encode_window_response,
)
from .snapshot import SnapshotStore, take_snapshot
from .windows import bytes_per_cell, gather_window, select_level, window_cost

# steering parameter bounds; outside these a request is rejected
NU_BOUNDS = (1e-12, 1e3)
INFLOW_BOUNDS = (-1e3, 1e3)

_PENDING_LIMIT = 256  # queued unsent responses before a session is dropped


def build_window_response(snap, req) -> WindowResponse:
    """Serve one window request from a snapshot.

    Depth and stride come from the byte budget; the uncompressed response
    never exceeds it (checked here on every message), compression only
    shrinks the wire size further.
    """
    window = (req.box[0:3], req.box[3:6])
    cell_bytes = bytes_per_cell(req.fields)
    depth, stride = select_level(snap, window, req.max_bytes, cell_bytes)
    records, count, raw = gather_window(snap, window, depth, stride, req.fields)
    if count and window_cost(count, len(records), cell_bytes) > req.max_bytes:
        raise ProtocolError(
            f"window budget {req.max_bytes} cannot fit a single-cell view")
    blocks = tuple(BlockRecord(uid, start, cnt) for uid, start, cnt in records)
    return WindowResponse(
        request=req.request, step=snap.step, depth=depth, stride=stride,
        fields=req.fields, blocks=blocks, cell_count=count,
        raw_size=len(raw), data=compress_stream(raw))


class RunController:
    """Pause/resume/stop gate honoured by a stepping loop."""

    def __init__(self):
        self._resume = threading.Event()
        self._resume.set()
        self._stop = threading.Event()

    @property
    def paused(self) -> bool:
        return not self._resume.is_set()

    @property
    def stopped(self) -> bool:
        return self._stop.is_set()

    def pause(self):
        self._resume.clear()

    def resume(self):
        self._resume.set()

    def stop(self):
        self._stop.set()
        self._resume.set()

    def wait_resume(self, timeout: float = 0.1) -> bool:
        """Block while paused; True once stepping may proceed."""
        while not self._stop.is_set():
            if self._resume.wait(timeout):
                return True
        return False


def _finite_box(box) -> bool:
    return all(np.isfinite(v) for v in box)


class LiveSource:
    """Steering and snapshots backed by a running simulation."""

    def __init__(self, sim, store: SnapshotStore | None = None,
                 controller: RunController | None = None):
        self.sim = sim
        self.store = store if store is not None else SnapshotStore()
        self.controller = controller if controller is not None else RunController()
        if self.store.latest() is None:
            self.store.capture(sim, paused=self.controller.paused)

    def snapshot(self):
        return self.store.latest()

    def steer(self, kind: int, params: tuple) -> Ack:
        next_step = self.sim.step_index + 1
        if kind == K_SET_VISCOSITY:
            (nu,) = params
            if not (np.isfinite(nu) and NU_BOUNDS[0] <= nu <= NU_BOUNDS[1]):
                return Ack(0, False, self.sim.step_index,
                           f"viscosity {nu} outside {NU_BOUNDS}")
            self.sim.queue_param("nu", nu)
            return Ack(0, True, next_step)
        if kind == K_SET_INFLOW:
            ux, uy, uz = params
            if uy != 0.0 or uz != 0.0:
                return Ack(0, False, self.sim.step_index,
                           "inflow must be x-directed: (ux, 0, 0)")
            if not (np.isfinite(ux) and INFLOW_BOUNDS[0] <= ux <= INFLOW_BOUNDS[1]):
                return Ack(0, False, self.sim.step_index,
                           f"inflow {ux} outside {INFLOW_BOUNDS}")
            self.sim.queue_param("inflow_velocity", ux)
            return Ack(0, True, next_step)
        if kind == K_REFINE_REGION:
            if not _finite_box(params):
                return Ack(0, False, self.sim.step_index,
                           "refine box must be finite")
            snap = self.snapshot()
            if not _refinable_blocks(snap, params):
                return Ack(0, False, self.sim.step_index,
                           "refine region covers no refinable blocks")
            self.sim.queue_refine(params)
            return Ack(0, True, next_step)
        if kind == K_PAUSE:
            self.controller.pause()
            return Ack(0, True, self.sim.step_index, "paused")
        if kind == K_RESUME:
            self.controller.resume()
            return Ack(0, True, self.sim.step_index, "resumed")
        return Ack(0, False, self.sim.step_index, f"unknown steering kind {kind}")


def _refinable_blocks(snap, box) -> bool:
    """Does any leaf below max depth overlap the box?"""
    for blk in snap.grids.values():
        if blk.children or blk.depth >= snap.config.max_depth:
            continue
        if all(blk.bbox_max[a] > box[a] and blk.bbox_min[a] < box[a + 3]
               for a in range(3)):
            return True
    return False


class ReplaySource:
    """Serves a stored state: full window protocol, no time stepping.

    Refinement steering still works, splitting stored blocks by constant
    injection so deeper zooms resolve; flow parameters and pause have
    nothing to act on and are rejected with a reason.
    """

    def __init__(self, h, step: int = 0, time: float = 0.0, spheres=None):
        self.h = h
        self.step = int(step)
        self.spheres = spheres
        self._lock = threading.Lock()
        self._snap = take_snapshot(h, step, time, spheres, paused=True)

    def snapshot(self):
        with self._lock:
            return self._snap

    def steer(self, kind: int, params: tuple) -> Ack:
        if kind != K_REFINE_REGION:
            return Ack(0, False, self.step,
                       "replay accepts only refine steering")
        if not _finite_box(params):
            return Ack(0, False, self.step, "refine box must be finite")
        with self._lock:
            targets = [
                uid for uid in self.h.leaf_uids()
                if self.h.grids[uid].depth < self.h.config.max_depth
                and all(self.h.grids[uid].bbox_max[a] > params[a]
                        and self.h.grids[uid].bbox_min[a] < params[a + 3]
                        for a in range(3))
            ]
            if not targets:
                return Ack(0, False, self.step,
                           "refine region covers no refinable blocks")
            for uid in sorted(targets):
                refine(self.h, uid)
            self._snap = take_snapshot(self.h, self.step, self._snap.time,
                                       self.spheres, paused=True)
        return Ack(0, True, self.step)


# ---- websocket transport ---------------------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class _TcpConn:
    """Raw stream socket carrying bare frames."""

    def __init__(self, sock: socket.socket):
        self.sock = sock

    def open(self) -> bool:
        return True

    def recv(self) -> bytes:
        return self.sock.recv(65536)

    def send(self, data: bytes):
        self.sock.sendall(data)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _WsConn:
    """WebSocket server endpoint carrying frames as binary messages."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._parts: list = []

    def open(self) -> bool:
        try:
            request = self._read_until(b"\r\n\r\n")
        except (OSError, ProtocolError):
            return False
        headers = {}
        for line in request.split(b"\r\n")[1:]:
            if b":" in line:
                k, v = line.split(b":", 1)
                headers[k.strip().lower()] = v.strip()
        key = headers.get(b"sec-websocket-key")
        if key is None or b"websocket" not in headers.get(b"upgrade", b"").lower():
            self.sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return False
        accept = base64.b64encode(
            hashlib.sha1(key + _WS_GUID.encode()).digest())
        self.sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept + b"\r\n\r\n")
        return True

    def _read_until(self, marker: bytes) -> bytes:
        buf = bytearray()
        while marker not in buf:
            if len(buf) > 65536:
                raise ProtocolError("oversized websocket handshake")
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ProtocolError("connection closed during handshake")
            buf += chunk
        return bytes(buf)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise OSError("connection closed mid-frame")
            buf += chunk
        return bytes(buf)

    def recv(self) -> bytes:
        """Next complete binary message's bytes; b"" once the peer closes."""
        while True:
            head = self.sock.recv(2)
            if len(head) < 2:
                return b""
            fin = head[0] & 0x80
            opcode = head[0] & 0x0F
            masked = head[1] & 0x80
            length = head[1] & 0x7F
            if length == 126:
                (length,) = struct.unpack(">H", self._read_exact(2))
            elif length == 127:
                (length,) = struct.unpack(">Q", self._read_exact(8))
            if length > (1 << 31):
                return b""
            mask = self._read_exact(4) if masked else None
            data = self._read_exact(length) if length else b""
            if mask:
                data = bytes(b ^ mask[i % 4] for i, b in enumerate(data))
            if opcode == 0x8:  # close: echo and end
                try:
                    self.sock.sendall(b"\x88\x00")
                except OSError:
                    pass
                return b""
            if opcode == 0x9:  # ping -> pong
                self._send_raw(0xA, data)
                continue
            if opcode == 0xA:  # unsolicited pong
                continue
            if opcode in (0x0, 0x1, 0x2):
                self._parts.append(data)
                if fin:
                    msg = b"".join(self._parts)
                    self._parts = []
                    return msg

    def _send_raw(self, opcode: int, data: bytes):
        head = bytearray([0x80 | opcode])
        n = len(data)
        if n < 126:
            head.append(n)
        elif n < 1 << 16:
            head.append(126)
            head += struct.pack(">H", n)
        else:
            head.append(127)
            head += struct.pack(">Q", n)
        self.sock.sendall(bytes(head) + data)

    def send(self, data: bytes):
        self._send_raw(0x2, data)

    def close(self):
        try:
            self._send_raw(0x8, b"")
        except OSError:
            pass
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


# ---- sessions --------------------------------------------------------------


class Session:
    """One connected client: reader loop plus dedicated sender thread."""

    def __init__(self, sid: int, conn, collector):
        self.sid = sid
        self.conn = conn
        self.collector = collector
        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self._outbox: deque = deque()
        self._status: bytes | None = None
        self._closed = False
        self._sender = threading.Thread(
            target=self._send_loop, name=f"swin-send-{sid}", daemon=True)

    # -- outbound ----------------------------------------------------------

    def enqueue(self, frame: bytes):
        with self._wake:
            if self._closed:
                return
            self._outbox.append(frame)
            if len(self._outbox) > _PENDING_LIMIT:
                self._closed = True
            self._wake.notify()

    def push_status(self, frame: bytes):
        with self._wake:
            if self._closed:
                return
            self._status = frame
            self._wake.notify()

    def _send_loop(self):
        while True:
            with self._wake:
                while not (self._outbox or self._status or self._closed):
                    self._wake.wait()
                if self._closed and not (self._outbox or self._status):
                    return
                if self._outbox:
                    frame = self._outbox.popleft()
                else:
                    frame = self._status
                    self._status = None
            try:
                self.conn.send(frame)
            except OSError:
                self.close()
                return

    # -- inbound -----------------------------------------------------------

    def serve(self):
        """Read and answer frames until the connection drops."""
        self._sender.start()
        self.enqueue(self.collector.status_frame(self.sid, with_spheres=True))
        reader = FrameReader()
        try:
            while not self._closed:
                data = self.conn.recv()
                if not data:
                    break
                try:
                    frames = reader.feed(data)
                except ProtocolError as exc:
                    self.enqueue(encode_ack(Ack(0, False, 0, str(exc))))
                    break
                for ftype, payload in frames:
                    self._dispatch(ftype, payload)
        except OSError:
            pass
        finally:
            self.close()

    def _dispatch(self, ftype: int, payload: bytes):
        if ftype == T_WINDOW_REQUEST:
            try:
                req = decode_window_request(payload)
            except ProtocolError as exc:
                self.enqueue(encode_ack(Ack(0, False, 0, str(exc))))
                return
            if req.session != self.sid:
                self.enqueue(encode_ack(Ack(
                    req.request, False, 0, f"unknown session id {req.session}")))
                return
            snap = self.collector.source.snapshot()
            try:
                resp = build_window_response(snap, req)
            except (ProtocolError, ValueError) as exc:
                self.enqueue(encode_ack(Ack(req.request, False, snap.step,
                                            str(exc))))
                return
            self.enqueue(encode_window_response(resp))
        elif ftype == T_STEERING:
            try:
                msg = decode_steering(payload)
            except ProtocolError as exc:
                self.enqueue(encode_ack(Ack(0, False, 0, str(exc))))
                return
            ack = self.collector.source.steer(msg.kind, msg.params)
            self.enqueue(encode_ack(Ack(msg.request, ack.ok, ack.step,
                                        ack.message)))
        else:
            self.enqueue(encode_ack(Ack(0, False, 0,
                                        f"unexpected frame type {ftype}")))

    def close(self):
        with self._wake:
            already = self._closed
            self._closed = True
            self._wake.notify()
        if not already:
            self.conn.close()
        self.collector._drop(self)


class Collector:
    """Accepts client connections and serves one data source."""

    def __init__(self, source, listen=None, ws_listen=None,
                 max_sessions: int = 8):
        self.source = source
        self.max_sessions = int(max_sessions)
        self._listen = listen
        self._ws_listen = ws_listen
        self._servers: list = []
        self._threads: list = []
        self._sessions: dict = {}
        self._lock = threading.Lock()
        self._next_sid = 1
        self._stopping = False
        self.tcp_port: int | None = None
        self.ws_port: int | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self):
        if self._listen is not None:
            self.tcp_port = self._serve(self._listen, _TcpConn, "swin-tcp")
        if self._ws_listen is not None:
            self.ws_port = self._serve(self._ws_listen, _WsConn, "swin-ws")
        return self

    def _serve(self, addr, conn_cls, name) -> int:
        srv = socket.create_server(addr, reuse_port=False)
        srv.listen(16)
        self._servers.append(srv)
        t = threading.Thread(target=self._accept_loop, args=(srv, conn_cls),
                             name=name, daemon=True)
        t.start()
        self._threads.append(t)
        return srv.getsockname()[1]

    def _accept_loop(self, srv, conn_cls):
        while True:
            try:
                sock, _ = srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._run_conn,
                                 args=(conn_cls(sock),),
                                 name="swin-conn", daemon=True)
            t.start()

    def _run_conn(self, conn):
        if not conn.open():
            conn.close()
            return
        with self._lock:
            if self._stopping or len(self._sessions) >= self.max_sessions:
                refuse = True
            else:
                refuse = False
                sid = self._next_sid
                self._next_sid += 1
                session = Session(sid, conn, self)
                self._sessions[sid] = session
        if refuse:
            try:
                conn.send(encode_ack(Ack(0, False, 0, "session limit reached")))
            except OSError:
                pass
            conn.close()
            return
        session.serve()

    def _drop(self, session):
        with self._lock:
            self._sessions.pop(session.sid, None)

    def stop(self):
        with self._lock:
            self._stopping = True
            sessions = list(self._sessions.values())
        for srv in self._servers:
            srv.close()
        for s in sessions:
            s.close()
        for t in self._threads:
            t.join(timeout=5.0)

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    # -- status ------------------------------------------------------------

    def status_frame(self, sid: int, with_spheres: bool) -> bytes:
        snap = self.source.snapshot()
        levels = tuple((d, len(snap.level_uids(d)))
                       for d in sorted(snap.depth_index))
        if with_spheres and snap.spheres is not None:
            spheres = tuple(tuple(row) for row in snap.spheres)
        else:
            spheres = ()
        cfg = snap.config
        return encode_status(Status(
            session=sid, step=snap.step, time=snap.time, paused=snap.paused,
            domain=cfg.domain_min + cfg.domain_max,
            max_depth=cfg.max_depth, levels=levels, spheres=spheres))

    def broadcast_status(self):
        with self._lock:
            sessions = list(self._sessions.values())
        for s in sessions:
            s.push_status(self.status_frame(s.sid, with_spheres=False))

    def listener(self, sim, report):
        """Step listener: refresh every client's status, newest wins."""
        self.broadcast_status()
