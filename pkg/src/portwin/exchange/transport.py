"""Message transports: in-process queues and stream sockets.

Both transports deliver messages between a fixed (source, target) rank
pair in send order, which is all the plans rely on.  The socket variant
exists to prove the plans carry no hidden in-process assumptions; runs
inside one process use the queue variant.
"""

from __future__ import annotations

import pickle
import queue
import socket
import struct
import threading

from ..grid import FIELD_NAMES
from .nbh import FACE_AXIS
from .plan import ExchangePlan, apply_payload, extract_payload


class ExchangeFault(RuntimeError):
    def __init__(self, source_uid: int, target_uid: int):
        super().__init__(f"exchange message lost: grid {source_uid} -> grid {target_uid}")
        self.source_uid = source_uid
        self.target_uid = target_uid


class LocalTransport:
    """Queue-per-pair transport for worker threads in one process."""

    def __init__(self, n_ranks: int):
        self.n_ranks = n_ranks
        self._queues = {
            (s, d): queue.Queue() for s in range(n_ranks) for d in range(n_ranks) if s != d
        }

    def send(self, src: int, dst: int, item):
        self._queues[(src, dst)].put(item)

    def recv(self, src: int, dst: int, timeout: float):
        return self._queues[(src, dst)].get(timeout=timeout)

    def close(self):
        pass


class SocketTransport:
    """Pairwise TCP links carrying length-prefixed pickled messages.

    Every rank owns one listening socket; a link to a peer is opened on
    first send and inbound links are filed by the hello frame that opens
    them.
    """

    def __init__(self, rank: int, addresses: list[tuple[str, int]]):
        self.rank = rank
        self.addresses = addresses
        self._out: dict[int, socket.socket] = {}
        self._in: dict[int, socket.socket] = {}
        self._in_ready: dict[int, threading.Event] = {}
        self._lock = threading.Lock()
        self._listener = socket.create_server(addresses[rank])
        self._closed = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            peer = struct.unpack("<I", _read_exact(conn, 4))[0]
            with self._lock:
                self._in[peer] = conn
                self._in_ready.setdefault(peer, threading.Event()).set()

    def _link(self, dst: int) -> socket.socket:
        with self._lock:
            sock = self._out.get(dst)
        if sock is None:
            sock = socket.create_connection(self.addresses[dst])
            sock.sendall(struct.pack("<I", self.rank))
            with self._lock:
                self._out[dst] = sock
        return sock

    def send(self, src: int, dst: int, item):
        assert src == self.rank
        blob = pickle.dumps(item, protocol=pickle.HIGHEST_PROTOCOL)
        self._link(dst).sendall(struct.pack("<Q", len(blob)) + blob)

    def recv(self, src: int, dst: int, timeout: float):
        assert dst == self.rank
        with self._lock:
            ready = self._in_ready.setdefault(src, threading.Event())
        if not ready.wait(timeout):
            raise queue.Empty
        sock = self._in[src]
        sock.settimeout(timeout)
        try:
            size = struct.unpack("<Q", _read_exact(sock, 8))[0]
            return pickle.loads(_read_exact(sock, size))
        except socket.timeout:
            raise queue.Empty from None

    def close(self):
        self._closed = True
        self._listener.close()
        for sock in list(self._out.values()) + list(self._in.values()):
            try:
                sock.close()
            except OSError:
                pass


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed during frame")
        buf += chunk
    return buf


def run_plan_transport(h, plan: ExchangePlan, transport, rank: int, owner_of,
                       fields=FIELD_NAMES, mode: str = "replace", timeout: float = 30.0):
    """Execute one rank's share of a plan over a transport.

    Local messages apply immediately; remote payloads are sent first and
    then collected in plan order, which matches the per-pair FIFO the
    transports guarantee.  Halo messages run as three ordered axis
    sweeps; a rank only starts extracting sweep n once its own sweep
    n-1 targets are filled, which relays ghost-corner data correctly.
    Returns when this rank's targets are filled.
    """
    halo_groups: list[list[tuple[int, object]]] = [[], [], []]
    rest: list[tuple[int, object]] = []
    for idx, msg in enumerate(plan.messages):
        if msg.kind == "halo":
            halo_groups[FACE_AXIS[msg.face]].append((idx, msg))
        else:
            rest.append((idx, msg))
    for group in [g for g in halo_groups if g] + ([rest] if rest else []):
        for idx, msg in group:
            src_r = owner_of(msg.source)
            if src_r != rank:
                continue
            dst_r = owner_of(msg.target)
            if dst_r == rank:
                for field in fields:
                    apply_payload(h, msg, field, extract_payload(h, msg, field), mode=mode)
            else:
                payloads = {field: extract_payload(h, msg, field) for field in fields}
                transport.send(rank, dst_r, (idx, payloads))
        for idx, msg in group:
            if owner_of(msg.target) != rank or owner_of(msg.source) == rank:
                continue
            try:
                got_idx, payloads = transport.recv(owner_of(msg.source), rank, timeout)
            except queue.Empty:
                raise ExchangeFault(msg.source, msg.target) from None
            if got_idx != idx:
                raise ExchangeFault(msg.source, msg.target)
            for field in fields:
                apply_payload(h, msg, field, payloads[field], mode=mode)
