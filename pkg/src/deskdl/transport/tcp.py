"""TCP transport: the wire format over stream sockets.

Each endpoint owns a listener. Outgoing links are one socket plus one
writer thread per destination, so per-pair FIFO follows from TCP ordering.
Latency injection delays each frame until enqueue time + latency before
writing, approximating link delay without capping throughput. The sender's
identity travels in the frame header, so no connection handshake is needed.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

from .frame import Frame, FrameReader, TransportClosed, TransportError, encode_frame


class TcpEndpoint:
    def __init__(self, rank: int, host: str = "127.0.0.1", port: int = 0,
                 latency_s: float = 0.0):
        self.rank = rank
        self._latency = latency_s
        # queue.Queue for the same reason as InprocFabric: SimpleQueue's
        # timed get can park forever after a stale wakeup token.
        self._inbox = queue.Queue()
        self._peers = {}
        self._links = {}
        self._lock = threading.Lock()
        self._closed = False
        self._conns = []

        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, daemon=True, name=f"tcp-accept-{rank}")
        self._accept_thread.start()

    def set_peers(self, addresses: dict) -> None:
        """Address book {rank: (host, port)}; may include self."""
        self._peers = dict(addresses)

    # -- sending ------------------------------------------------------------

    def send(self, dst: int, frame: Frame) -> None:
        if self._closed:
            raise TransportClosed(f"endpoint {self.rank} closed")
        with self._lock:
            link = self._links.get(dst)
            if link is None:
                if dst not in self._peers:
                    raise TransportError(f"unknown destination rank {dst}")
                link = _Link(self._peers[dst], self._latency, self.rank, dst)
                self._links[dst] = link
        link.submit(encode_frame(frame))

    # -- receiving ------------------------------------------------------------

    def recv(self, timeout: float | None = None):
        if self._closed:
            raise TransportClosed(f"endpoint {self.rank} closed")
        try:
            if timeout is not None and timeout <= 0:
                item = self._inbox.get_nowait()
            else:
                item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            return None
        if isinstance(item, Exception):
            raise item
        return item

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True,
                             name=f"tcp-read-{self.rank}").start()

    def _read_loop(self, conn: socket.socket) -> None:
        reader = FrameReader()
        try:
            while True:
                data = conn.recv(1 << 16)
                if not data:
                    break
                for frame in reader.feed(data):
                    self._inbox.put(frame)
        except OSError:
            pass
        finally:
            if not self._closed and reader.pending_bytes:
                self._inbox.put(TransportError(
                    f"peer connection dropped mid-frame at rank {self.rank}"))
            conn.close()

    def close(self) -> None:
        self._closed = True
        with self._lock:
            links = list(self._links.values())
            self._links.clear()
        for link in links:
            link.close()
        try:
            self._listener.close()
        except OSError:
            pass
        for conn in self._conns:
            try:
                conn.close()
            except OSError:
                pass


class _Link:
    """One outgoing connection with its writer thread."""

    def __init__(self, address, latency_s: float, src: int, dst: int):
        self._latency = latency_s
        self._outbox = queue.Queue()
        try:
            self._sock = socket.create_connection(address, timeout=10)
        except OSError as exc:
            raise TransportError(f"connect {src}->{dst} failed: {exc}") from exc
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._thread = threading.Thread(target=self._write_loop, daemon=True,
                                        name=f"tcp-write-{src}-{dst}")
        self._thread.start()

    def submit(self, data: bytes) -> None:
        self._outbox.put((time.monotonic() + self._latency, data))

    def _write_loop(self) -> None:
        while True:
            item = self._outbox.get()
            if item is None:
                break
            due, data = item
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            try:
                self._sock.sendall(data)
            except OSError:
                break
        try:
            self._sock.close()
        except OSError:
            pass

    def close(self) -> None:
        self._outbox.put(None)
        self._thread.join(timeout=5)
