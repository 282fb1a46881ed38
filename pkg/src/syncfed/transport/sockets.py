"""Stream-socket transport: frame I/O plus a latency-injecting endpoint.

Frames on the stream use exactly the layout from :mod:`syncfed.transport.wire`;
the 10-byte header already carries the payload length, so no extra prefix.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from typing import Callable

from syncfed.transport import wire
from syncfed.transport.simnet import LatencyModel, to_ns

MAX_PAYLOAD = 1 << 30


class ConnectionClosed(ConnectionError):
    pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket) -> bytes:
    """Read one complete frame (header + payload) from ``sock``."""
    header = _recv_exact(sock, wire.HEADER_SIZE)
    _, length = wire.parse_header(header)
    if length > MAX_PAYLOAD:
        raise wire.TruncatedError(f"refusing {length}-byte payload")
    return header + _recv_exact(sock, length)


def send_frame(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(frame)


class LatencyEndpoint:
    """Client-side socket wrapper that delays both directions through ``link``.

    Outgoing frames are held for an uplink delay by a sender thread; incoming
    frames are released to :meth:`recv` after a downlink delay. Per-direction
    FIFO order is preserved even when jitter would reorder them.
    """

    def __init__(
        self,
        sock: socket.socket,
        link: LatencyModel,
        clock_ns: Callable[[], int],
        on_frame: Callable[[bytes], None] | None = None,
    ) -> None:
        self.sock = sock
        self.link = link
        self.clock_ns = clock_ns
        self.on_frame = on_frame
        self._link_lock = threading.Lock()
        self._out: queue.Queue = queue.Queue()
        self._in: queue.Queue = queue.Queue()
        self._last_out = 0
        self._last_in = 0
        self._sender = threading.Thread(target=self._send_loop, daemon=True)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._sender.start()
        self._reader.start()

    def _delay(self, reverse: bool) -> float | None:
        with self._link_lock:
            return self.link.sample(reverse=reverse)

    def _sleep_until(self, at_ns: int) -> None:
        wait = (at_ns - self.clock_ns()) / 1e9
        if wait > 0:
            time.sleep(wait)

    def send(self, msg: wire.Message) -> bool:
        """Queue ``msg``; returns False if the injected link dropped it."""
        delay = self._delay(reverse=True)
        if delay is None:
            return False
        at = max(self.clock_ns() + to_ns(delay), self._last_out)
        self._last_out = at
        self._out.put((at, wire.encode(msg)))
        return True

    def _send_loop(self) -> None:
        while True:
            item = self._out.get()
            if item is None:
                return
            at, frame = item
            self._sleep_until(at)
            try:
                send_frame(self.sock, frame)
            except OSError:
                return

    def _read_loop(self) -> None:
        while True:
            try:
                frame = recv_frame(self.sock)
            except (OSError, wire.WireError):
                self._in.put(None)
                return
            delay = self._delay(reverse=False)
            if delay is None:
                continue
            at = max(self.clock_ns() + to_ns(delay), self._last_in)
            self._last_in = at
            self._in.put((at, frame))

    def recv(self, timeout: float | None = None) -> wire.Message:
        """Next delivered message; raises ``queue.Empty`` on timeout, ConnectionClosed on EOF."""
        item = self._in.get(timeout=timeout)
        if item is None:
            self._in.put(None)
            raise ConnectionClosed("server closed the connection")
        at, frame = item
        self._sleep_until(at)
        if self.on_frame is not None:
            self.on_frame(frame)
        return wire.decode(frame)

    def close(self) -> None:
        self._out.put(None)
        self._sender.join(timeout=5)
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
