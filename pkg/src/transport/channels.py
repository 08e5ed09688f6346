"""
Message channels: an in-process FIFO and a length-prefixed TCP stream.

Both carry whole encoded frames in per-connection order and enforce the same
frame cap. A TCP frame is a 4-byte little-endian length followed by the
encoded message.
"""
import queue
import select
import socket
import struct
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, Literal, Optional, Sequence, Tuple
from src.transport.codec import decode, encode
from src.transport.message import GradientMessage
from src.utils.errors import ConnectionClosedError, FrameTooLargeError, TransportError
from src.utils.logger import LOGGER
from src.utils.settings import get_settings

LENGTH_PREFIX = struct.Struct("<I")
RECV_CHUNK = 1024 * 64

TransportKind = Literal["inprocess", "tcp"]


class MessageChannel(ABC):
    """One endpoint of a bidirectional frame channel."""

    def __init__(self, frame_cap: Optional[int] = None):
        self.frame_cap = frame_cap if frame_cap is not None else get_settings().frame_cap

    def _check_cap(self, length: int) -> None:
        if length > self.frame_cap:
            raise FrameTooLargeError(length, self.frame_cap)

    @abstractmethod
    def send(self, frame: bytes) -> None:
        ...

    @abstractmethod
    def poll(self, timeout: Optional[float]) -> Optional[bytes]:
        """Next frame, or None when nothing arrived within `timeout` seconds."""

    @abstractmethod
    def close(self) -> None:
        ...

    def recv(self, timeout: Optional[float] = None) -> bytes:
        frame = self.poll(timeout)
        if frame is None:
            raise TransportError(f"No frame within {timeout} s")
        return frame


# ============================================================================
# In-process
# ============================================================================

_CLOSED = object()


class InProcessChannel(MessageChannel):
    """Queue-backed endpoint; create connected endpoints with `pair()`."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, frame_cap: Optional[int] = None):
        super().__init__(frame_cap)
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False
        self._peer_closed = False

    @classmethod
    def pair(cls, frame_cap: Optional[int] = None) -> Tuple["InProcessChannel", "InProcessChannel"]:
        a_to_b, b_to_a = queue.Queue(), queue.Queue()
        return cls(b_to_a, a_to_b, frame_cap), cls(a_to_b, b_to_a, frame_cap)

    def send(self, frame: bytes) -> None:
        if self._closed or self._peer_closed:
            raise ConnectionClosedError("Channel is closed")
        self._check_cap(len(frame))
        self._outbox.put(bytes(frame))

    def poll(self, timeout: Optional[float]) -> Optional[bytes]:
        if self._peer_closed:
            raise ConnectionClosedError("Peer closed the channel")
        try:
            item = self._inbox.get(timeout=timeout) if timeout is None or timeout > 0 else self._inbox.get_nowait()
        except queue.Empty:
            return None
        if item is _CLOSED:
            self._peer_closed = True
            raise ConnectionClosedError("Peer closed the channel")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSED)


# ============================================================================
# TCP
# ============================================================================

class TcpChannel(MessageChannel):
    """Length-prefixed frames over a connected stream socket."""

    def __init__(self, sock: socket.socket, frame_cap: Optional[int] = None):
        super().__init__(frame_cap)
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def connect(cls, host: str, port: int, frame_cap: Optional[int] = None) -> "TcpChannel":
        return cls(socket.create_connection((host, port)), frame_cap)

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        received = 0
        while received < n:
            chunk = self.sock.recv(min(n - received, RECV_CHUNK))
            if not chunk:
                raise ConnectionClosedError(f"Connection closed after {received} of {n} bytes")
            chunks.append(chunk)
            received += len(chunk)
        return b"".join(chunks)

    def send(self, frame: bytes) -> None:
        self._check_cap(len(frame))
        try:
            self.sock.sendall(LENGTH_PREFIX.pack(len(frame)) + frame)
        except OSError as e:
            raise ConnectionClosedError(f"Send failed: {e}") from e

    def poll(self, timeout: Optional[float]) -> Optional[bytes]:
        readable, _, _ = select.select([self.sock], [], [], timeout)
        if not readable:
            return None
        try:
            (length,) = LENGTH_PREFIX.unpack(self._read_exact(LENGTH_PREFIX.size))
            # Reject before allocating the frame
            self._check_cap(length)
            return self._read_exact(length)
        except OSError as e:
            raise ConnectionClosedError(f"Receive failed: {e}") from e

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpListener:
    """Server-side listening socket; port 0 picks a free port."""

    def __init__(self, host: Optional[str] = None, port: int = 0, frame_cap: Optional[int] = None):
        self.frame_cap = frame_cap
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host or get_settings().tcp_host, port))
        self.sock.listen()

    @property
    def address(self) -> Tuple[str, int]:
        return self.sock.getsockname()[:2]

    def accept(self) -> TcpChannel:
        conn, peer = self.sock.accept()
        LOGGER.debug(f"Accepted connection from {peer}")
        return TcpChannel(conn, self.frame_cap)

    def close(self) -> None:
        self.sock.close()


# ============================================================================
# Links and message helpers
# ============================================================================

@dataclass
class Link:
    """The two ends of one client's connection."""
    server: MessageChannel
    client: MessageChannel


@contextmanager
def open_links(
    kind: TransportKind,
    client_ids: Sequence[int],
    host: Optional[str] = None,
    port: int = 0,
    frame_cap: Optional[int] = None,
) -> Iterator[Dict[int, Link]]:
    """
    One connected link per client, closed on exit.

    Args:
        kind: "inprocess" queues or "tcp" loopback sockets
        client_ids: Clients to connect
        host: TCP bind host (settings default when None)
        port: TCP port (0 picks a free one)
        frame_cap: Frame size limit (settings default when None)
    """
    links: Dict[int, Link] = {}
    listener = None
    try:
        if kind == "inprocess":
            for client_id in sorted(client_ids):
                server, client = InProcessChannel.pair(frame_cap)
                links[client_id] = Link(server=server, client=client)
        elif kind == "tcp":
            listener = TcpListener(host, port, frame_cap)
            bound_host, bound_port = listener.address
            for client_id in sorted(client_ids):
                client = TcpChannel.connect(bound_host, bound_port, frame_cap)
                links[client_id] = Link(server=listener.accept(), client=client)
            LOGGER.info(f"Opened {len(links)} TCP links on {bound_host}:{bound_port}")
        else:
            raise TransportError(f"Unknown transport '{kind}'")
        yield links
    finally:
        for link in links.values():
            link.client.close()
            link.server.close()
        if listener is not None:
            listener.close()


def transport_send(channel: MessageChannel, message: GradientMessage) -> int:
    """Encode and send one message; returns the frame size."""
    frame = encode(message)
    channel.send(frame)
    return len(frame)


def transport_recv(channel: MessageChannel, timeout: Optional[float] = None) -> GradientMessage:
    return decode(channel.recv(timeout))
