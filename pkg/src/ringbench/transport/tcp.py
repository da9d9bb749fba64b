"""TCP transport: one socket per (peer, channel), framed messages.

Each channel owns its own sockets so concurrent lanes map onto genuinely
parallel byte streams. A reader thread per socket demultiplexes frames
into the channel's mailbox, which also guarantees a simultaneous
ring-wide sendrecv can never wedge on full socket buffers.

Frame header (32 bytes, little-endian):

    magic 'RBCH' | version u16 | channel_id u16 | source_rank u32 |
    tag u64 | payload_len u64 | 4 reserved zero bytes
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Iterable

from .base import (
    Channel,
    Endpoint,
    Mailbox,
    TAG_BARRIER,
    TransportError,
    as_payload_bytes,
    check_tag,
)

FRAME_MAGIC = b"RBCH"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sHHIQQ4s")
HEADER_BYTES = _HEADER.size  # 32

# Handshake frames carry this tag and no payload; they only announce
# (source_rank, channel_id) for a freshly dialed socket.
_TAG_HELLO = (1 << 64) - 1


@dataclass(frozen=True)
class WireFrame:
    """Decoded frame header; payload travels separately."""

    channel_id: int
    source_rank: int
    tag: int
    payload_len: int
    version: int = FRAME_VERSION


def encode_frame(channel_id: int, source_rank: int, tag: int, payload: bytes) -> bytes:
    """Header + payload, ready for the wire."""
    header = _HEADER.pack(
        FRAME_MAGIC, FRAME_VERSION, channel_id, source_rank, tag, len(payload), b"\x00" * 4
    )
    return header + payload


def decode_header(header: bytes) -> WireFrame:
    if len(header) != HEADER_BYTES:
        raise TransportError(f"frame header must be {HEADER_BYTES} bytes, got {len(header)}")
    magic, version, channel_id, source_rank, tag, payload_len, _reserved = _HEADER.unpack(header)
    if magic != FRAME_MAGIC:
        raise TransportError(f"bad frame magic {magic!r}")
    if version != FRAME_VERSION:
        raise TransportError(f"unsupported frame version {version}")
    return WireFrame(channel_id, source_rank, tag, payload_len, version)


def parse_hostfile(lines: Iterable[str] | str) -> list[tuple[int, str, int]]:
    """Parse ``rank host:port`` lines; ranks must form 0..size-1 exactly."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    entries: dict[int, tuple[str, int]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or ":" not in parts[1]:
            raise TransportError(f"hostfile line {lineno}: expected 'rank host:port', got {raw!r}")
        try:
            rank = int(parts[0])
            host, port_text = parts[1].rsplit(":", 1)
            port = int(port_text)
        except ValueError as exc:
            raise TransportError(f"hostfile line {lineno}: {exc}") from exc
        if rank in entries:
            raise TransportError(f"hostfile line {lineno}: duplicate rank {rank}")
        entries[rank] = (host, port)
    if not entries:
        raise TransportError("hostfile is empty")
    size = len(entries)
    if sorted(entries) != list(range(size)):
        raise TransportError(f"hostfile ranks must form 0..{size - 1}, got {sorted(entries)}")
    return [(rank, entries[rank][0], entries[rank][1]) for rank in range(size)]


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise TransportError("peer closed the connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class _Conn:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.wlock = threading.Lock()


class TcpChannel(Channel):
    def send(self, dest: int, tag: int, payload, *, send_loc=None) -> None:
        self._check_rank(dest)
        check_tag(tag)
        data = as_payload_bytes(payload)
        ep: TcpEndpoint = self.endpoint
        if dest == ep.rank:
            ep.mailbox(self.channel_id).put(ep.rank, tag, data)
        else:
            conn = ep.connection(dest, self.channel_id)
            frame = encode_frame(self.channel_id, ep.rank, tag, data)
            with conn.wlock:
                try:
                    conn.sock.sendall(frame)
                except OSError as exc:
                    raise TransportError(f"send to rank {dest} failed: {exc}") from exc
        self._count_sent(tag, len(data))

    def recv(self, source: int, tag: int, *, timeout=None, recv_loc=None) -> bytes:
        self._check_rank(source)
        check_tag(tag)
        ep: TcpEndpoint = self.endpoint
        box = ep.mailbox(self.channel_id)
        payload = box.get(source, tag, timeout if timeout is not None else ep.timeout_secs)
        self._count_received(tag, len(payload))
        return payload


class TcpEndpoint(Endpoint):
    """One process's rank, connected to every peer per the hostfile.

    The lower rank of each pair dials; the higher accepts. Construction
    establishes channel 0 to all peers and completes a barrier before
    returning. `duplicate_channel` must be called collectively, in the
    same order, by every rank.
    """

    backend = "tcp"

    def __init__(self, hostfile: str | Iterable[str], rank: int, timeout: float | None = None):
        if isinstance(hostfile, str) and "\n" not in hostfile:
            with open(hostfile, encoding="utf-8") as fh:
                entries = parse_hostfile(fh.read())
        else:
            entries = parse_hostfile(hostfile)
        super().__init__(rank, len(entries), timeout)
        self.entries = entries
        self._closing = False
        self._conns: dict[tuple[int, int], _Conn] = {}
        self._conn_cond = threading.Condition()
        self._mailboxes: dict[int, Mailbox] = {}
        self._mailbox_lock = threading.Lock()
        self._next_channel_id = 1
        self._threads: list[threading.Thread] = []

        host, port = entries[rank][1], entries[rank][2]
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind((host, port))
        except OSError as exc:
            self._listener.close()
            raise TransportError(f"rank {rank} cannot listen on {host}:{port}: {exc}") from exc
        self._listener.listen(128)
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        accept_thread.start()
        self._threads.append(accept_thread)

        self.channels = [TcpChannel(self, 0)]
        try:
            self._establish_channel(0)
            self._barrier_over(self.channels[0])
        except BaseException:
            self.close()
            raise

    # -- connection management -------------------------------------------

    def mailbox(self, channel_id: int) -> Mailbox:
        with self._mailbox_lock:
            box = self._mailboxes.get(channel_id)
            if box is None:
                box = self._mailboxes[channel_id] = Mailbox()
            return box

    def connection(self, peer: int, channel_id: int) -> _Conn:
        with self._conn_cond:
            conn = self._conns.get((peer, channel_id))
        if conn is None:
            raise TransportError(f"no connection to rank {peer} on channel {channel_id}")
        return conn

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            try:
                sock.settimeout(self.timeout_secs)
                frame = decode_header(_recv_exact(sock, HEADER_BYTES))
                if frame.tag != _TAG_HELLO or frame.payload_len != 0:
                    raise TransportError("unexpected first frame on fresh connection")
                sock.settimeout(None)
            except (TransportError, OSError):
                sock.close()
                continue
            self._register(frame.source_rank, frame.channel_id, sock)

    def _register(self, peer: int, channel_id: int, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn = _Conn(sock)
        with self._conn_cond:
            self._conns[(peer, channel_id)] = conn
            self._conn_cond.notify_all()
        reader = threading.Thread(
            target=self._read_loop, args=(peer, channel_id, sock), daemon=True
        )
        reader.start()
        self._threads.append(reader)

    def _read_loop(self, peer: int, channel_id: int, sock: socket.socket) -> None:
        box = self.mailbox(channel_id)
        try:
            while True:
                frame = decode_header(_recv_exact(sock, HEADER_BYTES))
                payload = _recv_exact(sock, frame.payload_len) if frame.payload_len else b""
                box.put(frame.source_rank, frame.tag, payload)
        except TransportError as exc:
            if not self._closing:
                box.poison(TransportError(f"connection to rank {peer}: {exc}"))
        except OSError as exc:
            if not self._closing:
                box.poison(TransportError(f"connection to rank {peer}: {exc}"))

    def _dial(self, peer: int, channel_id: int) -> None:
        host, port = self.entries[peer][1], self.entries[peer][2]
        deadline = time.monotonic() + self.timeout_secs
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=self.timeout_secs)
                sock.settimeout(None)  # reads are bounded by mailbox waits, not the socket
                break
            except OSError as exc:
                if time.monotonic() >= deadline:
                    raise TransportError(
                        f"rank {self.rank} cannot reach rank {peer} at {host}:{port}: {exc}"
                    ) from exc
                time.sleep(0.05)
        sock.sendall(encode_frame(channel_id, self.rank, _TAG_HELLO, b""))
        self._register(peer, channel_id, sock)

    def _establish_channel(self, channel_id: int) -> None:
        for peer in range(self.size):
            if peer > self.rank:
                self._dial(peer, channel_id)
        deadline = time.monotonic() + self.timeout_secs
        expected = {(p, channel_id) for p in range(self.size) if p != self.rank}
        with self._conn_cond:
            while not expected.issubset(self._conns):
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    missing = sorted(p for p, _ in expected - set(self._conns))
                    raise TransportError(
                        f"rank {self.rank} timed out waiting for peers {missing} "
                        f"on channel {channel_id}"
                    )
                self._conn_cond.wait(remaining)

    def _barrier_over(self, channel: TcpChannel) -> None:
        if self.size == 1:
            return
        if self.rank == 0:
            for peer in range(1, self.size):
                channel.recv(peer, TAG_BARRIER)
            for peer in range(1, self.size):
                channel.send(peer, TAG_BARRIER, b"")
        else:
            channel.send(0, TAG_BARRIER, b"")
            channel.recv(0, TAG_BARRIER)

    # -- public API --------------------------------------------------------

    def duplicate_channel(self) -> TcpChannel:
        # No collective barrier here: the per-pair dial/accept handshake
        # keyed by channel_id already synchronizes each new socket, and the
        # accept side registers passively, so ranks may reach this call at
        # different times (they must still all make it, in the same order).
        cid = self._next_channel_id
        self._next_channel_id += 1
        ch = TcpChannel(self, cid)
        self._establish_channel(cid)
        self.channels.append(ch)
        return ch

    def barrier(self) -> None:
        self._barrier_over(self.channels[0])

    def close(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conn_cond:
            conns = list(self._conns.values())
        for conn in conns:
            try:
                conn.sock.close()
            except OSError:
                pass


def init_tcp(hostfile: str | Iterable[str], rank: int, timeout: float | None = None) -> TcpEndpoint:
    return TcpEndpoint(hostfile, rank, timeout)
