"""Shared transport machinery: errors, tag-matched mailboxes, channel base.

Matching key is (channel, source, tag) with FIFO delivery per key; the
tag-matching state of distinct channels is fully disjoint, which is what
lets concurrent lanes drive independent channels without contending.

Tags are unsigned 64-bit. Tags with the top bit set are reserved for
control traffic (barriers, length agreement) issued by the collective
helpers in this package.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from typing import Hashable

DEFAULT_TIMEOUT_SECS = 30.0
TIMEOUT_ENV = "RINGBENCH_TIMEOUT_SECS"

MAX_TAG = (1 << 64) - 1
CONTROL_TAG_BASE = 1 << 63
TAG_BARRIER = CONTROL_TAG_BASE | 1
TAG_LENGTH_EXCHANGE = CONTROL_TAG_BASE | 2
TAG_GATHER = CONTROL_TAG_BASE | 3


class TransportError(RuntimeError):
    """Message-layer failure (bad frame, disconnect, mismatched sizes...)."""


class ChannelTimeout(TransportError):
    """No matching message arrived in time; identifies the awaited key."""

    def __init__(self, source: int, tag: int, seconds: float):
        super().__init__(
            f"timed out after {seconds:.1f}s waiting for message from rank "
            f"{source} with tag {tag:#x}"
        )
        self.source = source
        self.tag = tag


def resolve_timeout(explicit: float | None = None) -> float:
    """Explicit value, else RINGBENCH_TIMEOUT_SECS, else 30 s."""
    if explicit is not None:
        return explicit
    env = os.environ.get(TIMEOUT_ENV)
    if env:
        return float(env)
    return DEFAULT_TIMEOUT_SECS


class Mailbox:
    """FIFO queues keyed by (source, tag) behind one condition variable."""

    def __init__(self):
        self._cond = threading.Condition()
        self._queues: dict[tuple[int, int], deque[bytes]] = {}
        self._poison: BaseException | None = None

    def put(self, source: int, tag: int, payload: bytes) -> None:
        with self._cond:
            self._queues.setdefault((source, tag), deque()).append(payload)
            self._cond.notify_all()

    def get(self, source: int, tag: int, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        key = (source, tag)
        with self._cond:
            while True:
                if self._poison is not None:
                    raise TransportError(f"channel torn down: {self._poison}")
                q = self._queues.get(key)
                if q:
                    payload = q.popleft()
                    if not q:
                        del self._queues[key]
                    return payload
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ChannelTimeout(source, tag, timeout)
                self._cond.wait(remaining)

    def poison(self, exc: BaseException) -> None:
        """Fail all pending and future receivers (connection teardown)."""
        with self._cond:
            if self._poison is None:
                self._poison = exc
            self._cond.notify_all()


def check_tag(tag: int) -> None:
    if not 0 <= tag <= MAX_TAG:
        raise ValueError(f"tag must fit in 64 bits, got {tag}")


def as_payload_bytes(buf) -> bytes:
    """Snapshot a bytes-like send buffer so the caller may reuse it at once."""
    if isinstance(buf, bytes):
        return buf
    return bytes(buf)


class Channel:
    """One tag-matching context bound to an endpoint.

    Subclasses implement ``send`` and ``recv``; this base layers the
    combined exchange and per-channel message counters on top. The
    optional ``send_loc``/``recv_loc`` arguments are (buffer_id, offset)
    hints that only the modeled backend consumes for its translation
    cache; real backends ignore them.
    """

    def __init__(self, endpoint: "Endpoint", channel_id: int):
        self.endpoint = endpoint
        self.channel_id = channel_id
        self.data_messages_sent = 0
        self.data_messages_received = 0
        self.data_bytes_sent = 0
        self.data_bytes_received = 0
        self._count_lock = threading.Lock()

    def send(self, dest: int, tag: int, payload, *, send_loc=None) -> None:
        raise NotImplementedError

    def recv(self, source: int, tag: int, *, timeout: float | None = None, recv_loc=None) -> bytes:
        raise NotImplementedError

    def sendrecv(
        self,
        sendbuf,
        dest: int,
        sendtag: int,
        recvcount: int,
        source: int,
        recvtag: int,
        *,
        timeout: float | None = None,
        send_loc=None,
        recv_loc=None,
    ) -> bytes:
        """Concurrent send + receive; safe when a whole ring calls it at once.

        The send side never blocks on the receiver draining (mailboxes are
        unbounded and socket readers always run), so issuing the send first
        and then blocking in recv cannot deadlock.
        """
        self.send(dest, sendtag, sendbuf, send_loc=send_loc)
        payload = self.recv(source, recvtag, timeout=timeout, recv_loc=recv_loc)
        if len(payload) != recvcount:
            raise TransportError(
                f"expected {recvcount} bytes from rank {source} tag {recvtag:#x}, "
                f"got {len(payload)}"
            )
        return payload

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.endpoint.size:
            raise ValueError(
                f"rank {rank} out of range for endpoint of size {self.endpoint.size}"
            )

    def _count_sent(self, tag: int, nbytes: int) -> None:
        if tag < CONTROL_TAG_BASE:
            with self._count_lock:
                self.data_messages_sent += 1
                self.data_bytes_sent += nbytes

    def _count_received(self, tag: int, nbytes: int) -> None:
        if tag < CONTROL_TAG_BASE:
            with self._count_lock:
                self.data_messages_received += 1
                self.data_bytes_received += nbytes


class Endpoint:
    """One communicator participant: a rank, its size, and its channels."""

    backend = "abstract"

    def __init__(self, rank: int, size: int, timeout: float | None = None):
        if size < 1:
            raise ValueError(f"size must be >= 1, got {size}")
        if not 0 <= rank < size:
            raise ValueError(f"rank {rank} out of range for size {size}")
        self.rank = rank
        self.size = size
        self.timeout_secs = resolve_timeout(timeout)
        self.channels: list[Channel] = []

    def duplicate_channel(self) -> Channel:
        raise NotImplementedError

    def barrier(self) -> None:
        raise NotImplementedError

    def now(self) -> float:
        """Benchmark clock; real backends use the wall, modeled ones a virtual clock."""
        return time.perf_counter()

    def data_messages_sent(self) -> int:
        return sum(ch.data_messages_sent for ch in self.channels)

    def data_bytes_sent(self) -> int:
        return sum(ch.data_bytes_sent for ch in self.channels)

    def data_bytes_received(self) -> int:
        return sum(ch.data_bytes_received for ch in self.channels)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
