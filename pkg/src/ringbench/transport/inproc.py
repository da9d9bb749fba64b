"""In-process transport: every rank is a thread sharing one fabric object.

This is the desk-scale backend: it runs the full 16-rank benchmark
geometry in a single process with zero setup, with real concurrency
semantics (per-channel mailboxes, blocking receives, timeouts).
"""

from __future__ import annotations

import threading

from .base import Channel, Endpoint, Mailbox, TransportError, as_payload_bytes, check_tag


class InProcFabric:
    """Mailbox switchboard shared by all ranks of one in-process world."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError(f"size must be >= 1, got {size}")
        self.size = size
        self._lock = threading.Lock()
        self._mailboxes: dict[tuple[int, int], Mailbox] = {}
        self._barrier = threading.Barrier(size)

    def mailbox(self, rank: int, channel_id: int) -> Mailbox:
        key = (rank, channel_id)
        with self._lock:
            box = self._mailboxes.get(key)
            if box is None:
                box = self._mailboxes[key] = Mailbox()
            return box

    def barrier_wait(self, timeout: float | None = None) -> None:
        # A timed-out wait breaks the barrier for every rank: a dead rank
        # must fail the world loudly instead of wedging it.
        try:
            self._barrier.wait(timeout)
        except threading.BrokenBarrierError as exc:
            raise TransportError(
                "barrier broken or timed out; another rank likely failed"
            ) from exc


class InProcChannel(Channel):
    def send(self, dest: int, tag: int, payload, *, send_loc=None) -> None:
        self._check_rank(dest)
        check_tag(tag)
        data = as_payload_bytes(payload)
        fabric = self.endpoint.fabric
        fabric.mailbox(dest, self.channel_id).put(self.endpoint.rank, tag, data)
        self._count_sent(tag, len(data))

    def recv(self, source: int, tag: int, *, timeout=None, recv_loc=None) -> bytes:
        self._check_rank(source)
        check_tag(tag)
        box = self.endpoint.fabric.mailbox(self.endpoint.rank, self.channel_id)
        payload = box.get(source, tag, timeout if timeout is not None else self.endpoint.timeout_secs)
        self._count_received(tag, len(payload))
        return payload


class InProcEndpoint(Endpoint):
    backend = "inproc"
    channel_cls = InProcChannel

    def __init__(self, fabric: InProcFabric, rank: int, timeout: float | None = None):
        super().__init__(rank, fabric.size, timeout)
        self.fabric = fabric
        self._next_channel_id = 1
        self._channel_lock = threading.Lock()
        self.channels = [self.channel_cls(self, 0)]

    def duplicate_channel(self) -> InProcChannel:
        with self._channel_lock:
            cid = self._next_channel_id
            self._next_channel_id += 1
        ch = self.channel_cls(self, cid)
        self.channels.append(ch)
        return ch

    def barrier(self) -> None:
        self.fabric.barrier_wait(self.timeout_secs)


def init_inproc(size: int, timeout: float | None = None) -> list[InProcEndpoint]:
    """All ranks of an in-process world, constructed together (implicit barrier)."""
    fabric = InProcFabric(size)
    return [InProcEndpoint(fabric, rank, timeout) for rank in range(size)]
