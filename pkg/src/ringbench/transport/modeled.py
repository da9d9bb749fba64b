"""Modeled transport: in-process delivery plus a per-rank virtual clock.

Payloads move exactly as on the inproc backend, so correctness checks are
real; time comes from the pinning cost model instead of the wall. Each
channel operation charges the caller's rank clock with the modeled
transfer time of the buffers it touches, serialising concurrent lanes
onto one modeled wire. `Endpoint.now()` reads the virtual clock, so
benchmark timing code needs no backend-specific branches.

Buffer identity for the translation cache comes from the optional
``send_loc``/``recv_loc`` (buffer_id, offset) hints; anonymous traffic
falls back to one stable synthetic buffer per channel and direction.
"""

from __future__ import annotations

import threading

from ..perfmodel import (
    DEFAULT_CACHE_REGIONS,
    CostParams,
    FRAGMENTED_4K,
    PageLayout,
    TidCacheState,
    transfer_time,
)
from .inproc import InProcChannel, InProcEndpoint, InProcFabric


class ModelAccount:
    """One rank's virtual clock and translation-cache state."""

    def __init__(self, layout: PageLayout, capacity: int, params: CostParams):
        self.layout = layout
        self.params = params
        self.cache = TidCacheState(capacity)
        self.clock = 0.0
        self._lock = threading.Lock()

    def charge(self, loc: tuple, nbytes: int) -> float:
        buffer_id, offset = loc
        with self._lock:
            t = transfer_time(buffer_id, offset, nbytes, self.layout, self.cache, self.params)
            self.clock += t
            return t


class ModeledChannel(InProcChannel):
    def send(self, dest: int, tag: int, payload, *, send_loc=None) -> None:
        data = payload if isinstance(payload, bytes) else bytes(payload)
        super().send(dest, tag, data, send_loc=send_loc)
        loc = send_loc if send_loc is not None else (f"chan{self.channel_id}-send", 0)
        self.endpoint.account.charge(loc, len(data))

    def recv(self, source: int, tag: int, *, timeout=None, recv_loc=None) -> bytes:
        payload = super().recv(source, tag, timeout=timeout, recv_loc=recv_loc)
        loc = recv_loc if recv_loc is not None else (f"chan{self.channel_id}-recv", 0)
        self.endpoint.account.charge(loc, len(payload))
        return payload


class ModeledEndpoint(InProcEndpoint):
    backend = "modeled"
    channel_cls = ModeledChannel

    def __init__(
        self,
        fabric: InProcFabric,
        rank: int,
        layout: PageLayout = FRAGMENTED_4K,
        capacity: int = DEFAULT_CACHE_REGIONS,
        params: CostParams = CostParams(),
        timeout: float | None = None,
    ):
        self.account = ModelAccount(layout, capacity, params)
        super().__init__(fabric, rank, timeout)

    def now(self) -> float:
        return self.account.clock


def init_modeled(
    size: int,
    layout: PageLayout = FRAGMENTED_4K,
    capacity: int = DEFAULT_CACHE_REGIONS,
    params: CostParams = CostParams(),
    timeout: float | None = None,
) -> list[ModeledEndpoint]:
    fabric = InProcFabric(size)
    return [ModeledEndpoint(fabric, rank, layout, capacity, params, timeout) for rank in range(size)]
