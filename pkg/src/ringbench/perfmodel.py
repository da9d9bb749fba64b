"""Analytical model of per-region pinning cost and the driver translation cache.

A zero-copy fabric pins each translation region of a user buffer before
DMA and caches the translations. The model charges

    time = msg_latency + len / wire_bw + misses * pin_cost

per transfer, where misses counts the regions of the transfer not
resident in an LRU translation cache. Fragmented 4 KiB pages pay the pin
cost up to 512x more often than 2 MiB regions, which is the entire
bandwidth-collapse story this package measures.

Defaults: pin_cost 2 us (a per-page software overhead in the 0.5 MHz
class), wire_bw 12.5 GB/s per direction (one 100 Gbit/s rail), and a
fitted cache capacity of 1360 regions / msg_latency of 1 us. Capacity
and latency are free parameters, not measured constants.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

TWO_MB = 2 * 1024 * 1024

DEFAULT_PIN_COST = 2.0e-6
DEFAULT_WIRE_BW = 12.5e9
DEFAULT_MSG_LATENCY = 1.0e-6
DEFAULT_CACHE_REGIONS = 1360
DEFAULT_MODEL_ITERS = 4

# Distinct buffers charged per modeled transfer step: a send buffer and a
# receive buffer contend for the same translation cache.
CONCURRENT_BUFFERS = 2


@dataclass(frozen=True)
class PageLayout:
    """Page size plus how many contiguous pages coalesce into one region.

    4 KiB pages coalesce by powers of two up to 512 (one full 2 MiB
    region); a 2 MiB page already is a whole region, so coalesce stays 1.
    """

    page_bytes: int
    coalesce: int = 1

    def __post_init__(self):
        if self.page_bytes not in (4096, TWO_MB):
            raise ValueError(f"page_bytes must be 4096 or {TWO_MB}, got {self.page_bytes}")
        c = self.coalesce
        if c < 1 or (c & (c - 1)) != 0:
            raise ValueError(f"coalesce must be a power of two >= 1, got {c}")
        if self.page_bytes == TWO_MB and c != 1:
            raise ValueError("2 MiB pages already span a full region; coalesce must be 1")
        if self.region_bytes > TWO_MB:
            raise ValueError(
                f"region of {self.region_bytes} bytes exceeds the 2 MiB translation quantum"
            )

    @property
    def region_bytes(self) -> int:
        return self.page_bytes * self.coalesce

    @property
    def label(self) -> str:
        if self.page_bytes == TWO_MB:
            return "2MiB"
        return f"4KiB/c{self.coalesce}"


FRAGMENTED_4K = PageLayout(4096, 1)
HUGE_2M = PageLayout(TWO_MB, 1)


@dataclass(frozen=True)
class CostParams:
    """Wire bandwidth per direction, per-region pin cost, fixed message latency."""

    wire_bw: float = DEFAULT_WIRE_BW
    pin_cost: float = DEFAULT_PIN_COST
    msg_latency: float = DEFAULT_MSG_LATENCY

    def __post_init__(self):
        if self.wire_bw <= 0:
            raise ValueError(f"wire_bw must be > 0, got {self.wire_bw}")
        if self.pin_cost < 0 or self.msg_latency < 0:
            raise ValueError("pin_cost and msg_latency must be >= 0")


class TidCacheState:
    """LRU set of resident (buffer, region) translations, bounded by capacity."""

    def __init__(self, capacity: int = DEFAULT_CACHE_REGIONS):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self._resident: OrderedDict[tuple[Hashable, int], None] = OrderedDict()

    def __len__(self) -> int:
        return len(self._resident)

    def __contains__(self, key: tuple[Hashable, int]) -> bool:
        return key in self._resident

    def touch(self, key: tuple[Hashable, int]) -> bool:
        """Mark a region most-recently-used; True on hit, False on miss."""
        if key in self._resident:
            self._resident.move_to_end(key)
            return True
        if self.capacity > 0:
            self._resident[key] = None
            while len(self._resident) > self.capacity:
                self._resident.popitem(last=False)
        return False

    def clear(self) -> None:
        self._resident.clear()


def region_span(offset: int, length: int, layout: PageLayout) -> range:
    """Indices of the layout regions overlapping [offset, offset + length)."""
    if offset < 0 or length < 0:
        raise ValueError("offset and length must be >= 0")
    if length == 0:
        return range(0)
    rb = layout.region_bytes
    return range(offset // rb, (offset + length - 1) // rb + 1)


def region_count(offset: int, length: int, layout: PageLayout) -> int:
    """How many translation regions a transfer of ``length`` bytes touches."""
    return len(region_span(offset, length, layout))


def transfer_time(
    buffer_id: Hashable,
    offset: int,
    length: int,
    layout: PageLayout,
    cache: TidCacheState,
    params: CostParams,
) -> float:
    """Modeled seconds for one transfer; touches the cache (LRU insert/evict)."""
    misses = 0
    for idx in region_span(offset, length, layout):
        if not cache.touch((buffer_id, idx)):
            misses += 1
    return params.msg_latency + length / params.wire_bw + misses * params.pin_cost


@dataclass(frozen=True)
class ModelRow:
    """One modeled table entry: mean delivered bandwidth for a transfer size."""

    bytes: int
    layout: str
    capacity: int
    transfers: int
    total_seconds: float
    bandwidth_MBps: float


def effective_bandwidth(
    size: int,
    layout: PageLayout,
    capacity: int = DEFAULT_CACHE_REGIONS,
    params: CostParams = CostParams(),
    iters: int = DEFAULT_MODEL_ITERS,
    concurrent_buffers: int = CONCURRENT_BUFFERS,
) -> ModelRow:
    """Mean bandwidth of repeated transfers of ``size`` bytes from a cold cache.

    Each iteration moves ``concurrent_buffers`` distinct buffers through one
    shared translation cache, so working sets beyond capacity thrash exactly
    as live send/receive pairs do.
    """
    if size < 0:
        raise ValueError(f"size must be >= 0, got {size}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    cache = TidCacheState(capacity)
    total = 0.0
    transfers = 0
    for _ in range(iters):
        for buf in range(concurrent_buffers):
            total += transfer_time(("model", buf), 0, size, layout, cache, params)
            transfers += 1
    moved = transfers * size
    bw = moved / total / 1e6 if total > 0 else 0.0
    return ModelRow(size, layout.label, capacity, transfers, total, bw)


def model_sweep(
    sizes: Sequence[int],
    layouts: Iterable[PageLayout],
    capacity: int = DEFAULT_CACHE_REGIONS,
    params: CostParams = CostParams(),
    iters: int = DEFAULT_MODEL_ITERS,
) -> list[ModelRow]:
    """One ModelRow per (layout, size), layout-major, deterministic."""
    return [
        effective_bandwidth(size, layout, capacity, params, iters)
        for layout in layouts
        for size in sizes
    ]
