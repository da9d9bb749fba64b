"""Multi-channel collective communication benchmarks, desk scale.

Contiguous work partitioning, huge-page-aware buffer allocation, chunked
multi-channel point-to-point transfers, ring allreduce, 4D halo exchange,
and an analytical page-pinning bandwidth model, behind one CLI
(``ringbench``).
"""

from .alloc import (
    Allocator,
    Backing,
    BufferHandle,
    HighWaterCache,
    HugePageUnavailable,
    Rounding,
    SlotCache,
    round_up_region,
)
from .collectives import local_copy, local_reduce, ring_allreduce
from .halo import CartComm4D, ExchangeMode, ExchangeStats, HaloPlan, exchange_stats, halo_exchange
from .partition import WorkSlice, get_work, partition
from .perfmodel import (
    CostParams,
    PageLayout,
    TidCacheState,
    effective_bandwidth,
    model_sweep,
    region_count,
    transfer_time,
)
from .transport import (
    ChannelTimeout,
    TopologyConfig,
    TransportError,
    init,
    init_inproc,
    init_modeled,
    init_tcp,
    multi_channel_sendrecv,
)

__version__ = "0.1.0"

__all__ = [
    "Allocator",
    "Backing",
    "BufferHandle",
    "CartComm4D",
    "ChannelTimeout",
    "CostParams",
    "ExchangeMode",
    "ExchangeStats",
    "HaloPlan",
    "HighWaterCache",
    "HugePageUnavailable",
    "PageLayout",
    "Rounding",
    "SlotCache",
    "TidCacheState",
    "TopologyConfig",
    "TransportError",
    "WorkSlice",
    "effective_bandwidth",
    "exchange_stats",
    "get_work",
    "halo_exchange",
    "init",
    "init_inproc",
    "init_modeled",
    "init_tcp",
    "local_copy",
    "local_reduce",
    "model_sweep",
    "multi_channel_sendrecv",
    "partition",
    "region_count",
    "ring_allreduce",
    "round_up_region",
    "transfer_time",
]
