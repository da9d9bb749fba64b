"""Point-to-point message layer with multiple independent channels per peer.

Backends: ``inproc`` (ranks are threads in one process), ``tcp`` (one
process per rank, one socket per peer per channel), and ``modeled``
(inproc delivery with virtual-clock timing from the pinning cost model).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..lanes import run_lanes
from ..partition import get_work
from ..perfmodel import CostParams, FRAGMENTED_4K, PageLayout, DEFAULT_CACHE_REGIONS
from .base import (
    CONTROL_TAG_BASE,
    Channel,
    ChannelTimeout,
    DEFAULT_TIMEOUT_SECS,
    Endpoint,
    Mailbox,
    TAG_BARRIER,
    TAG_GATHER,
    TAG_LENGTH_EXCHANGE,
    TIMEOUT_ENV,
    TransportError,
    resolve_timeout,
)
from .inproc import InProcEndpoint, InProcFabric, init_inproc
from .modeled import ModeledEndpoint, init_modeled
from .tcp import (
    FRAME_MAGIC,
    FRAME_VERSION,
    HEADER_BYTES,
    TcpEndpoint,
    WireFrame,
    decode_header,
    encode_frame,
    init_tcp,
    parse_hostfile,
)

__all__ = [
    "CONTROL_TAG_BASE",
    "Channel",
    "ChannelTimeout",
    "DEFAULT_TIMEOUT_SECS",
    "Endpoint",
    "FRAME_MAGIC",
    "FRAME_VERSION",
    "HEADER_BYTES",
    "InProcEndpoint",
    "InProcFabric",
    "Mailbox",
    "ModeledEndpoint",
    "TAG_BARRIER",
    "TAG_GATHER",
    "TAG_LENGTH_EXCHANGE",
    "TIMEOUT_ENV",
    "TcpEndpoint",
    "TopologyConfig",
    "TransportError",
    "WireFrame",
    "decode_header",
    "encode_frame",
    "init",
    "init_inproc",
    "init_modeled",
    "init_tcp",
    "multi_channel_sendrecv",
    "parse_hostfile",
    "resolve_timeout",
]


@dataclass
class TopologyConfig:
    """What to build: backend plus the backend's inputs."""

    backend: str = "inproc"
    size: int = 1
    hostfile: str | Iterable[str] | None = None
    rank: int | None = None
    layout: PageLayout = FRAGMENTED_4K
    cache_regions: int = DEFAULT_CACHE_REGIONS
    params: CostParams = field(default_factory=CostParams)
    timeout: float | None = None


def init(config: TopologyConfig) -> list[Endpoint]:
    """Build endpoints for the configured backend.

    inproc/modeled return every rank of the world; tcp returns just this
    process's endpoint (a one-element list).
    """
    if config.backend == "inproc":
        return list(init_inproc(config.size, config.timeout))
    if config.backend == "modeled":
        return list(
            init_modeled(
                config.size, config.layout, config.cache_regions, config.params, config.timeout
            )
        )
    if config.backend == "tcp":
        if config.hostfile is None or config.rank is None:
            raise TransportError("tcp backend needs a hostfile and a rank")
        return [init_tcp(config.hostfile, config.rank, config.timeout)]
    raise TransportError(f"unknown backend {config.backend!r}")


def multi_channel_sendrecv(
    channels: Sequence[Channel],
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
    """Exchange split across channels; byte-identical to one sendrecv.

    Lane t moves the contiguous byte slice get_work(count, t, T) over
    channels[t]; zero-length lanes still transfer (an empty message keeps
    every lane's matching state in step). The lowest-lane error wins.
    """
    T = len(channels)
    if T < 1:
        raise ValueError("need at least one channel")
    send_mv = memoryview(sendbuf)
    if T == 1:
        return channels[0].sendrecv(
            send_mv, dest, sendtag, recvcount, source, recvtag,
            timeout=timeout, send_loc=send_loc, recv_loc=recv_loc,
        )
    recvbuf = bytearray(recvcount)
    nsend = len(send_mv)

    def lane(t: int):
        soff, slen = get_work(nsend, t, T)
        roff, rlen = get_work(recvcount, t, T)
        s_loc = (send_loc[0], send_loc[1] + soff) if send_loc is not None else None
        r_loc = (recv_loc[0], recv_loc[1] + roff) if recv_loc is not None else None
        payload = channels[t].sendrecv(
            send_mv[soff : soff + slen], dest, sendtag, rlen, source, recvtag,
            timeout=timeout, send_loc=s_loc, recv_loc=r_loc,
        )
        recvbuf[roff : roff + rlen] = payload

    run_lanes([lambda t=t: lane(t) for t in range(T)])
    return bytes(recvbuf)
