"""4D periodic Cartesian topology and the eight-direction surface exchange.

A rank owns an L^4 local volume inside a torus of ranks; each exchange
moves one L^3 surface packet (96 bytes per site) to the neighbor in each
of +x,-x,+y,-y,+z,-z,+t,-t while receiving the opposite surfaces. On an
extent-2 torus the +d and -d neighbors are the same rank, so packets are
tagged by direction to keep the two flights apart.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np

from .alloc import BufferHandle
from .lanes import run_lanes
from .transport import Channel, Endpoint

N_DIRECTIONS = 8
DEFAULT_BYTES_PER_SITE = 96
DEFAULT_DIMS = (2, 2, 2, 2)
DEFAULT_EXTENTS = (8, 16, 24, 32, 40, 48, 56, 64)

DIRECTION_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z", "+t", "-t")


def direction_axis(d: int) -> int:
    return d >> 1


def direction_sign(d: int) -> int:
    return +1 if d % 2 == 0 else -1


def opposite(d: int) -> int:
    return d ^ 1


@dataclass(frozen=True)
class CartComm4D:
    """Rank <-> coordinate map on a periodic 4D grid, x fastest."""

    dims: tuple[int, int, int, int] = DEFAULT_DIMS

    def __post_init__(self):
        if len(self.dims) != 4 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be four positive extents, got {self.dims}")

    @property
    def size(self) -> int:
        return prod(self.dims)

    def coords(self, rank: int) -> tuple[int, int, int, int]:
        if not 0 <= rank < self.size:
            raise ValueError(f"rank {rank} out of range for {self.dims}")
        out = []
        for extent in self.dims:
            out.append(rank % extent)
            rank //= extent
        return tuple(out)

    def rank_of(self, x: int, y: int, z: int, t: int) -> int:
        coords = (x, y, z, t)
        for c, extent in zip(coords, self.dims):
            if not 0 <= c < extent:
                raise ValueError(f"coordinate {coords} out of range for {self.dims}")
        rank = 0
        for c, extent in zip(reversed(coords), reversed(self.dims)):
            rank = rank * extent + c
        return rank

    def neighbor(self, rank: int, dim: int, direction: int) -> int:
        """Periodic shift of one step along ``dim`` (direction +1 or -1)."""
        if not 0 <= dim < 4:
            raise ValueError(f"dim must be 0..3, got {dim}")
        if direction not in (1, -1):
            raise ValueError(f"direction must be +1 or -1, got {direction}")
        c = list(self.coords(rank))
        c[dim] = (c[dim] + direction) % self.dims[dim]
        return self.rank_of(*c)

    def neighbor_of_direction(self, rank: int, d: int) -> int:
        return self.neighbor(rank, direction_axis(d), direction_sign(d))


class ExchangeMode(enum.Enum):
    SEQUENTIAL = "seq"
    CONCURRENT = "concurrent"
    THREADED = "threaded"


@dataclass(frozen=True)
class HaloPlan:
    """One rank's exchange recipe: local extent, packet sizing, and mode."""

    local_extent: int
    bytes_per_site: int = DEFAULT_BYTES_PER_SITE
    mode: ExchangeMode = ExchangeMode.SEQUENTIAL
    comms_threads: int = 1
    iterations: int = 1

    def __post_init__(self):
        if self.local_extent < 1:
            raise ValueError(f"local extent must be >= 1, got {self.local_extent}")
        if self.bytes_per_site < 1:
            raise ValueError(f"bytes_per_site must be >= 1, got {self.bytes_per_site}")
        if not 1 <= self.comms_threads <= 8:
            raise ValueError(f"comms_threads must be 1..8, got {self.comms_threads}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")

    @property
    def packet_bytes(self) -> int:
        return self.bytes_per_site * self.local_extent**3


@dataclass(frozen=True)
class ExchangeStats:
    """Per-node accounting for one or more exchange calls.

    Bandwidth counts both directions (sent + received per node), matching
    the bidirectional line-rate convention of the table headers.
    """

    wall_seconds: float
    bytes_sent: int
    bytes_received: int

    @property
    def bandwidth_MBps(self) -> float:
        if self.wall_seconds <= 0:
            return 0.0
        return (self.bytes_sent + self.bytes_received) / self.wall_seconds / 1e6


def exchange_stats(results: Sequence[ExchangeStats]) -> ExchangeStats:
    """Average over ranks and iterations; empty input is an error."""
    if not results:
        raise ValueError("no exchange results to aggregate (zero iterations?)")
    wall = sum(r.wall_seconds for r in results) / len(results)
    sent = sum(r.bytes_sent for r in results) // len(results)
    recv = sum(r.bytes_received for r in results) // len(results)
    return ExchangeStats(wall, sent, recv)


def fill_pattern(buf: BufferHandle | memoryview, rank: int, direction: int, nbytes: int) -> None:
    """Write the deterministic byte pattern for (rank, direction)."""
    view = buf.view() if isinstance(buf, BufferHandle) else buf
    arr = np.frombuffer(view, dtype=np.uint8, count=nbytes)
    arr[:] = expected_pattern(rank, direction, nbytes)


def expected_pattern(rank: int, direction: int, nbytes: int) -> np.ndarray:
    idx = np.arange(nbytes, dtype=np.uint64)
    mix = idx * np.uint64(2654435761) + np.uint64(rank * 131071 + direction * 8191 + 17)
    return (mix & np.uint64(0xFF)).astype(np.uint8)


def verify_pattern(
    cart: CartComm4D, rank: int, direction: int, recv_buf: BufferHandle | memoryview, nbytes: int
) -> bool:
    """True iff the received bytes equal the neighbor's opposite-direction fill."""
    view = recv_buf.view() if isinstance(recv_buf, BufferHandle) else recv_buf
    got = np.frombuffer(view, dtype=np.uint8, count=nbytes)
    nbr = cart.neighbor_of_direction(rank, direction)
    return bool(np.array_equal(got, expected_pattern(nbr, opposite(direction), nbytes)))


def halo_exchange(
    plan: HaloPlan,
    cart: CartComm4D,
    endpoint: Endpoint,
    channels: Sequence[Channel],
    send_bufs: Sequence[BufferHandle],
    recv_bufs: Sequence[BufferHandle],
) -> ExchangeStats:
    """One full eight-direction exchange; returns this rank's stats.

    Modes: SEQUENTIAL completes one direction at a time on channels[0];
    CONCURRENT puts all eight in flight at once on channels[0];
    THREADED drives direction d over channels[d mod len(channels)], all
    concurrent. Message tags are the sending direction, so the opposite
    flights of an extent-2 torus never cross-match.
    """
    if cart.size != endpoint.size:
        raise ValueError(f"grid of {cart.size} ranks but endpoint size {endpoint.size}")
    if len(send_bufs) != N_DIRECTIONS or len(recv_bufs) != N_DIRECTIONS:
        raise ValueError("need exactly eight send and eight receive buffers")
    if not channels:
        raise ValueError("need at least one channel")
    packet = plan.packet_bytes
    for buf in (*send_bufs, *recv_bufs):
        if buf.mapped_bytes < packet:
            raise ValueError(
                f"buffer {buf.id} holds {buf.mapped_bytes} bytes, packet needs {packet}"
            )
    rank = endpoint.rank

    def xfer(d: int, channel: Channel) -> None:
        # Step d moves every rank's d-surface, so the packet arriving here
        # comes from the opposite-direction neighbor and lands in
        # recv_bufs[opposite(d)]; pairing send and recv on the same tag d
        # keeps a sequential direction loop in lockstep across ranks.
        dest = cart.neighbor_of_direction(rank, d)
        source = cart.neighbor_of_direction(rank, opposite(d))
        into = recv_bufs[opposite(d)]
        payload = channel.sendrecv(
            send_bufs[d].view()[:packet],
            dest,
            d,
            packet,
            source,
            d,
            send_loc=(send_bufs[d].id, 0),
            recv_loc=(into.id, 0),
        )
        into.view()[:packet] = payload

    t0 = endpoint.now()
    if plan.mode is ExchangeMode.SEQUENTIAL:
        for d in range(N_DIRECTIONS):
            xfer(d, channels[0])
    elif plan.mode is ExchangeMode.CONCURRENT:
        run_lanes([lambda d=d: xfer(d, channels[0]) for d in range(N_DIRECTIONS)])
    else:
        run_lanes(
            [lambda d=d: xfer(d, channels[d % len(channels)]) for d in range(N_DIRECTIONS)]
        )
    wall = endpoint.now() - t0
    return ExchangeStats(wall, N_DIRECTIONS * packet, N_DIRECTIONS * packet)
