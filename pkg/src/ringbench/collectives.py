"""Ring allreduce: scatter-reduce then allgather, chunked over channels.

Each rank's vector is split into P contiguous chunks. P-1 scatter-reduce
steps circulate partial sums rightward until every chunk is finalized on
exactly one rank; P-1 allgather steps then circulate the finalized bytes
verbatim, which is what makes float outputs bitwise identical on every
rank. Each step's transfer is split across the provided channels, and
local copy/reduce loops are split across compute lanes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .alloc import Allocator, HighWaterCache
from .lanes import run_lanes
from .partition import partition
from .transport import Channel, Endpoint, TAG_LENGTH_EXCHANGE, multi_channel_sendrecv

REDUCE_DTYPES = (np.dtype(np.float32), np.dtype(np.int64))

_PHASE_SCATTER = 0
_PHASE_GATHER = 1


def _step_tag(phase: int, step: int, chunk: int) -> int:
    # (phase, step, chunk) packed into one tag keeps every ring step
    # unambiguous even when all traffic shares a single channel.
    return (phase << 48) | (step << 24) | chunk


def _check_reduce_pair(dst: np.ndarray, src: np.ndarray) -> None:
    if dst.shape != src.shape:
        raise ValueError(f"length mismatch: {dst.shape} vs {src.shape}")
    if dst.dtype != src.dtype:
        raise ValueError(f"dtype mismatch: {dst.dtype} vs {src.dtype}")


def local_copy(dst: np.ndarray, src: np.ndarray, lanes: int = 1) -> None:
    """dst[:] = src, the copy partitioned over compute lanes."""
    _check_reduce_pair(dst, src)
    if lanes <= 1 or len(dst) == 0:
        dst[:] = src
        return
    slices = partition(len(dst), lanes)

    def work(off, ln):
        dst[off : off + ln] = src[off : off + ln]

    run_lanes([lambda s=s: work(s.offset, s.length) for s in slices])


def local_reduce(dst: np.ndarray, src: np.ndarray, lanes: int = 1) -> None:
    """dst[i] += src[i], partitioned over compute lanes; lane count never changes the result."""
    _check_reduce_pair(dst, src)
    if lanes <= 1 or len(dst) == 0:
        dst += src
        return
    slices = partition(len(dst), lanes)

    def work(off, ln):
        dst[off : off + ln] += src[off : off + ln]

    run_lanes([lambda s=s: work(s.offset, s.length) for s in slices])


@dataclass
class ReduceTiming:
    """Seconds spent inside channel calls vs. in copy/reduce/allocation."""

    comms_seconds: float = 0.0
    compute_seconds: float = 0.0


def _validate_input(buf) -> np.ndarray:
    arr = np.asarray(buf)
    if arr.ndim != 1:
        raise ValueError(f"reduce buffers are 1-D, got shape {arr.shape}")
    if arr.dtype not in REDUCE_DTYPES:
        raise ValueError(f"unsupported element kind {arr.dtype}; use float32 or int64")
    return arr


def ring_allreduce(
    buf,
    endpoint: Endpoint,
    channels: list[Channel] | None = None,
    *,
    lanes: int = 1,
    cache: HighWaterCache | None = None,
    allocator: Allocator | None = None,
    timing: ReduceTiming | None = None,
) -> np.ndarray:
    """Elementwise sum of every rank's ``buf``; identical bytes on all ranks.

    The result aliases the high-water cache's output buffer and stays
    valid until the cache is reused or deallocated. Passing a persistent
    ``cache`` makes repeated same-length reductions allocation-free.
    """
    arr = _validate_input(buf)
    chans = list(channels) if channels else [endpoint.channels[0]]
    if not chans:
        raise ValueError("need at least one channel")
    P = endpoint.size
    rank = endpoint.rank
    n = len(arr)
    now = endpoint.now

    # (length, kind) circulates the full ring before anyone raises, so every
    # rank completes the same number of hops (no stalled neighbors) and every
    # rank reports the same mismatch.
    if P > 1:
        mine = struct.pack("<QB", n, REDUCE_DTYPES.index(arr.dtype))
        left, right = (rank - 1) % P, (rank + 1) % P
        seen: list[bytes] = []
        forward = mine
        for _ in range(P - 1):
            forward = chans[0].sendrecv(
                forward, right, TAG_LENGTH_EXCHANGE, len(mine), left, TAG_LENGTH_EXCHANGE
            )
            seen.append(forward)
        for hop, theirs in enumerate(seen, start=1):
            if theirs != mine:
                o_len, o_kind = struct.unpack("<QB", theirs)
                raise ValueError(
                    f"allreduce mismatch across ranks: rank {(rank - hop) % P} has "
                    f"length {o_len} kind {REDUCE_DTYPES[o_kind]}, rank {rank} has "
                    f"length {n} kind {arr.dtype}"
                )

    if cache is None:
        cache = HighWaterCache(allocator or Allocator(), element_bytes=arr.itemsize)
    elif cache.element_bytes != arr.itemsize:
        raise ValueError(
            f"cache element size {cache.element_bytes} does not match dtype {arr.dtype}"
        )

    t0 = now()
    scratch_h, out_h = cache.alloc(n)
    out = np.frombuffer(out_h.view(), dtype=arr.dtype, count=n)
    scratch = np.frombuffer(scratch_h.view(), dtype=arr.dtype, count=n)
    local_copy(out, arr, lanes)
    if timing is not None:
        timing.compute_seconds += now() - t0
    if P == 1:
        return out

    out_bytes = out_h.view()
    isz = arr.itemsize
    chunks = partition(n, P)
    left, right = (rank - 1) % P, (rank + 1) % P

    for phase, nsteps in ((_PHASE_SCATTER, P - 1), (_PHASE_GATHER, P - 1)):
        for step in range(nsteps):
            if phase == _PHASE_SCATTER:
                send_chunk = (rank - step) % P
                recv_chunk = (rank - step - 1) % P
            else:
                send_chunk = (rank + 1 - step) % P
                recv_chunk = (rank - step) % P
            soff, slen = chunks[send_chunk]
            roff, rlen = chunks[recv_chunk]
            tc = now()
            payload = multi_channel_sendrecv(
                chans,
                out_bytes[soff * isz : (soff + slen) * isz],
                right,
                _step_tag(phase, step, send_chunk),
                rlen * isz,
                left,
                _step_tag(phase, step, recv_chunk),
                send_loc=(out_h.id, soff * isz),
                recv_loc=(scratch_h.id, roff * isz),
            )
            tr = now()
            received = np.frombuffer(payload, dtype=arr.dtype)
            if phase == _PHASE_SCATTER:
                local_copy(scratch[roff : roff + rlen], received, lanes)
                local_reduce(out[roff : roff + rlen], scratch[roff : roff + rlen], lanes)
            else:
                local_copy(out[roff : roff + rlen], received, lanes)
            if timing is not None:
                timing.comms_seconds += tr - tc
                timing.compute_seconds += now() - tr
    return out


def allreduce_messages_expected(size: int, n_channels: int) -> int:
    """Data messages one rank sends per call: one per lane per ring step."""
    return 2 * (size - 1) * n_channels
