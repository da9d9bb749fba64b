"""Benchmark drivers: halo sweep, allreduce sweep, model tables, pool sizing.

Every run re-verifies data correctness (halo pattern / allreduce oracle)
before timing is reported; a verification failure aborts the run with a
nonzero exit, leaving any rows already produced flushed to the CSV.
"""

from __future__ import annotations

import shutil
import struct
import subprocess
from dataclasses import dataclass, replace

import numpy as np

from ..alloc import Allocator, HighWaterCache, Rounding, SlotCache
from ..collectives import ReduceTiming, ring_allreduce
from ..halo import (
    DEFAULT_DIMS,
    DEFAULT_EXTENTS,
    CartComm4D,
    ExchangeMode,
    ExchangeStats,
    HaloPlan,
    exchange_stats,
    fill_pattern,
    halo_exchange,
    opposite,
    verify_pattern,
)
from ..lanes import run_lanes
from ..partition import partition
from ..perfmodel import (
    DEFAULT_CACHE_REGIONS,
    CostParams,
    HUGE_2M,
    PageLayout,
    effective_bandwidth,
    model_sweep,
)
from ..transport import TAG_GATHER, Endpoint, init_inproc, init_modeled, init_tcp
from .tables import BenchRow, RowSink

TABLE_SIZES = (49152, 393216, 1327104, 3145728, 6144000, 10616832, 16859136, 25165824)
DEFAULT_ALLREDUCE_LENGTHS = tuple(2**k for k in range(6, 25))
MODELED_VERIFY_EXTENT = 16

MODE_NAMES = {"seq": ExchangeMode.SEQUENTIAL, "concurrent": ExchangeMode.CONCURRENT,
              "threaded": ExchangeMode.THREADED}
HALO_ALLOCS = ("standard", "huge", "slot-cache")
ALLREDUCE_ALLOCS = ("standard", "huge", "hw-cache", "slot-cache")


class BenchError(RuntimeError):
    """Configuration or correctness failure; the CLI exits nonzero on it."""


@dataclass
class BenchConfig:
    subcommand: str
    transport: str = "inproc"
    allocs: tuple[str, ...] = ("standard",)
    modes: tuple[str, ...] = ("seq",)
    comms_threads: int = 1
    extents: tuple[int, ...] = DEFAULT_EXTENTS
    sizes: tuple[int, ...] | None = None
    lengths: tuple[int, ...] = DEFAULT_ALLREDUCE_LENGTHS
    ranks: int = 4
    iters: int = 5
    warmup: int = 1
    lanes: int = 1
    dtype: str = "f32"
    seed: int = 2024
    csv_path: str | None = None
    markdown_path: str | None = None
    hostfile: str | None = None
    rank: int | None = None
    pin_cost: float = 2.0e-6
    wire_bw: float = 12.5e9
    msg_latency: float = 1.0e-6
    page_bytes: int | None = None
    coalesce: int = 1
    cache_regions: int = DEFAULT_CACHE_REGIONS
    rounding: str = "strict"
    timeout: float | None = None

    def __post_init__(self):
        if self.transport not in ("inproc", "tcp", "modeled"):
            raise BenchError(f"unknown transport {self.transport!r}")
        if not 1 <= self.comms_threads <= 8:
            raise BenchError(f"--comms-threads must be 1..8, got {self.comms_threads}")
        if self.iters < 1:
            raise BenchError(f"--iters must be >= 1, got {self.iters}")
        if self.warmup < 0:
            raise BenchError(f"--warmup must be >= 0, got {self.warmup}")
        for mode in self.modes:
            if mode not in MODE_NAMES:
                raise BenchError(f"unknown mode {mode!r}; choose from {sorted(MODE_NAMES)}")
        if self.transport == "tcp" and (self.hostfile is None or self.rank is None):
            raise BenchError("tcp transport needs --hostfile and --rank")

    def cost_params(self) -> CostParams:
        return CostParams(wire_bw=self.wire_bw, pin_cost=self.pin_cost,
                          msg_latency=self.msg_latency)

    def rounding_mode(self) -> Rounding:
        return Rounding.OVERSHOOT if self.rounding == "overshoot" else Rounding.STRICT

    def model_layout(self, arm: str) -> PageLayout:
        if arm == "huge":
            return HUGE_2M
        return PageLayout(4096, self.coalesce)


def _make_arm(name: str, cfg: BenchConfig):
    if name == "standard":
        return Allocator("standard", cfg.rounding_mode())
    if name == "huge":
        return Allocator("huge", cfg.rounding_mode())
    if name == "slot-cache":
        return SlotCache(Allocator("standard", cfg.rounding_mode()))
    raise BenchError(f"unknown allocator arm {name!r}")


def _resolve_extents(cfg: BenchConfig) -> tuple[int, ...]:
    if cfg.sizes is None:
        return cfg.extents
    extents = []
    for nbytes in cfg.sizes:
        L = round((nbytes / 96) ** (1 / 3))
        if 96 * L**3 != nbytes:
            raise BenchError(
                f"halo sizes must be 96*L^3 for integer L; {nbytes} is not "
                f"(nearest is {96 * L**3})"
            )
        extents.append(L)
    return tuple(extents)


# -- halo -----------------------------------------------------------------------


def _halo_plan(cfg: BenchConfig, extent: int, mode_name: str) -> HaloPlan:
    mode = MODE_NAMES[mode_name]
    threads = cfg.comms_threads if mode is ExchangeMode.THREADED else 1
    return HaloPlan(local_extent=extent, mode=mode, comms_threads=threads,
                    iterations=cfg.iters)


def _verify_halo_shared(cart, rank, plan, world_bufs):
    packet = plan.packet_bytes
    _, recv_bufs = world_bufs[rank]
    for d in range(8):
        nbr = cart.neighbor_of_direction(rank, d)
        nbr_send = world_bufs[nbr][0][opposite(d)]
        got = np.frombuffer(recv_bufs[d].view(), np.uint8, count=packet)
        want = np.frombuffer(nbr_send.view(), np.uint8, count=packet)
        if not np.array_equal(got, want):
            raise BenchError(f"halo verification failed: rank {rank} direction {d}")


def _verify_halo_patterns(cart, rank, plan, recv_bufs):
    for d in range(8):
        if not verify_pattern(cart, rank, d, recv_bufs[d], plan.packet_bytes):
            raise BenchError(f"halo verification failed: rank {rank} direction {d}")


def _halo_world_row(cfg, cart, eps, dup_channels, plan, arm) -> ExchangeStats:
    """Run one (extent, mode, alloc) configuration across an in-process world."""
    size = cart.size
    world_bufs: list = [None] * size
    collected: list[list[ExchangeStats]] = [[] for _ in range(size)]

    def worker(r: int) -> None:
        ep = eps[r]
        if plan.mode is ExchangeMode.THREADED:
            chans = dup_channels[r][: plan.comms_threads]
        else:
            chans = [ep.channels[0]]
        send_bufs = [arm.alloc(plan.packet_bytes) for _ in range(8)]
        recv_bufs = [arm.alloc(plan.packet_bytes) for _ in range(8)]
        world_bufs[r] = (send_bufs, recv_bufs)
        try:
            for d in range(8):
                fill_pattern(send_bufs[d], r, d, plan.packet_bytes)
            ep.barrier()
            for it in range(cfg.warmup + cfg.iters):
                stats = halo_exchange(plan, cart, ep, chans, send_bufs, recv_bufs)
                _verify_halo_shared(cart, r, plan, world_bufs)
                ep.barrier()
                if it >= cfg.warmup:
                    collected[r].append(stats)
        finally:
            for h in (*send_bufs, *recv_bufs):
                arm.free(h)

    run_lanes([lambda r=r: worker(r) for r in range(size)])
    return exchange_stats([s for per in collected for s in per])


def _modeled_halo_row(cfg, cart, eps, dup_channels, plan, arm_name, verify_arm) -> BenchRow:
    # Timing is the analytic per-size model (the same evaluator the model
    # subcommand uses); delivery correctness is still exercised for real,
    # at a bounded extent so huge sweeps do not materialize gigabytes.
    m = effective_bandwidth(
        plan.packet_bytes, cfg.model_layout(arm_name), cfg.cache_regions,
        cfg.cost_params(), iters=cfg.iters,
    )
    verify_plan = replace(plan, local_extent=min(plan.local_extent, MODELED_VERIFY_EXTENT))
    verify_cfg = replace(cfg, iters=1, warmup=0)
    _halo_world_row(verify_cfg, cart, eps, dup_channels, verify_plan, verify_arm)
    per_iter_seconds = 16 * plan.packet_bytes / (m.bandwidth_MBps * 1e6)
    channels = plan.comms_threads if plan.mode is ExchangeMode.THREADED else 1
    return BenchRow(
        source="model", subcommand="halo", bytes=plan.packet_bytes,
        mode=_mode_label(plan), alloc=arm_name, channels=channels, iters=cfg.iters,
        comms_us=per_iter_seconds * 1e6, compute_us=0.0,
        total_us=per_iter_seconds * 1e6, bandwidth_MBps=m.bandwidth_MBps,
    )


def _mode_label(plan: HaloPlan) -> str:
    return plan.mode.value


def run_halo(cfg: BenchConfig, sink: RowSink) -> list[BenchRow]:
    for arm in cfg.allocs:
        if arm not in HALO_ALLOCS:
            raise BenchError(
                f"halo supports allocators {HALO_ALLOCS}; the dual-buffer "
                f"high-water cache has no eight-buffer halo shape"
            )
    extents = _resolve_extents(cfg)
    cart = CartComm4D(DEFAULT_DIMS)
    if cfg.transport == "tcp":
        return _run_halo_tcp(cfg, cart, extents, sink)

    eps = init_inproc(cart.size, timeout=cfg.timeout)
    dup_channels = [[ep.duplicate_channel() for _ in range(8)] for ep in eps]
    arms = {name: _make_arm(name, cfg) for name in cfg.allocs}
    verify_arm = Allocator("standard")
    emitted = []
    try:
        for extent in extents:
            for mode_name in cfg.modes:
                plan = _halo_plan(cfg, extent, mode_name)
                for arm_name in cfg.allocs:
                    if cfg.transport == "modeled":
                        row = _modeled_halo_row(
                            cfg, cart, eps, dup_channels, plan, arm_name, verify_arm
                        )
                    else:
                        agg = _halo_world_row(cfg, cart, eps, dup_channels, plan,
                                              arms[arm_name])
                        channels = plan.comms_threads if plan.mode is ExchangeMode.THREADED else 1
                        row = BenchRow(
                            source="measured", subcommand="halo", bytes=plan.packet_bytes,
                            mode=mode_name, alloc=arm_name, channels=channels,
                            iters=cfg.iters, comms_us=agg.wall_seconds * 1e6,
                            compute_us=0.0, total_us=agg.wall_seconds * 1e6,
                            bandwidth_MBps=agg.bandwidth_MBps,
                        )
                    sink.emit(row)
                    emitted.append(row)
    finally:
        for arm in arms.values():
            if isinstance(arm, SlotCache):
                arm.drain()
    return emitted


def _run_halo_tcp(cfg, cart, extents, sink) -> list[BenchRow]:
    ep = init_tcp(cfg.hostfile, cfg.rank, timeout=cfg.timeout)
    if ep.size != cart.size:
        ep.close()
        raise BenchError(
            f"halo runs the {cart.dims} geometry: hostfile must list "
            f"{cart.size} ranks, got {ep.size}"
        )
    emitted = []
    try:
        dups = [ep.duplicate_channel() for _ in range(8)]
        arms = {name: _make_arm(name, cfg) for name in cfg.allocs}
        for extent in extents:
            for mode_name in cfg.modes:
                plan = _halo_plan(cfg, extent, mode_name)
                for arm_name in cfg.allocs:
                    agg = _halo_tcp_row(cfg, cart, ep, dups, plan, arms[arm_name])
                    if ep.rank == 0:
                        channels = plan.comms_threads if plan.mode is ExchangeMode.THREADED else 1
                        row = BenchRow(
                            source="measured", subcommand="halo", bytes=plan.packet_bytes,
                            mode=mode_name, alloc=arm_name, channels=channels,
                            iters=cfg.iters, comms_us=agg.wall_seconds * 1e6,
                            compute_us=0.0, total_us=agg.wall_seconds * 1e6,
                            bandwidth_MBps=agg.bandwidth_MBps,
                        )
                        sink.emit(row)
                        emitted.append(row)
        for arm in arms.values():
            if isinstance(arm, SlotCache):
                arm.drain()
    finally:
        ep.close()
    return emitted


def _halo_tcp_row(cfg, cart, ep, dups, plan, arm) -> ExchangeStats | None:
    chans = dups[: plan.comms_threads] if plan.mode is ExchangeMode.THREADED \
        else [ep.channels[0]]
    send_bufs = [arm.alloc(plan.packet_bytes) for _ in range(8)]
    recv_bufs = [arm.alloc(plan.packet_bytes) for _ in range(8)]
    collected = []
    try:
        for d in range(8):
            fill_pattern(send_bufs[d], ep.rank, d, plan.packet_bytes)
        ep.barrier()
        for it in range(cfg.warmup + cfg.iters):
            stats = halo_exchange(plan, cart, ep, chans, send_bufs, recv_bufs)
            _verify_halo_patterns(cart, ep.rank, plan, recv_bufs)
            ep.barrier()
            if it >= cfg.warmup:
                collected.append(stats)
    finally:
        for h in (*send_bufs, *recv_bufs):
            arm.free(h)
    mine = exchange_stats(collected)
    return _gather_stats(ep, mine)


def _gather_stats(ep: Endpoint, mine: ExchangeStats) -> ExchangeStats | None:
    """Average per-rank stats onto rank 0 over the wire (None elsewhere)."""
    ch = ep.channels[0]
    packed = struct.pack("<dQQ", mine.wall_seconds, mine.bytes_sent, mine.bytes_received)
    if ep.rank != 0:
        ch.send(0, TAG_GATHER, packed)
        return None
    entries = [mine]
    for peer in range(1, ep.size):
        wall, sent, received = struct.unpack("<dQQ", ch.recv(peer, TAG_GATHER))
        entries.append(ExchangeStats(wall, sent, received))
    return exchange_stats(entries)


# -- allreduce --------------------------------------------------------------------


def _reduce_dtype(cfg: BenchConfig):
    return np.dtype(np.float32) if cfg.dtype == "f32" else np.dtype(np.int64)


def _reduce_input(cfg: BenchConfig, length: int, rank: int) -> np.ndarray:
    rng = np.random.default_rng((cfg.seed, length, rank))
    if _reduce_dtype(cfg) == np.dtype(np.float32):
        return rng.standard_normal(length).astype(np.float32)
    return rng.integers(-(2**31), 2**31, size=length, dtype=np.int64)


def _serial_ring_sum(inputs: list[np.ndarray]) -> np.ndarray:
    """Reference result: replay the per-chunk ring accumulation order serially."""
    P = len(inputs)
    n = len(inputs[0])
    out = np.empty_like(inputs[0])
    for c, (off, ln) in enumerate(partition(n, P)):
        acc = inputs[c][off : off + ln].copy()
        for k in range(1, P):
            acc = inputs[(c + k) % P][off : off + ln] + acc
        out[off : off + ln] = acc
    return out


class _ReduceArm:
    """Per-rank allocator context for one allreduce configuration."""

    def __init__(self, name: str, cfg: BenchConfig, itemsize: int):
        self.name = name
        self.itemsize = itemsize
        base = Rounding.OVERSHOOT if cfg.rounding == "overshoot" else Rounding.STRICT
        if name == "hw-cache":
            self.allocator = Allocator("standard", base)
            self.cache = HighWaterCache(self.allocator, element_bytes=itemsize)
        elif name == "slot-cache":
            self.allocator = SlotCache(Allocator("standard", base))
            self.cache = None
        elif name in ("standard", "huge"):
            self.allocator = Allocator(name, base)
            self.cache = None
        else:
            raise BenchError(f"unknown allocator arm {name!r}")

    def call(self, data, ep, chans, lanes, timing):
        if self.cache is not None:
            return ring_allreduce(data, ep, chans, lanes=lanes, cache=self.cache,
                                  timing=timing), None
        cache = HighWaterCache(self.allocator, element_bytes=self.itemsize)
        out = ring_allreduce(data, ep, chans, lanes=lanes, cache=cache, timing=timing)
        return out, cache

    def finish(self):
        if self.cache is not None:
            self.cache.dealloc()
        if isinstance(self.allocator, SlotCache):
            self.allocator.drain()


def run_allreduce(cfg: BenchConfig, sink: RowSink) -> list[BenchRow]:
    for arm in cfg.allocs:
        if arm not in ALLREDUCE_ALLOCS:
            raise BenchError(f"allreduce supports allocators {ALLREDUCE_ALLOCS}")
    if cfg.transport == "tcp":
        return _run_allreduce_world(cfg, None, sink)
    return _run_allreduce_world(cfg, cfg.ranks, sink)


def _make_allreduce_world(cfg: BenchConfig, P: int, arm_name: str) -> list[Endpoint]:
    if cfg.transport == "modeled":
        return list(init_modeled(P, cfg.model_layout(arm_name), cfg.cache_regions,
                                 cfg.cost_params(), timeout=cfg.timeout))
    return list(init_inproc(P, timeout=cfg.timeout))


def _run_allreduce_world(cfg: BenchConfig, P: int | None, sink: RowSink) -> list[BenchRow]:
    dtype = _reduce_dtype(cfg)
    source = "model" if cfg.transport == "modeled" else "measured"
    emitted = []
    for arm_name in cfg.allocs:
        if cfg.transport == "tcp":
            world = [init_tcp(cfg.hostfile, cfg.rank, timeout=cfg.timeout)]
        else:
            world = _make_allreduce_world(cfg, P, arm_name)
        size = world[0].size
        try:
            chans_by_ep = []
            for ep in world:
                chans_by_ep.append([ep.duplicate_channel() for _ in range(cfg.comms_threads)])
            arms = [_ReduceArm(arm_name, cfg, dtype.itemsize) for _ in world]
            for length in cfg.lengths:
                inputs = [_reduce_input(cfg, length, r) for r in range(size)]
                want = _serial_ring_sum(inputs) if size > 1 else inputs[0]
                want_bytes = want.tobytes()
                rows = _allreduce_length(cfg, world, chans_by_ep, arms, inputs,
                                         want_bytes, length)
                if rows is not None:
                    nbytes = length * dtype.itemsize
                    row = BenchRow(
                        source=source, subcommand="allreduce", bytes=nbytes,
                        mode="ring", alloc=arm_name, channels=cfg.comms_threads,
                        iters=cfg.iters, **rows,
                    )
                    sink.emit(row)
                    emitted.append(row)
            for arm in arms:
                arm.finish()
        finally:
            for ep in world:
                ep.close()
    return emitted


def _allreduce_length(cfg, world, chans_by_ep, arms, inputs, want_bytes, length):
    """Timed, verified iterations of one vector length; stats dict on rank 0."""
    per_rank: list[list[tuple[float, float, float, int]]] = [[] for _ in world]

    def worker(i: int) -> None:
        ep = world[i]
        chans = chans_by_ep[i]
        arm = arms[i]
        data = inputs[ep.rank]
        for it in range(cfg.warmup + cfg.iters):
            ep.barrier()
            bytes_before = ep.data_bytes_sent() + ep.data_bytes_received()
            timing = ReduceTiming()
            t0 = ep.now()
            out, transient = arm.call(data, ep, chans, cfg.lanes, timing)
            total = ep.now() - t0
            if out.tobytes() != want_bytes:
                raise BenchError(
                    f"allreduce verification failed: rank {ep.rank} length {length}"
                )
            if transient is not None:
                transient.dealloc()
            moved = (ep.data_bytes_sent() + ep.data_bytes_received()) - bytes_before
            if it >= cfg.warmup:
                per_rank[i].append(
                    (timing.comms_seconds, timing.compute_seconds, total, moved)
                )

    run_lanes([lambda i=i: worker(i) for i in range(len(world))])

    flat = [entry for per in per_rank for entry in per]
    comms = sum(e[0] for e in flat) / len(flat)
    compute = sum(e[1] for e in flat) / len(flat)
    total = sum(e[2] for e in flat) / len(flat)
    moved = sum(e[3] for e in flat) / len(flat)
    ep0 = world[0]
    if ep0.size > len(world):  # tcp: combine per-rank means onto rank 0
        packed = struct.pack("<dddd", comms, compute, total, moved)
        ch = ep0.channels[0]
        if ep0.rank != 0:
            ch.send(0, TAG_GATHER, packed)
            return None
        vals = [np.array([comms, compute, total, moved])]
        for peer in range(1, ep0.size):
            vals.append(np.array(struct.unpack("<dddd", ch.recv(peer, TAG_GATHER))))
        comms, compute, total, moved = np.mean(vals, axis=0)
    total_comms = comms if comms > 0 else float("nan")
    bandwidth = (moved / total_comms) / 1e6 if comms > 0 else 0.0
    return {
        "comms_us": comms * 1e6,
        "compute_us": compute * 1e6,
        "total_us": total * 1e6,
        "bandwidth_MBps": bandwidth,
    }


# -- model ------------------------------------------------------------------------


def run_model(cfg: BenchConfig, sink: RowSink) -> list[BenchRow]:
    sizes = cfg.sizes if cfg.sizes is not None else TABLE_SIZES
    if cfg.page_bytes is None:
        layouts = [PageLayout(4096, cfg.coalesce), HUGE_2M]
    else:
        coalesce = cfg.coalesce if cfg.page_bytes == 4096 else 1
        layouts = [PageLayout(cfg.page_bytes, coalesce)]
    rows = model_sweep(sizes, layouts, cfg.cache_regions, cfg.cost_params(),
                       iters=cfg.iters)
    emitted = []
    for r in rows:
        per_transfer_us = r.total_seconds / r.transfers * 1e6
        row = BenchRow(
            source="model", subcommand="model", bytes=r.bytes, mode=r.layout,
            alloc="-", channels=1, iters=cfg.iters, comms_us=per_transfer_us,
            compute_us=0.0, total_us=per_transfer_us, bandwidth_MBps=r.bandwidth_MBps,
        )
        sink.emit(row)
        emitted.append(row)
    return emitted


# -- hugepool ---------------------------------------------------------------------

HUGEPOOL_MAX_PAGES = 8000


@dataclass
class HugepoolReport:
    pages: int
    command: str
    executed: bool
    output: str = ""


def run_hugepool(pages: int, execute: bool = False) -> HugepoolReport:
    """Validate a 2 MiB pool size and print (or run) the resize command.

    The range check matches the vetting helper deployed on cluster nodes
    (0..8000 pages, i.e. up to 16 GiB); out-of-range requests fail loudly
    here rather than being silently ignored.
    """
    if pages < 0 or pages > HUGEPOOL_MAX_PAGES:
        raise BenchError(
            f"page count {pages} outside the supported pool range 0..{HUGEPOOL_MAX_PAGES}"
        )
    command = f"hugeadm --pool-pages-min=2M:{pages}"
    if not execute:
        return HugepoolReport(
            pages, command, False,
            "dry run: pass --execute to resize the pool (needs privileges)",
        )
    tool = shutil.which("hugeadm")
    if tool is None:
        raise BenchError(
            "hugeadm not found on PATH; install the libhugetlbfs utilities or "
            f"run '{command}' on a configured node"
        )
    proc = subprocess.run([tool, f"--pool-pages-min=2M:{pages}"],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise BenchError(f"pool resize failed: {proc.stderr.strip() or proc.stdout.strip()}")
    listing = subprocess.run([tool, "--pool-list"], capture_output=True, text=True)
    return HugepoolReport(pages, command, True, listing.stdout)
