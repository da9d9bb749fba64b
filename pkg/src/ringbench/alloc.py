"""Communication-buffer allocation.

Three backing arms:

* explicit 2 MiB huge-page mappings (anonymous, or file-backed under a
  hugetlbfs mount so sibling processes on the node can map the segment),
* 2 MiB-aligned standard allocations (the portable fallback arm that
  benchmarks compare against),
* two reuse caches sitting on top of either arm: a high-water-mark
  dual-buffer cache and a ten-slot round-robin cache.

There is deliberately no silent fallback from huge to standard pages:
a failed huge allocation raises :class:`HugePageUnavailable` and the
caller decides. Silently degraded buffers are exactly the failure mode
this package exists to measure.
"""

from __future__ import annotations

import enum
import itertools
import mmap
import os
import threading
from dataclasses import dataclass, field

import numpy as np

TWO_MB = 2 * 1024 * 1024
STANDARD_PAGE = 4096
STANDARD_ALIGN = TWO_MB

DEFAULT_MAX_SHM_BYTES = 1 << 30
HUGE_PATH_ENV = "RINGBENCH_HUGE_PATH"
DEFAULT_HUGE_PATH = "/var/lib/hugetlbfs/group/wheel/pagesize-2MB"

# Not exposed by every interpreter build; Linux value for x86/arm64.
MAP_HUGETLB = getattr(mmap, "MAP_HUGETLB", 0x40000)
MAP_POPULATE = getattr(mmap, "MAP_POPULATE", 0x8000)


class Backing(enum.Enum):
    HUGE_ANONYMOUS = "huge-anonymous"
    HUGE_FILE_BACKED = "huge-file"
    STANDARD_ALIGNED = "standard"


class Rounding(enum.Enum):
    """Region rounding for huge mappings.

    STRICT maps the smallest whole number of 2 MiB regions that covers the
    request (at least one). OVERSHOOT reproduces the legacy allocator
    arithmetic ``(size + 2MiB) & ~(2MiB - 1)`` bit for bit, which adds a
    full extra region whenever the request is already region-aligned.
    """

    STRICT = "strict"
    OVERSHOOT = "overshoot"


class HugePageUnavailable(OSError):
    """Explicit huge pages could not be obtained; carries the OS reason."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def round_up_region(nbytes: int, mode: Rounding = Rounding.STRICT) -> int:
    """Round a byte count up to whole 2 MiB regions according to ``mode``."""
    if nbytes < 0:
        raise ValueError(f"byte count must be >= 0, got {nbytes}")
    if mode is Rounding.OVERSHOOT:
        return (nbytes + TWO_MB) & ~(TWO_MB - 1)
    return ((max(nbytes, 1) + TWO_MB - 1) // TWO_MB) * TWO_MB


_handle_ids = itertools.count(1)


@dataclass
class BufferHandle:
    """An allocated communication buffer.

    ``view()`` exposes the full mapped extent as a writable memoryview;
    fresh mappings read as zero, cache-recycled ones keep stale contents.
    """

    id: int
    requested_bytes: int
    mapped_bytes: int
    backing: Backing
    alignment: int
    address: int | None = None
    shm_path: str | None = None
    _mem: memoryview | None = field(default=None, repr=False)
    _owner: object = field(default=None, repr=False)

    def view(self) -> memoryview:
        if self._mem is None:
            raise ValueError(f"buffer {self.id} has been released")
        return self._mem

    def _release(self) -> None:
        if self._mem is not None:
            self._mem.release()
            self._mem = None
        if isinstance(self._owner, mmap.mmap):
            try:
                self._owner.close()
            except BufferError:
                # Callers may still hold views (e.g. a reduction result that
                # aliases a cache buffer); the unmap completes when the last
                # view dies and the mapping object is collected.
                pass
        self._owner = None
        if self.shm_path is not None:
            try:
                os.unlink(self.shm_path)
            except OSError:
                pass
            self.shm_path = None


class Allocator:
    """Counting allocator front end for one backing arm.

    Tracks every live handle so tests (and the acceptance harness) can
    assert zero leaks and zero hidden allocations. Thread safe.
    """

    def __init__(
        self,
        kind: str = "standard",
        rounding: Rounding = Rounding.STRICT,
        max_shm_bytes: int = DEFAULT_MAX_SHM_BYTES,
    ):
        if kind not in ("standard", "huge"):
            raise ValueError(f"unknown allocator kind {kind!r}")
        self.kind = kind
        self.rounding = rounding
        self.max_shm_bytes = max_shm_bytes
        self.alloc_calls = 0
        self.free_calls = 0
        self._live: dict[int, BufferHandle] = {}
        self._lock = threading.Lock()

    @property
    def live_count(self) -> int:
        with self._lock:
            return len(self._live)

    def alloc(self, nbytes: int) -> BufferHandle:
        """Allocate via this allocator's configured arm."""
        if self.kind == "huge":
            return self.alloc_huge(nbytes)
        return self.alloc_standard(nbytes)

    def alloc_standard(self, nbytes: int) -> BufferHandle:
        """2 MiB-aligned ordinary allocation, zero on first use."""
        if nbytes <= 0:
            raise ValueError(f"allocation size must be > 0, got {nbytes}")
        mapped = ((nbytes + STANDARD_PAGE - 1) // STANDARD_PAGE) * STANDARD_PAGE
        raw = np.zeros(mapped + STANDARD_ALIGN, dtype=np.uint8)
        off = (-raw.ctypes.data) % STANDARD_ALIGN
        window = raw[off : off + mapped]
        handle = BufferHandle(
            id=next(_handle_ids),
            requested_bytes=nbytes,
            mapped_bytes=mapped,
            backing=Backing.STANDARD_ALIGNED,
            alignment=STANDARD_ALIGN,
            address=raw.ctypes.data + off,
            _mem=memoryview(window.data),
            _owner=raw,
        )
        self._register(handle)
        return handle

    def alloc_huge(self, nbytes: int, shared: bool = False) -> BufferHandle:
        """Explicitly huge-page-backed mapping; never falls back to 4 KiB pages.

        ``shared=True`` creates the segment as a file under the hugetlbfs
        mount (``RINGBENCH_HUGE_PATH``) so other ranks on the node can map
        it; otherwise the mapping is anonymous.
        """
        if nbytes <= 0:
            raise ValueError(f"allocation size must be > 0, got {nbytes}")
        mapped = round_up_region(nbytes, self.rounding)
        if mapped > self.max_shm_bytes:
            raise ValueError(
                f"request of {mapped} mapped bytes exceeds max_shm_bytes={self.max_shm_bytes}"
            )
        handle_id = next(_handle_ids)
        shm_path = None
        try:
            if shared:
                root = os.environ.get(HUGE_PATH_ENV, DEFAULT_HUGE_PATH)
                shm_path = os.path.join(root, f"ringbench_shm_{os.getpid()}_{handle_id}")
                fd = os.open(shm_path, os.O_RDWR | os.O_CREAT, 0o666)
                try:
                    mm = mmap.mmap(
                        fd,
                        mapped,
                        flags=mmap.MAP_SHARED | MAP_POPULATE | MAP_HUGETLB,
                        prot=mmap.PROT_READ | mmap.PROT_WRITE,
                    )
                finally:
                    os.close(fd)
            else:
                mm = mmap.mmap(
                    -1,
                    mapped,
                    flags=mmap.MAP_SHARED | mmap.MAP_ANONYMOUS | MAP_HUGETLB,
                    prot=mmap.PROT_READ | mmap.PROT_WRITE,
                )
        except (OSError, ValueError) as exc:
            if shm_path is not None:
                try:
                    os.unlink(shm_path)
                except OSError:
                    pass
            raise HugePageUnavailable(
                f"huge-page mapping of {mapped} bytes failed: {exc}"
            ) from exc
        # First touch: the fabric DMA path must never read uninitialised pages.
        np.frombuffer(mm, dtype=np.uint8)[:] = 0
        handle = BufferHandle(
            id=handle_id,
            requested_bytes=nbytes,
            mapped_bytes=mapped,
            backing=Backing.HUGE_FILE_BACKED if shared else Backing.HUGE_ANONYMOUS,
            alignment=TWO_MB,
            shm_path=shm_path,
            _mem=memoryview(mm),
            _owner=mm,
        )
        self._register(handle)
        return handle

    def free(self, handle: BufferHandle) -> None:
        with self._lock:
            live = self._live.pop(handle.id, None)
            if live is None:
                raise ValueError(f"buffer {handle.id} is not live in this allocator")
            self.free_calls += 1
        handle._release()

    def _register(self, handle: BufferHandle) -> None:
        with self._lock:
            self.alloc_calls += 1
            self._live[handle.id] = handle


class HighWaterCache:
    """Dual-buffer cache that reallocates only when the requested length grows.

    Requests are in elements of ``element_bytes``; a zero-length request is
    treated as one element. Cache hits return the previous pair untouched
    (stale contents included).
    """

    def __init__(self, allocator: Allocator, element_bytes: int = 4):
        self.allocator = allocator
        self.element_bytes = element_bytes
        self.buffer: BufferHandle | None = None
        self.output: BufferHandle | None = None
        self.allocated_length = 0
        self._lock = threading.Lock()

    def alloc(self, length: int) -> tuple[BufferHandle, BufferHandle]:
        if length < 0:
            raise ValueError(f"length must be >= 0, got {length}")
        if length == 0:
            length = 1
        with self._lock:
            if length > self.allocated_length:
                if self.allocated_length > 0:
                    self._release()
                self.buffer = self.allocator.alloc(length * self.element_bytes)
                self.output = self.allocator.alloc(length * self.element_bytes)
                self.allocated_length = length
            assert self.buffer is not None and self.output is not None
            return self.buffer, self.output

    def dealloc(self) -> None:
        with self._lock:
            self._release()

    def _release(self) -> None:
        if self.buffer is not None:
            self.allocator.free(self.buffer)
        if self.output is not None:
            self.allocator.free(self.output)
        self.buffer = None
        self.output = None
        self.allocated_length = 0


class SlotCache:
    """Ten-slot lazy-release cache with a round-robin victim cursor.

    ``free`` parks the handle instead of releasing it, truly freeing
    whatever previously occupied the victim slot. ``alloc`` reuses a
    parked handle only on an exact 2 MiB size-class match.
    """

    SLOTS = 10

    def __init__(self, allocator: Allocator):
        self.allocator = allocator
        self.slots: list[tuple[int, BufferHandle] | None] = [None] * self.SLOTS
        self.victim_cursor = 0
        self._lock = threading.Lock()

    @staticmethod
    def size_class(nbytes: int) -> int:
        return round_up_region(nbytes, Rounding.STRICT)

    def alloc(self, nbytes: int) -> BufferHandle:
        if nbytes <= 0:
            raise ValueError(f"allocation size must be > 0, got {nbytes}")
        wanted = self.size_class(nbytes)
        with self._lock:
            for i, entry in enumerate(self.slots):
                if entry is not None and entry[0] == wanted:
                    self.slots[i] = None
                    return entry[1]
        return self.allocator.alloc(nbytes)

    def free(self, handle: BufferHandle) -> None:
        entry = (self.size_class(handle.requested_bytes), handle)
        with self._lock:
            victim = self.slots[self.victim_cursor]
            self.slots[self.victim_cursor] = entry
            self.victim_cursor = (self.victim_cursor + 1) % self.SLOTS
        if victim is not None:
            self.allocator.free(victim[1])

    def drain(self) -> None:
        """Truly release everything parked in the cache."""
        with self._lock:
            parked = [e for e in self.slots if e is not None]
            self.slots = [None] * self.SLOTS
            self.victim_cursor = 0
        for _, handle in parked:
            self.allocator.free(handle)
