"""Deterministic contiguous partitioning of 1-D work across lanes.

Every communication and compute loop in this package splits its index
range with :func:`get_work`, so slices from the same call site always
line up across lanes, channels, and ranks.
"""

from __future__ import annotations

from typing import NamedTuple


class WorkSlice(NamedTuple):
    """A contiguous share of a 1-D workload: ``length`` items at ``offset``."""

    offset: int
    length: int

    @property
    def stop(self) -> int:
        return self.offset + self.length


def get_work(nwork: int, me: int, units: int) -> WorkSlice:
    """Return lane ``me``'s contiguous share of ``nwork`` items over ``units`` lanes.

    Base share is ``nwork // units``; the remainder goes to the highest
    lanes one item each. ``backfill`` counts the lanes that keep the base
    share, and only lanes strictly above it shift their offset right.
    A lane index at or past ``units`` gets the empty slice.
    """
    if units < 1:
        raise ValueError(f"units must be >= 1, got {units}")
    if nwork < 0 or me < 0:
        raise ValueError(f"nwork and me must be >= 0, got nwork={nwork} me={me}")
    if me >= units:
        return WorkSlice(0, 0)
    basework = nwork // units
    backfill = units - (nwork % units)
    mywork = (nwork + me) // units
    myoff = basework * me
    if me > backfill:
        myoff += me - backfill
    return WorkSlice(myoff, mywork)


def partition(nwork: int, units: int) -> list[WorkSlice]:
    """All ``units`` lane shares in lane order; element i is get_work(nwork, i, units)."""
    if units < 1:
        raise ValueError(f"units must be >= 1, got {units}")
    return [get_work(nwork, me, units) for me in range(units)]
