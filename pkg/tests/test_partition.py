"""Partitioning: frozen examples plus coverage/contiguity/balance sweeps."""

import random

import pytest

from ringbench import WorkSlice, get_work, partition


def check_invariants(nwork, units):
    slices = partition(nwork, units)
    assert len(slices) == units
    assert sum(s.length for s in slices) == nwork, (nwork, units)
    cursor = 0
    for s in slices:
        assert s.offset == cursor, (nwork, units, slices)
        cursor += s.length
        assert abs(s.length - nwork / units) <= 1
    assert cursor == nwork


def test_even_split():
    assert get_work(8, 2, 4) == WorkSlice(4, 2)


def test_remainder_goes_to_high_lanes():
    # hand evaluation: basework=2, backfill=2, me=3 > backfill shifts by 1
    assert get_work(10, 3, 4) == WorkSlice(7, 3)


def test_lane_beyond_units_is_empty():
    assert get_work(10, 7, 4) == WorkSlice(0, 0)


def test_empty_work():
    assert get_work(0, 0, 3) == WorkSlice(0, 0)


def test_partition_matches_per_lane_calls():
    assert partition(10, 4) == [WorkSlice(*s) for s in [(0, 2), (2, 2), (4, 3), (7, 3)]]
    assert partition(5, 1) == [WorkSlice(0, 5)]


def test_more_lanes_than_work():
    # enumerated by hand from the formula: the empty shares come first
    assert [tuple(s) for s in partition(3, 5)] == [(0, 0), (0, 0), (0, 1), (1, 1), (2, 1)]


def test_zero_units_rejected():
    with pytest.raises(ValueError):
        get_work(4, 0, 0)
    with pytest.raises(ValueError):
        partition(4, 0)


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        get_work(-1, 0, 2)
    with pytest.raises(ValueError):
        get_work(4, -1, 2)


def test_lane_at_backfill_keeps_base_offset():
    # me == backfill takes the longer share without the offset correction
    nwork, units = 10, 4  # backfill = 2
    s = get_work(nwork, 2, units)
    assert s == WorkSlice(4, 3)
    check_invariants(nwork, units)


def test_invariants_small_exhaustive():
    for units in range(1, 33):
        for nwork in range(0, 257):
            check_invariants(nwork, units)


def test_invariants_randomized_large():
    rng = random.Random(0xC0FFEE)
    for _ in range(300):
        nwork = rng.randrange(0, 10**6)
        units = rng.randrange(1, 513)
        check_invariants(nwork, units)


def test_table_scale_counts_do_not_overflow():
    # byte-scale inputs: the largest benchmark packet split eight ways
    check_invariants(25_165_824, 8)
    total = sum(s.length for s in partition(25_165_824 * 1024, 512))
    assert total == 25_165_824 * 1024


def test_determinism():
    a = partition(12345, 17)
    b = partition(12345, 17)
    assert a == b
