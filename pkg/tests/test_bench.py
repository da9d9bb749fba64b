"""Bench drivers and CLI: schema, determinism, correctness gating, hugepool."""

import csv
import os
import socket
import subprocess
import sys
from pathlib import Path

import pytest

from ringbench import Allocator, HugePageUnavailable
from ringbench.bench import BenchConfig, BenchError, CSV_COLUMNS, RowSink
from ringbench.bench import runners
from ringbench.bench.cli import main
from ringbench.bench.runners import (
    DEFAULT_ALLREDUCE_LENGTHS,
    TABLE_SIZES,
    run_allreduce,
    run_halo,
    run_hugepool,
    run_model,
)
from ringbench.bench.tables import BenchRow, render_breakdown_markdown, render_pivot_markdown

GOLDEN = Path(__file__).parent / "golden" / "model_small.csv"

EXPECTED_BYTE_COLUMN = [49152, 393216, 1327104, 3145728, 6144000, 10616832, 16859136, 25165824]


def small_halo_cfg(**over):
    base = dict(subcommand="halo", extents=(1, 2), iters=2, warmup=1)
    base.update(over)
    return BenchConfig(**base)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config validation -------------------------------------------------------------


def test_comms_threads_range_enforced():
    with pytest.raises(BenchError):
        BenchConfig(subcommand="halo", comms_threads=9)
    with pytest.raises(BenchError):
        BenchConfig(subcommand="halo", comms_threads=0)


def test_tcp_requires_hostfile_and_rank():
    with pytest.raises(BenchError):
        BenchConfig(subcommand="halo", transport="tcp")


def test_halo_rejects_hw_cache_arm(tmp_path):
    cfg = small_halo_cfg(allocs=("hw-cache",))
    with pytest.raises(BenchError):
        run_halo(cfg, RowSink())


def test_halo_sizes_must_be_surface_multiples():
    cfg = small_halo_cfg(sizes=(49153,))
    with pytest.raises(BenchError):
        run_halo(cfg, RowSink())


def test_default_sweeps():
    assert BenchConfig(subcommand="halo").extents == (8, 16, 24, 32, 40, 48, 56, 64)
    assert DEFAULT_ALLREDUCE_LENGTHS[0] == 2**6
    assert DEFAULT_ALLREDUCE_LENGTHS[-1] == 2**24


# -- model subcommand ---------------------------------------------------------------


def test_model_emits_two_layouts_times_sizes():
    sink = RowSink()
    rows = run_model(BenchConfig(subcommand="model", iters=2), sink)
    assert len(rows) == 16
    assert [r.bytes for r in rows[:8]] == list(TABLE_SIZES)
    assert all(r.source == "model" for r in rows)


def test_model_zero_pin_cost_collapses_layouts():
    rows = run_model(BenchConfig(subcommand="model", pin_cost=0.0, iters=2), RowSink())
    frag = {r.bytes: r.bandwidth_MBps for r in rows if r.mode.startswith("4KiB")}
    huge = {r.bytes: r.bandwidth_MBps for r in rows if r.mode == "2MiB"}
    assert frag == huge


def test_model_golden_csv(tmp_path):
    out = tmp_path / "model.csv"
    rc = main(["model", "--sizes", "49152,3145728,25165824", "--iters", "2",
               "--csv", str(out)])
    assert rc == 0
    assert out.read_bytes() == GOLDEN.read_bytes()


def test_csv_schema_columns():
    assert CSV_COLUMNS == ("source", "subcommand", "bytes", "mode", "alloc", "channels",
                           "iters", "comms_us", "compute_us", "total_us", "bandwidth_MBps")
    with open(GOLDEN, newline="") as fh:
        header = fh.readline().strip()
    assert header == ",".join(CSV_COLUMNS)


# -- halo subcommand -----------------------------------------------------------------


def test_halo_default_sweep_emits_table_byte_column(tmp_path):
    out = tmp_path / "halo.csv"
    rc = main(["halo", "--transport", "modeled", "--iters", "1", "--csv", str(out)])
    assert rc == 0
    got = [int(r["bytes"]) for r in read_rows(out)]
    assert got == EXPECTED_BYTE_COLUMN


def test_halo_modeled_deterministic_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["halo", "--transport", "modeled", "--iters", "2", "--local-extent",
            "1,8,16,64", "--alloc", "standard,huge", "--csv"]
    assert main(argv + [str(a)]) == 0
    assert main(argv + [str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_halo_modeled_matches_model_sweep_exactly(tmp_path):
    h, m = tmp_path / "h.csv", tmp_path / "m.csv"
    assert main(["halo", "--transport", "modeled", "--iters", "4", "--csv", str(h)]) == 0
    assert main(["model", "--iters", "4", "--csv", str(m)]) == 0
    halo_bw = {int(r["bytes"]): r["bandwidth_MBps"] for r in read_rows(h)}
    model_bw = {int(r["bytes"]): r["bandwidth_MBps"] for r in read_rows(m)
                if r["mode"].startswith("4KiB")}
    assert halo_bw == model_bw


def test_halo_measured_small_run_all_modes(tmp_path):
    out = tmp_path / "halo.csv"
    rc = main(["halo", "--local-extent", "1,2", "--mode", "seq,concurrent,threaded",
               "--comms-threads", "4", "--iters", "1", "--csv", str(out)])
    assert rc == 0
    rows = read_rows(out)
    assert len(rows) == 6  # 2 extents x 3 modes
    assert {r["mode"] for r in rows} == {"seq", "concurrent", "threaded"}
    threaded = [r for r in rows if r["mode"] == "threaded"]
    assert all(r["channels"] == "4" for r in threaded)
    assert all(r["source"] == "measured" for r in rows)
    assert all(float(r["bandwidth_MBps"]) > 0 for r in rows)


def test_halo_slot_cache_arm_runs_clean():
    cfg = small_halo_cfg(allocs=("slot-cache",), modes=("concurrent",), iters=1)
    sink = RowSink()
    rows = run_halo(cfg, sink)
    assert len(rows) == 2
    assert all(r.alloc == "slot-cache" for r in rows)


def test_halo_verification_gate_aborts(monkeypatch, tmp_path):
    # corrupt one received byte after the exchange: the gate must catch it,
    # and the surviving ranks must break out of the barrier promptly
    monkeypatch.setenv("RINGBENCH_TIMEOUT_SECS", "2")
    real = runners.halo_exchange

    def corrupting(plan, cart, endpoint, channels, send_bufs, recv_bufs):
        stats = real(plan, cart, endpoint, channels, send_bufs, recv_bufs)
        if endpoint.rank == 3:
            recv_bufs[2].view()[0] = (recv_bufs[2].view()[0] + 1) % 256
        return stats

    monkeypatch.setattr(runners, "halo_exchange", corrupting)
    out = tmp_path / "halo.csv"
    rc = main(["halo", "--local-extent", "1", "--iters", "1", "--csv", str(out)])
    assert rc == 2  # performance numbers for wrong answers are never emitted
    assert read_rows(out) == []


# -- allreduce subcommand --------------------------------------------------------------


def test_allreduce_small_run_reports_breakdown(tmp_path):
    out = tmp_path / "ar.csv"
    rc = main(["allreduce", "--lengths", "64,1000", "--ranks", "4", "--iters", "2",
               "--csv", str(out)])
    assert rc == 0
    rows = read_rows(out)
    assert [int(r["bytes"]) for r in rows] == [256, 4000]
    for r in rows:
        assert float(r["comms_us"]) > 0
        assert float(r["total_us"]) >= float(r["comms_us"])
        assert r["mode"] == "ring"
        assert r["alloc"] == "hw-cache"


def test_allreduce_length_one_completes():
    cfg = BenchConfig(subcommand="allreduce", lengths=(1,), ranks=3, iters=1, warmup=0)
    rows = run_allreduce(cfg, RowSink())
    assert len(rows) == 1
    assert rows[0].bytes == 4


def test_allreduce_int64_arm():
    cfg = BenchConfig(subcommand="allreduce", lengths=(257,), ranks=2, iters=1,
                      warmup=0, dtype="i64", allocs=("standard",))
    rows = run_allreduce(cfg, RowSink())
    assert rows[0].bytes == 257 * 8
    assert rows[0].alloc == "standard"


def test_allreduce_multi_channel_and_lanes():
    cfg = BenchConfig(subcommand="allreduce", lengths=(1000,), ranks=4, iters=1,
                      warmup=0, comms_threads=8, lanes=2, allocs=("slot-cache",))
    rows = run_allreduce(cfg, RowSink())
    assert rows[0].channels == 8


def test_allreduce_modeled_is_deterministic():
    cfg = BenchConfig(subcommand="allreduce", transport="modeled", lengths=(64, 4096),
                      ranks=4, iters=2, warmup=0)
    a = run_allreduce(cfg, RowSink())
    b = run_allreduce(cfg, RowSink())
    assert a == b
    assert all(r.source == "model" for r in a)


def test_allreduce_oracle_mismatch_aborts(monkeypatch, tmp_path):
    real = runners._serial_ring_sum

    def skew(inputs):
        out = real(inputs).copy()
        if len(out):
            out[0] += 1
        return out

    monkeypatch.setattr(runners, "_serial_ring_sum", skew)
    out = tmp_path / "ar.csv"
    rc = main(["allreduce", "--lengths", "64", "--ranks", "2", "--iters", "1",
               "--csv", str(out)])
    assert rc == 2
    assert read_rows(out) == []


# -- hugepool ---------------------------------------------------------------------------


def test_hugepool_range_checks():
    with pytest.raises(BenchError):
        run_hugepool(-1)
    with pytest.raises(BenchError):
        run_hugepool(8001)
    assert run_hugepool(0).command.endswith("2M:0")
    assert run_hugepool(8000).command.endswith("2M:8000")


def test_hugepool_dry_run_is_default(capsys):
    rc = main(["hugepool", "128"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "hugeadm --pool-pages-min=2M:128" in out
    assert "dry run" in out


def test_hugepool_cli_rejects_out_of_range(capsys):
    assert main(["hugepool", "8001"]) == 2
    assert main(["hugepool", "--", "-1"]) == 2


def test_hugepool_execute_without_tool(monkeypatch):
    monkeypatch.setattr("shutil.which", lambda name: None)
    with pytest.raises(BenchError, match="hugeadm"):
        run_hugepool(4, execute=True)


# -- output plumbing ----------------------------------------------------------------------


def test_row_sink_flushes_incrementally(tmp_path):
    path = tmp_path / "rows.csv"
    row = BenchRow("measured", "halo", 96, "seq", "standard", 1, 1, 1.0, 0.0, 1.0, 2.0)
    with RowSink(str(path)) as sink:
        sink.emit(row)
        # visible on disk before close
        assert len(path.read_text().splitlines()) == 2
    assert read_rows(path)[0]["bytes"] == "96"


def test_markdown_renderers():
    rows = [
        BenchRow("measured", "halo", 96, "seq", "standard", 1, 1, 1.0, 0.0, 1.0, 2.0),
        BenchRow("measured", "halo", 96, "threaded", "huge", 8, 1, 1.0, 0.0, 1.0, 3.0),
        BenchRow("measured", "halo", 768, "seq", "standard", 1, 1, 1.0, 0.0, 1.0, 4.0),
    ]
    md = render_pivot_markdown(rows, "t")
    assert "| Bytes | seq/standard | threaded/huge/ch8 |" in md
    assert "| 96 | 2.0 | 3.0 |" in md
    assert "| 768 | 4.0 | - |" in md
    bd = render_breakdown_markdown(rows, "t")
    assert "%comms" in bd


def test_markdown_file_written(tmp_path):
    md = tmp_path / "table.md"
    rc = main(["model", "--sizes", "49152", "--markdown", str(md)])
    assert rc == 0
    assert md.read_text().startswith("### Pinning-model")


# -- tcp end-to-end -------------------------------------------------------------------------


def test_allreduce_tcp_two_processes(tmp_path):
    ports = []
    for _ in range(2):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        ports.append(s.getsockname()[1])
        s.close()
    hostfile = tmp_path / "hosts"
    hostfile.write_text("".join(f"{r} 127.0.0.1:{p}\n" for r, p in enumerate(ports)))
    csvs = [tmp_path / f"r{r}.csv" for r in range(2)]
    procs = [
        subprocess.Popen(
            [sys.executable, "-m", "ringbench.bench.cli", "allreduce",
             "--transport", "tcp", "--hostfile", str(hostfile), "--rank", str(r),
             "--lengths", "64,1000", "--iters", "1", "--warmup", "0",
             "--csv", str(csvs[r])],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
            env={**os.environ, "RINGBENCH_TIMEOUT_SECS": "30"},
        )
        for r in range(2)
    ]
    outs = [p.communicate(timeout=60) for p in procs]
    assert all(p.returncode == 0 for p in procs), outs
    rows0 = read_rows(csvs[0])
    assert [int(r["bytes"]) for r in rows0] == [256, 4000]
    assert read_rows(csvs[1]) == []  # only rank 0 emits


def test_allreduce_huge_arm_end_to_end():
    # result views alias cache buffers; freeing huge mappings must tolerate that
    try:
        probe = Allocator(kind="huge")
        probe.free(probe.alloc_huge(1))
    except HugePageUnavailable:
        pytest.skip("no explicit huge-page pool configured")
    cfg = BenchConfig(subcommand="allreduce", lengths=(100, 5000), ranks=2, iters=1,
                      warmup=0, allocs=("huge",))
    rows = run_allreduce(cfg, RowSink())
    assert [r.bytes for r in rows] == [400, 20000]
    assert all(r.alloc == "huge" for r in rows)
