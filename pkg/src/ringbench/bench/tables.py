"""Benchmark result rows, CSV emission, and markdown rendering.

The CSV schema is frozen: downstream tooling and the golden-file test
depend on these exact columns and on the fixed number formatting, which
also makes modeled runs byte-reproducible.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

CSV_COLUMNS = (
    "source",
    "subcommand",
    "bytes",
    "mode",
    "alloc",
    "channels",
    "iters",
    "comms_us",
    "compute_us",
    "total_us",
    "bandwidth_MBps",
)


@dataclass(frozen=True)
class BenchRow:
    source: str
    subcommand: str
    bytes: int
    mode: str
    alloc: str
    channels: int
    iters: int
    comms_us: float
    compute_us: float
    total_us: float
    bandwidth_MBps: float

    def csv_values(self) -> list[str]:
        return [
            self.source,
            self.subcommand,
            str(self.bytes),
            self.mode,
            self.alloc,
            str(self.channels),
            str(self.iters),
            f"{self.comms_us:.3f}",
            f"{self.compute_us:.3f}",
            f"{self.total_us:.3f}",
            f"{self.bandwidth_MBps:.3f}",
        ]

    @property
    def config_label(self) -> str:
        label = f"{self.mode}/{self.alloc}"
        if self.channels > 1:
            label += f"/ch{self.channels}"
        return label

    @property
    def percent_comms(self) -> float:
        return 100.0 * self.comms_us / self.total_us if self.total_us > 0 else 0.0


@dataclass(frozen=True)
class TimingBreakdown:
    """Per-call timing split: channel calls vs copy/reduce/allocation."""

    comms_seconds: float
    compute_seconds: float
    total_seconds: float
    bandwidth_MBps: float

    @property
    def percent_comms(self) -> float:
        return 100.0 * self.comms_seconds / self.total_seconds if self.total_seconds > 0 else 0.0


class RowSink:
    """Collects rows and, when asked, streams them to CSV as they land.

    Rows are flushed eagerly so an aborted run still leaves its partial
    results on disk.
    """

    def __init__(self, csv_path: str | None = None):
        self.rows: list[BenchRow] = []
        self._fh: io.TextIOBase | None = None
        if csv_path:
            self._fh = open(csv_path, "w", encoding="utf-8", newline="\n")
            self._fh.write(",".join(CSV_COLUMNS) + "\n")
            self._fh.flush()

    def emit(self, row: BenchRow) -> None:
        self.rows.append(row)
        if self._fh is not None:
            self._fh.write(",".join(row.csv_values()) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def rows_to_csv(rows: list[BenchRow]) -> str:
    out = [",".join(CSV_COLUMNS)]
    out.extend(",".join(r.csv_values()) for r in rows)
    return "\n".join(out) + "\n"


def render_pivot_markdown(rows: list[BenchRow], title: str) -> str:
    """Byte column plus one bandwidth column per configuration (table style)."""
    configs: list[str] = []
    sizes: list[int] = []
    cell: dict[tuple[int, str], float] = {}
    for r in rows:
        if r.config_label not in configs:
            configs.append(r.config_label)
        if r.bytes not in sizes:
            sizes.append(r.bytes)
        cell[(r.bytes, r.config_label)] = r.bandwidth_MBps
    lines = [
        f"### {title}",
        "",
        "| Bytes | " + " | ".join(configs) + " |",
        "|---:|" + "---:|" * len(configs),
    ]
    for size in sizes:
        vals = [
            f"{cell[(size, c)]:.1f}" if (size, c) in cell else "-"
            for c in configs
        ]
        lines.append(f"| {size} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def render_breakdown_markdown(rows: list[BenchRow], title: str) -> str:
    """Flat per-length table with the timing split and percent in comms."""
    lines = [
        f"### {title}",
        "",
        "| Bytes | Config | comms_us | compute_us | total_us | %comms | MB/s |",
        "|---:|:--|---:|---:|---:|---:|---:|",
    ]
    for r in rows:
        lines.append(
            f"| {r.bytes} | {r.config_label} | {r.comms_us:.1f} | {r.compute_us:.1f} "
            f"| {r.total_us:.1f} | {r.percent_comms:.1f} | {r.bandwidth_MBps:.1f} |"
        )
    return "\n".join(lines) + "\n"
