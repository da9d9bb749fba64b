"""Command line entry point.

Subcommands: halo (surface-exchange sweep on the 2^4 torus), allreduce
(ring reduction sweep), model (analytic bandwidth tables), hugepool
(2 MiB pool sizing helper). Exit code 0 only if every correctness check
passed.
"""

from __future__ import annotations

import argparse
import sys

from ..alloc import HugePageUnavailable
from ..transport import TransportError
from .runners import (
    ALLREDUCE_ALLOCS,
    BenchConfig,
    BenchError,
    DEFAULT_ALLREDUCE_LENGTHS,
    HALO_ALLOCS,
    TABLE_SIZES,
    run_allreduce,
    run_halo,
    run_hugepool,
    run_model,
)
from .tables import RowSink, render_breakdown_markdown, render_pivot_markdown


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.split(",") if v)


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", metavar="PATH", help="write rows to PATH as they complete")
    p.add_argument("--markdown", metavar="PATH", help="write the rendered table to PATH")
    p.add_argument("--iters", type=int, default=None, help="timed iterations per row")
    p.add_argument("--warmup", type=int, default=1, help="untimed warmup iterations")
    p.add_argument("--seed", type=int, default=2024)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pin-cost", type=float, default=2.0e-6,
                   help="seconds per translation-region pin (default 2e-6)")
    p.add_argument("--wire-bw", type=float, default=12.5e9,
                   help="bytes/s per direction (default 12.5e9, one rail)")
    p.add_argument("--msg-latency", type=float, default=1.0e-6,
                   help="fixed seconds per message (fitted default 1e-6)")
    p.add_argument("--cache-regions", type=int, default=1360,
                   help="translation-cache capacity in regions (fitted default 1360)")
    p.add_argument("--page-bytes", type=int, default=None, choices=(4096, 2097152),
                   help="restrict the model to one page size")
    p.add_argument("--coalesce", type=int, default=1,
                   help="contiguous 4 KiB pages per translation region (power of two)")


def _add_transport_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transport", choices=("inproc", "tcp", "modeled"), default="inproc")
    p.add_argument("--hostfile", help="tcp: lines of 'rank host:port'")
    p.add_argument("--rank", type=int, default=None, help="tcp: this process's rank")
    p.add_argument("--comms-threads", type=int, default=1, metavar="N",
                   help="independent channels driven concurrently (1..8)")
    p.add_argument("--rounding", choices=("strict", "overshoot"), default="strict",
                   help="huge-region rounding; overshoot reproduces the legacy arithmetic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringbench",
        description="Collective-communication benchmarks with a page-pinning bandwidth model",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    halo = sub.add_parser("halo", help="eight-direction surface exchange on the 2^4 torus")
    halo.add_argument("--mode", type=_str_list, default=("seq",),
                      help="comma list from {seq,concurrent,threaded}")
    halo.add_argument("--alloc", type=_str_list, default=("standard",),
                      help=f"comma list from {{{','.join(HALO_ALLOCS)}}}")
    halo.add_argument("--local-extent", type=_int_list, default=None, metavar="L,...",
                      help="local extents; packets are 96*L^3 bytes (default 8..64)")
    halo.add_argument("--sizes", type=_int_list, default=None, metavar="B,...",
                      help="packet byte sizes (must equal 96*L^3)")
    _add_transport_flags(halo)
    _add_model_flags(halo)
    _add_output_flags(halo)

    allreduce = sub.add_parser("allreduce", help="ring allreduce sweep")
    allreduce.add_argument("--lengths", type=_int_list, default=DEFAULT_ALLREDUCE_LENGTHS,
                           help="vector lengths in elements (default 2^6..2^24)")
    allreduce.add_argument("--ranks", type=int, default=4,
                           help="world size for inproc/modeled transports")
    allreduce.add_argument("--alloc", type=_str_list, default=("hw-cache",),
                           help=f"comma list from {{{','.join(ALLREDUCE_ALLOCS)}}}")
    allreduce.add_argument("--lanes", type=int, default=1, help="compute lanes for copy/reduce")
    allreduce.add_argument("--dtype", choices=("f32", "i64"), default="f32")
    _add_transport_flags(allreduce)
    _add_model_flags(allreduce)
    _add_output_flags(allreduce)

    model = sub.add_parser("model", help="analytic bandwidth tables")
    model.add_argument("--sizes", type=_int_list, default=None,
                       help=f"transfer sizes in bytes (default {','.join(map(str, TABLE_SIZES))})")
    _add_model_flags(model)
    _add_output_flags(model)

    hugepool = sub.add_parser("hugepool", help="validate and print/run 2 MiB pool sizing")
    hugepool.add_argument("pages", type=int, help="pool size in 2 MiB pages (0..8000)")
    hugepool.add_argument("--execute", action="store_true",
                          help="actually invoke hugeadm (default is a dry run)")
    return parser


def _config_from_args(args: argparse.Namespace) -> BenchConfig:
    default_iters = {"halo": 5, "allreduce": 3, "model": 4}
    kwargs = dict(
        subcommand=args.subcommand,
        iters=args.iters if args.iters is not None else default_iters[args.subcommand],
        warmup=args.warmup,
        seed=args.seed,
        csv_path=args.csv,
        markdown_path=args.markdown,
        pin_cost=args.pin_cost,
        wire_bw=args.wire_bw,
        msg_latency=args.msg_latency,
        cache_regions=args.cache_regions,
        page_bytes=args.page_bytes,
        coalesce=args.coalesce,
    )
    if args.subcommand in ("halo", "allreduce"):
        kwargs.update(
            transport=args.transport,
            hostfile=args.hostfile,
            rank=args.rank,
            comms_threads=args.comms_threads,
            allocs=args.alloc,
            rounding=args.rounding,
        )
    if args.subcommand == "halo":
        kwargs.update(modes=args.mode, sizes=args.sizes)
        if args.local_extent is not None:
            kwargs.update(extents=args.local_extent)
    if args.subcommand == "allreduce":
        kwargs.update(lengths=args.lengths, ranks=args.ranks, lanes=args.lanes,
                      dtype=args.dtype)
    if args.subcommand == "model":
        kwargs.update(sizes=args.sizes)
    return BenchConfig(**kwargs)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.subcommand == "hugepool":
        try:
            report = run_hugepool(args.pages, args.execute)
        except BenchError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"pool request: {args.pages} x 2 MiB pages")
        print(f"command: {report.command}")
        print(report.output if report.executed else f"({report.output})")
        return 0

    try:
        cfg = _config_from_args(args)
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    runner = {"halo": run_halo, "allreduce": run_allreduce, "model": run_model}[cfg.subcommand]
    with RowSink(cfg.csv_path) as sink:
        try:
            rows = runner(cfg, sink)
        except (BenchError, HugePageUnavailable, TransportError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2

    if rows:
        title = {
            "halo": "Halo exchange bandwidth MB/s (sent+received per node)",
            "allreduce": "Ring allreduce per call (sent+received per node)",
            "model": "Pinning-model effective bandwidth MB/s (per transfer)",
        }[cfg.subcommand]
        if cfg.subcommand == "allreduce":
            table = render_breakdown_markdown(rows, title)
        else:
            table = render_pivot_markdown(rows, title)
        print(table, end="")
        if cfg.markdown_path:
            with open(cfg.markdown_path, "w", encoding="utf-8") as fh:
                fh.write(table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
