"""Command-line tools: pmkfs, pcorrupt, pfsck, pbench.

pfsck exit codes: 0 clean, 1 inconsistencies found and repaired, 2 the image
is not recognized (bad magic or superblock checksum).  All repairs run in
assume-yes mode; there are no prompts.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import load_options
from .corrupt import Kind, inject_corruptions
from .engine import run_mode
from .errors import NoEligibleTargetError, SpecInfeasibleError, UnrecognizedImageError
from .image import Image
from .mkfs import ImageSpec, build_image, suggest_geometry
from .scheduler import SystemUtilization

MODES = ("serial", "datapara", "pipeline-split-equal", "pipeline-split-manual",
         "sched", "rsched")


def main_pmkfs(argv=None) -> int:
    p = argparse.ArgumentParser(prog="pmkfs", description="Build a synthetic SFS image.")
    p.add_argument("out", help="image file to create")
    p.add_argument("--files", type=int, default=0)
    p.add_argument("--dirs", type=int, default=0)
    p.add_argument("--blocks", type=int, default=0, help="total blocks (0 = auto-size)")
    p.add_argument("--inodes", type=int, default=0, help="total inodes (0 = auto-size)")
    p.add_argument("--mean-file-blocks", type=int, default=1)
    p.add_argument("--fanout", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", default=None, help="manifest path (default: OUT.manifest)")
    args = p.parse_args(argv)

    blocks, inodes = args.blocks, args.inodes
    if not blocks or not inodes:
        ab, ai = suggest_geometry(args.files, args.dirs, args.mean_file_blocks, args.fanout)
        blocks = blocks or ab
        inodes = inodes or ai
    spec = ImageSpec(total_blocks=blocks, total_inodes=inodes,
                     file_count=args.files, dir_count=args.dirs,
                     mean_file_blocks=args.mean_file_blocks,
                     max_dir_fanout=args.fanout, seed=args.seed)
    try:
        img, manifest = build_image(spec, args.out)
    except SpecInfeasibleError as e:
        print(f"pmkfs: {e}", file=sys.stderr)
        return 1
    img.close()
    manifest.save(args.manifest or args.out + ".manifest")
    files, dirs = manifest.counts()
    print(f"{args.out}: {blocks} blocks, {inodes} inodes, {files} files, {dirs} dirs")
    return 0


def _parse_plan(specs: list[str]) -> list[tuple[Kind, int]]:
    plan = []
    for s in specs:
        name, _, count = s.partition(":")
        plan.append((Kind(name), int(count) if count else 1))
    return plan


def main_pcorrupt(argv=None) -> int:
    p = argparse.ArgumentParser(prog="pcorrupt",
                                description="Inject recorded corruptions into an image (in place).")
    p.add_argument("image")
    p.add_argument("--corrupt", action="append", default=[], metavar="KIND[:COUNT]",
                   help="corruption kind and count; repeatable. Kinds: "
                        + ", ".join(k.value for k in Kind))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ledger", default=None, help="ledger path (default: IMAGE.ledger)")
    args = p.parse_args(argv)

    try:
        plan = _parse_plan(args.corrupt)
    except (ValueError, KeyError) as e:
        print(f"pcorrupt: bad --corrupt spec: {e}", file=sys.stderr)
        return 1
    try:
        with Image.open(args.image) as img:
            ledger = inject_corruptions(img, plan, args.seed)
            img.flush()
    except (UnrecognizedImageError, NoEligibleTargetError) as e:
        print(f"pcorrupt: {e}", file=sys.stderr)
        return 1
    ledger.save(args.ledger or args.image + ".ledger")
    print(f"{args.image}: {len(ledger.records)} corruptions applied")
    return 0


def _parse_split(text: str) -> tuple[int, int]:
    a, _, b = text.partition(":")
    return int(a), int(b)


def main_pfsck(argv=None) -> int:
    p = argparse.ArgumentParser(prog="pfsck", description="Check and repair an SFS image.")
    p.add_argument("image")
    p.add_argument("--mode", choices=MODES, default="serial")
    p.add_argument("--threads", type=int, default=0, help="worker count (0 = cpu count)")
    p.add_argument("--split", type=_parse_split, default=None, metavar="P1:P2",
                   help="manual thread split for pipeline-split-manual")
    p.add_argument("--report", choices=("text", "structured"), default="text")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.add_argument("--config", default=None, help="INI config path (env: SFSCK_CONFIG)")
    p.add_argument("--exec", dest="exec_mode", choices=("auto", "inline", "process"),
                   default=None, help="kernel execution mode for parallel runs")
    p.add_argument("--debug-trace", default=None, metavar="PATH",
                   help="dump the engine event log to PATH")
    args = p.parse_args(argv)

    opts = load_options(args.config)
    if args.exec_mode:
        opts.exec_mode = args.exec_mode
    if args.debug_trace:
        opts.trace_path = args.debug_trace
        opts.item_events = True
    threads = args.threads or (os.cpu_count() or 2)
    if args.mode == "rsched":
        opts.utilization = SystemUtilization()
        opts.idle_priority = True

    try:
        with Image.open(args.image) as img:
            report = run_mode(img, args.mode, threads, opts, split=args.split)
    except UnrecognizedImageError as e:
        print(f"pfsck: unrecognized image: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"pfsck: {e}", file=sys.stderr)
        return 2

    text = report.to_text() if args.report == "text" else report.to_jsonl()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 1 if report.findings else 0


def main_pbench(argv=None) -> int:
    from .bench import main as bench_main
    return bench_main(argv)


if __name__ == "__main__":
    sys.exit(main_pfsck())
