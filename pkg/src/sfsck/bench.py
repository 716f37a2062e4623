"""Benchmark harness.

Runs the check modes over file-intensive and directory-intensive images,
repeats each cell, reports medians, and treats every timed run as a
correctness gate: a run whose canonical report differs from the serial
oracle's fails the whole bench.  Output is one TSV of raw rows, one TSV of
medians with speedup ratios, and matplotlib figures next to them.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
import threading
import time
from dataclasses import dataclass

import psutil

from .config import load_options
from .engine import run_mode
from .image import Image
from .mkfs import ImageSpec, build_image

RAW_COLUMNS = ("config", "mode", "threads", "rep", "total_s", "pass1_s", "pass2_s",
               "pass3_s", "pass4_s", "pass5_s", "peak_mem_mb", "findings", "oracle_ok")


@dataclass(frozen=True)
class BenchConfig:
    name: str
    spec: ImageSpec


def suite_configs(scale: str) -> list[BenchConfig]:
    if scale == "desk":
        # file-intensive: >= 1 GiB, >= 500k inodes, 95:1 files to dirs
        file_cfg = BenchConfig("file-intensive-desk", ImageSpec(
            total_blocks=262_144, total_inodes=524_288,
            file_count=499_700, dir_count=5_260,
            mean_file_blocks=0, max_dir_fanout=128, seed=2024))
        # directory-intensive: 1:1 with one file per directory
        dir_cfg = BenchConfig("dir-intensive-desk", ImageSpec(
            total_blocks=131_072, total_inodes=163_840,
            file_count=72_000, dir_count=72_000,
            mean_file_blocks=0, max_dir_fanout=24, seed=2024))
    else:
        file_cfg = BenchConfig("file-intensive-small", ImageSpec(
            total_blocks=32_768, total_inodes=32_768,
            file_count=28_500, dir_count=300,
            mean_file_blocks=0, max_dir_fanout=128, seed=2024))
        dir_cfg = BenchConfig("dir-intensive-small", ImageSpec(
            total_blocks=16_384, total_inodes=16_384,
            file_count=6_000, dir_count=6_000,
            mean_file_blocks=0, max_dir_fanout=24, seed=2024))
    return [file_cfg, dir_cfg]


def ensure_image(cfg: BenchConfig, workdir: str) -> str:
    os.makedirs(workdir, exist_ok=True)
    path = os.path.join(workdir, cfg.name + ".img")
    if not os.path.exists(path):
        t0 = time.perf_counter()
        img, manifest = build_image(cfg.spec, path)
        img.close()
        manifest.save(path + ".manifest")
        print(f"built {path} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return path


class MemorySampler:
    """Peak resident memory of this process plus its pool children."""

    def __init__(self, period: float = 0.05):
        self.period = period
        self.peak = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._proc = psutil.Process()

    def _usage(self) -> int:
        total = self._proc.memory_info().rss
        for child in self._proc.children(recursive=True):
            try:
                total += child.memory_full_info().uss
            except (psutil.Error, OSError):
                try:
                    total += child.memory_info().rss
                except psutil.Error:
                    pass
        return total

    def _loop(self) -> None:
        while not self._stop.wait(self.period):
            self.peak = max(self.peak, self._usage())

    def __enter__(self) -> "MemorySampler":
        self.peak = self._usage()
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self.peak = max(self.peak, self._usage())


def bench_one(path: str, mode: str, threads: int, opts) -> dict:
    with Image.open(path) as img:
        with MemorySampler() as mem:
            t0 = time.perf_counter()
            report = run_mode(img, mode, threads, opts)
            total = time.perf_counter() - t0
    row = {
        "total_s": total,
        "peak_mem_mb": mem.peak / 1e6,
        "findings": len(report.findings),
        "canonical": report.canonical_bytes(),
    }
    for k in ("pass1", "pass2", "pass3", "pass4", "pass5"):
        row[f"{k}_s"] = report.wall_times.get(k, 0.0)
    return row


def run_suite(configs: list[BenchConfig], modes: list[str], threads_list: list[int],
              reps: int, workdir: str, opts=None) -> tuple[list[dict], bool]:
    """All cells for all configs; returns (rows, oracle_ok)."""
    opts = opts or load_options()
    rows: list[dict] = []
    all_ok = True
    for cfg in configs:
        path = ensure_image(cfg, workdir)
        oracle = bench_one(path, "serial", 1, opts)
        oracle_bytes = oracle["canonical"]
        for mode in modes:
            for threads in (threads_list if mode != "serial" else [1]):
                for rep in range(reps):
                    if mode == "serial" and rep == 0:
                        row = oracle
                    else:
                        row = bench_one(path, mode, threads, opts)
                    ok = row["canonical"] == oracle_bytes
                    all_ok = all_ok and ok
                    rows.append({
                        "config": cfg.name, "mode": mode, "threads": threads,
                        "rep": rep, "oracle_ok": ok,
                        **{k: v for k, v in row.items() if k != "canonical"},
                    })
                    print(f"{cfg.name} {mode} t={threads} rep={rep}: "
                          f"{row['total_s']:.3f}s mem={row['peak_mem_mb']:.0f}MB ok={ok}",
                          file=sys.stderr)
    return rows, all_ok


def compute_medians(rows: list[dict]) -> dict:
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["config"], r["mode"], r["threads"]), []).append(r)
    medians = {}
    for key, cell in cells.items():
        med = {}
        for field in ("total_s", "pass1_s", "pass2_s", "pass3_s", "pass4_s",
                      "pass5_s", "peak_mem_mb"):
            med[field.removesuffix("_s") if field != "peak_mem_mb" else field] = \
                statistics.median(r[field] for r in cell)
        medians[key] = med
    return medians


def write_tsv(rows: list[dict], path: str) -> None:
    with open(path, "w") as f:
        f.write("\t".join(RAW_COLUMNS) + "\n")
        for r in rows:
            f.write("\t".join(_fmt(r[c]) for c in RAW_COLUMNS) + "\n")


def write_medians_tsv(medians: dict, path: str) -> None:
    cols = ("config", "mode", "threads", "median_total_s", "ratio_vs_serial",
            "pass1_s", "pass2_s", "pass3_s", "pass4_s", "pass5_s", "peak_mem_mb")
    with open(path, "w") as f:
        f.write("\t".join(cols) + "\n")
        for (config, mode, threads) in sorted(medians):
            med = medians[(config, mode, threads)]
            serial = medians.get((config, "serial", 1))
            ratio = med["total"] / serial["total"] if serial else float("nan")
            f.write("\t".join([
                config, mode, str(threads), f"{med['total']:.4f}", f"{ratio:.3f}",
                f"{med['pass1']:.4f}", f"{med['pass2']:.4f}", f"{med['pass3']:.4f}",
                f"{med['pass4']:.4f}", f"{med['pass5']:.4f}",
                f"{med['peak_mem_mb']:.1f}",
            ]) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_figures(medians: dict, out_dir: str) -> list[str]:
    from . import plots
    paths = []
    for config in sorted({c for (c, m, t) in medians}):
        for kind, fn in (("runtime", plots.runtime_figure),
                         ("breakdown", plots.breakdown_figure),
                         ("memory", plots.memory_figure)):
            path = os.path.join(out_dir, f"{kind}_{config}.png")
            fn(medians, config, path)
            paths.append(path)
    return paths


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="pbench", description="Benchmark the check modes.")
    p.add_argument("--suite", choices=("file", "dir", "both"), default="both")
    p.add_argument("--scale", choices=("small", "desk"), default="small")
    p.add_argument("--modes", default="serial,datapara,pipeline-split-equal,sched")
    p.add_argument("--threads", default="1,2,4,8")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--workdir", default="pbench-images")
    p.add_argument("--out-dir", default="pbench-out")
    p.add_argument("--no-plot", action="store_true")
    p.add_argument("--config", default=None)
    args = p.parse_args(argv)

    configs = suite_configs(args.scale)
    if args.suite == "file":
        configs = configs[:1]
    elif args.suite == "dir":
        configs = configs[1:]
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    threads_list = [int(t) for t in args.threads.split(",")]
    opts = load_options(args.config)

    os.makedirs(args.out_dir, exist_ok=True)
    rows, ok = run_suite(configs, modes, threads_list, args.reps, args.workdir, opts)
    medians = compute_medians(rows)
    write_tsv(rows, os.path.join(args.out_dir, "bench.tsv"))
    write_medians_tsv(medians, os.path.join(args.out_dir, "medians.tsv"))
    if not args.no_plot:
        for path in render_figures(medians, args.out_dir):
            print(f"wrote {path}", file=sys.stderr)
    print(f"wrote {os.path.join(args.out_dir, 'bench.tsv')}")
    print(f"wrote {os.path.join(args.out_dir, 'medians.tsv')}")
    if not ok:
        print("pbench: a run's report did not match the serial oracle", file=sys.stderr)
        return 1
    return 0
