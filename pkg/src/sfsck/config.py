"""INI config file support.

Search order: an explicit --config path, then the SFSCK_CONFIG environment
variable, then built-in defaults.  Recognized sections and keys:

    [scheduler]  weight_inodes, weight_dir_blocks, tick_ms, budget_step
    [cache]      capacity_blocks, readahead_inode_scan, readahead_dir_scan
    [engine]     granularity, exec, certify_batch
"""

from __future__ import annotations

import configparser
import os

from .cache import CacheConfig
from .engine import RunOptions
from .scheduler import SchedConfig

ENV_VAR = "SFSCK_CONFIG"


def load_options(path: str | None = None) -> RunOptions:
    opts = RunOptions()
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return opts
    cp = configparser.ConfigParser()
    with open(path) as f:
        cp.read_file(f)
    if cp.has_section("scheduler"):
        s = cp["scheduler"]
        opts.sched = SchedConfig(
            weight_inodes=s.getfloat("weight_inodes", 1.0),
            weight_dir_blocks=s.getfloat("weight_dir_blocks", 4.0),
            tick_s=s.getfloat("tick_ms", 10.0) / 1000.0,
            budget_step=s.getint("budget_step", 2),
        )
    if cp.has_section("cache"):
        c = cp["cache"]
        opts.cache = CacheConfig(
            capacity_blocks=c.getint("capacity_blocks", 4096),
            readahead_inode_scan=c.getint("readahead_inode_scan", 16),
            readahead_dir_scan=c.getint("readahead_dir_scan", 8),
        )
        opts.cache.validate()
    if cp.has_section("engine"):
        e = cp["engine"]
        opts.granularity = e.getint("granularity", opts.granularity)
        opts.exec_mode = e.get("exec", opts.exec_mode)
        opts.certify_batch = e.getint("certify_batch", opts.certify_batch)
    return opts
