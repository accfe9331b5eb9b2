"""Deterministic per-trajectory random streams and block scheduling.

Every trajectory (or disorder realization) draws from its own generator
seeded by (master seed, stream tag, index).  Results therefore do not depend
on how trajectories are grouped into blocks or on the number of workers.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

STREAM_EIGEN = 1
STREAM_DISORDER = 2
_KIND_STREAMS = {
    "IDEAL_B1": 11,
    "IDEAL_B2": 12,
    "LIMIT_Z_GAMMA": 21,
    "LIMIT_Z_0": 22,
    "LIMIT_Y_GAMMA": 23,
    "LIMIT_Y_0": 24,
}


def kind_stream(kind):
    return _KIND_STREAMS[kind.value]


def trajectory_rng(seed, stream, index):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def map_blocks(worker, n_items, block_size, threads=1):
    """Apply worker(lo, hi) to consecutive index blocks; concatenate in order."""
    bounds = [(lo, min(lo + block_size, n_items)) for lo in range(0, n_items, block_size)]
    if threads <= 1 or len(bounds) == 1:
        parts = [worker(lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: worker(*b), bounds))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)
