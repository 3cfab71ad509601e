"""Ordered fan-out of independent tasks over worker processes."""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def base_seed(rng):
    """Draw one integer from ``rng`` to key all per-task streams of a computation."""
    return int(rng.integers(0, 2**63 - 1))


def resolve_workers(workers=None):
    if workers is None:
        workers = int(os.environ.get("FACTORPHASE_WORKERS", "1"))
    return max(1, int(workers))


def run_tasks(fn, tasks, workers=1):
    """Apply ``fn`` to every task and return results in task order."""
    tasks = list(tasks)
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def stack(results, key):
    return np.array([r[key] for r in results])
