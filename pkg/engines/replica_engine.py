# engines/replica_engine.py

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from engines.settings import replica_threads

logger = logging.getLogger(__name__)


# =========================================================
# Counter-based Replica Streams
# =========================================================
def replica_rng(seed, replica=0):
    """
    Generator for replica `replica` of run `seed`.

    The stream is Philox keyed by SeedSequence([seed, replica]); the
    SeedSequence hash is the mixing function, so replica k draws the same
    numbers whatever thread or order it runs in.
    """
    if seed < 0 or replica < 0:
        raise ValueError("seed and replica must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica)])))


def run_replicas(task, seed, count, threads=None):
    """
    Apply task(rng, replica) to replicas 0..count-1 and return results in
    replica order.
    """
    workers = threads or replica_threads()
    if count <= 0:
        return []

    def _one(replica):
        return task(replica_rng(seed, replica), replica)

    if workers == 1 or count == 1:
        return [_one(k) for k in range(count)]

    with ThreadPoolExecutor(max_workers=min(workers, count)) as pool:
        results = list(pool.map(_one, range(count)))

    logger.debug("ran %d replicas on %d threads", count, workers)
    return results
