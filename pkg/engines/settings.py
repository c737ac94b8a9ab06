# engines/settings.py

import os

from dotenv import load_dotenv

load_dotenv()


# =========================================================
# Environment Contract
# =========================================================
THREADS = int(os.getenv("RGGLOC_THREADS", str(os.cpu_count() or 1)))
CLIQUE_NODE_CAP = int(os.getenv("RGGLOC_CLIQUE_NODE_CAP", str(10**7)))
MAX_DIM = int(os.getenv("RGGLOC_MAX_DIM", "4"))
OUTPUT_DIR = os.getenv("RGGLOC_OUTPUT_DIR", "results")
API_URL = os.getenv("RGGLOC_API_URL")
LOG_LEVEL = os.getenv("RGGLOC_LOG_LEVEL", "INFO")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def replica_threads():
    """Worker count for replica pools, re-read so tests can patch the env."""
    value = os.getenv("RGGLOC_THREADS")
    if value is None:
        return max(1, THREADS)
    return max(1, int(value))


def clique_node_cap():
    return int(os.getenv("RGGLOC_CLIQUE_NODE_CAP", str(CLIQUE_NODE_CAP)))
