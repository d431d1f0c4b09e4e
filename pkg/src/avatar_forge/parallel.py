"""Ordered thread-pool map capped by ``AVATAR_FORGE_THREADS``."""
import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    try:
        n = int(os.environ.get("AVATAR_FORGE_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def parallel_map(fn, items):
    """``list(map(fn, items))``; results keep input order for any thread count."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
