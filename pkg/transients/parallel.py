# transients/parallel.py
import logging
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)


def ordered_map(func, items, threads=1):
    """``list(map(func, items))`` on a thread pool; results keep input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(func, items))


def chunks(n, size):
    """Half-open index ranges covering ``range(n)``."""
    size = max(1, int(size))
    return [(start, min(start + size, n)) for start in range(0, n, size)]
