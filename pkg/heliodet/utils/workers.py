"""
Thread fan-out with results kept in input order
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar
import logging

from heliodet.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item, possibly on several threads

    Args:
        fn: Pure per-item function (its randomness must be keyed by the item)
        items: Inputs
        workers: Thread count; defaults to HELIODET_THREADS

    Returns:
        Results in input order, identical to a serial run
    """
    items = list(items)
    workers = settings.threads if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Fanning out {len(items)} items over {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
