"""
Ordered map over independent work items (experts, test-point chunks).
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from app.config import settings

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """
    Apply `fn` to every item, preserving order.

    Runs sequentially when the worker count is 1; otherwise in a thread pool
    (BLAS/LAPACK calls release the GIL).
    """
    items = list(items)
    n_workers = settings.n_workers if workers is None else workers
    if n_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(n_workers, len(items))) as pool:
        return list(pool.map(fn, items))
