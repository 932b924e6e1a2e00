import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, TypeVar

T = TypeVar("T")
R = TypeVar("R")

Workers = int | Literal["auto"]


def resolve_workers(setting: Workers) -> int:
    if setting == "auto":
        n = os.cpu_count() or 1
        return max(1, n - 1)  # leave a core free
    if setting <= 0:
        raise ValueError("workers must be > 0, or 'auto'")
    return setting


def ordered_map(fn: Callable[[T], R], items: Iterable[T], *, workers: Workers = 1) -> list[R]:
    """`map` over a thread pool; results keep input order so callers stay schedule-independent."""
    n = resolve_workers(workers)
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
