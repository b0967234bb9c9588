#!/usr/bin/env python3
import asyncio
import os
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from mixedboot.lib.errors import ConfigurationError

THREADS_ENV: str = "MIXEDBOOT_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(flag: Optional[int] = None, configured: Optional[int] = None) -> int:
    """--threads flag, then MIXEDBOOT_THREADS, then the configured value, then 1"""
    if flag is not None:
        value = flag
    elif os.environ.get(THREADS_ENV, "").strip():
        try:
            value = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigurationError(
                f"{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}"
            )
    elif configured is not None:
        value = configured
    else:
        value = 1
    if value < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {value}")
    return value


async def gather_in_executor(
    executor: Executor, function: Callable[[T], R], items: Sequence[T]
) -> List[R]:
    """run function over items on the executor, results in item order"""
    loop = asyncio.get_running_loop()
    futures = [loop.run_in_executor(executor, function, item) for item in items]
    return list(await asyncio.gather(*futures))


def map_ordered(
    function: Callable[[T], R],
    items: Sequence[T],
    workers: int = 1,
    processes: bool = False,
) -> List[R]:
    """
    Serial for a single worker, otherwise an asyncio fan-out over a thread
    (or process) pool. Order of results never depends on scheduling.
    """
    if workers <= 1 or len(items) <= 1:
        return [function(item) for item in items]

    async def fan_out() -> List[R]:
        pool_type = ProcessPoolExecutor if processes else ThreadPoolExecutor
        with pool_type(max_workers=workers) as executor:
            return await gather_in_executor(executor, function, items)

    return asyncio.run(fan_out())
