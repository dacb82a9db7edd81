import os
import typing as t

import anyio
import anyio.to_thread

T = t.TypeVar("T")
R = t.TypeVar("R")

THREADS_ENV = "TOPOKEEP_THREADS"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def split_range(total: int, parts: int) -> list[tuple[int, int]]:
    """Split ``[0, total)`` into at most ``parts`` contiguous, non-empty spans."""
    parts = max(1, min(parts, total))
    bounds = [total * i // parts for i in range(parts + 1)]
    return [(lo, hi) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]


class WorkerPool:
    """Runs blocking work in anyio worker threads, ``threads`` at a time.

    Results always come back in submission order, so anything assembled from
    them is independent of the thread count.
    """

    def __init__(self, threads: int | None = None) -> None:
        self.threads = threads if threads is not None else default_threads()
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def __repr__(self) -> str:
        return f"WorkerPool(threads={self.threads})"

    async def map(self, fn: t.Callable[[T], R], items: t.Iterable[T]) -> list[R]:
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]

        results: list[t.Any] = [None] * len(items)
        errors: list[BaseException | None] = [None] * len(items)
        limiter = anyio.CapacityLimiter(self.threads)

        async def _run(i: int, item: T):
            try:
                results[i] = await anyio.to_thread.run_sync(fn, item, limiter=limiter)
            except Exception as e:
                errors[i] = e

        async with anyio.create_task_group() as tg:
            [tg.start_soon(_run, i, item) for i, item in enumerate(items)]

        for err in errors:
            if err is not None:
                raise err
        return t.cast(list[R], results)
