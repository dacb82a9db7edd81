import functools
import inspect
import time
import typing as t

from .context import RunContext
from .states import Stage

P = t.ParamSpec("P")
R = t.TypeVar("R")


class Timed(t.Generic[P, R]):
    """Wraps a pipeline stage and adds its wall-clock time to the active run."""

    def __init__(self, fn: t.Callable[P, R], *, name: Stage) -> None:
        functools.update_wrapper(self, fn)
        self.fn = fn
        self.name = name
        self._is_coroutine = inspect.iscoroutinefunction(fn)

    def __call__(self, *args: P.args, **kwargs: P.kwargs) -> R:
        if self._is_coroutine:
            return t.cast(R, self._acall(*args, **kwargs))
        started = time.perf_counter()
        try:
            return self.fn(*args, **kwargs)
        finally:
            self._record(started)

    async def _acall(self, *args: P.args, **kwargs: P.kwargs):
        started = time.perf_counter()
        try:
            return await t.cast(t.Awaitable, self.fn(*args, **kwargs))
        finally:
            self._record(started)

    def _record(self, started: float) -> None:
        ctx = RunContext.current()
        if ctx is not None:
            ctx.record_timing(self.name, (time.perf_counter() - started) * 1000.0)

    def __get__(self, obj, objtype=None):
        if obj is None:
            return self
        return functools.partial(self.__call__, obj)


@t.overload
def stage(fn: t.Callable[P, R], *, name: Stage | None = None) -> Timed[P, R]:
    ...


@t.overload
def stage(*, name: Stage | None = None) -> t.Callable[[t.Callable[P, R]], Timed[P, R]]:
    ...


def stage(
    fn: t.Callable[P, R] | None = None,
    name: Stage | None = None,
) -> Timed[P, R] | t.Callable[[t.Callable[P, R]], Timed[P, R]]:
    if fn:
        return Timed(fn, name=name or Stage(fn.__name__.strip("_").replace("_", "-")))
    else:
        return t.cast(
            t.Callable[[t.Callable[P, R]], Timed[P, R]],
            functools.partial(stage, name=name),
        )
