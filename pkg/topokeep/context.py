import contextlib
import datetime
import typing as t
import uuid
from contextvars import ContextVar
from dataclasses import dataclass, field

from .states import RunState, Stage

if t.TYPE_CHECKING:
    from .restore import CorrectionOutcome


__var__: ContextVar["RunContext"] = ContextVar("RunContext")


def _get_tz_now() -> datetime.datetime:
    return datetime.datetime.now(datetime.timezone.utc)


def get_this_run() -> "RunContext":
    try:
        return RunContext.get()
    except LookupError:
        raise RuntimeError("Run context is only available from within a run")


@dataclass
class RunContext:
    operation: str
    id: uuid.UUID = field(default_factory=uuid.uuid4)
    started_at: datetime.datetime = field(default_factory=_get_tz_now)
    stopped_at: datetime.datetime | None = None
    state: RunState = RunState.PENDING
    timings: dict[Stage, float] = field(default_factory=dict)
    correction_stats: dict[Stage, dict[str, int]] = field(default_factory=dict)

    @classmethod
    def get(cls) -> "RunContext":
        return __var__.get()

    @classmethod
    def current(cls) -> "RunContext | None":
        return __var__.get(None)

    def __enter__(self):
        self._token = __var__.set(self)
        self.state = RunState.RUNNING
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.set_completed()
        else:
            self.set_failed()
        __var__.reset(self._token)

    def set_completed(self):
        self.state = RunState.COMPLETED
        self.stopped_at = _get_tz_now()

    def set_failed(self):
        self.state = RunState.FAILED
        self.stopped_at = _get_tz_now()

    def record_timing(self, stage: Stage, millis: float) -> None:
        # stages can run more than once per operation (e.g. rank encoding)
        self.timings[stage] = self.timings.get(stage, 0.0) + millis

    def record_outcomes(self, stage: Stage, outcomes: "list[CorrectionOutcome]") -> None:
        stats = self.correction_stats.setdefault(stage, {"applied": 0, "suppressed": 0})
        for outcome in outcomes:
            stats["applied" if outcome.applied else "suppressed"] += 1

    def summary(self) -> dict[str, t.Any]:
        return {
            "operation": self.operation,
            "id": str(self.id),
            "state": self.state.value,
            "timings_ms": {str(k): round(v, 3) for k, v in sorted(self.timings.items())},
            "correction_stats": {
                str(k): dict(v) for k, v in sorted(self.correction_stats.items())
            },
        }


@contextlib.contextmanager
def run_scope(operation: str) -> t.Iterator[RunContext]:
    """Join the active run, or open a fresh one for the duration of the block."""
    active = RunContext.current()
    if active is not None:
        yield active
        return
    with RunContext(operation=operation) as ctx:
        yield ctx
