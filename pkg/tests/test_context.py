import pytest

from topokeep.context import RunContext, get_this_run, run_scope
from topokeep.restore import CorrectionOutcome
from topokeep.states import RevertReason, RunState, Stage


async def test_run_ctx_available_inside_a_run():
    RESULT = None

    def sync():
        nonlocal RESULT
        RESULT = get_this_run()

    with RunContext(operation="compress") as ctx:
        sync()

    assert RESULT is not None
    assert RESULT is ctx


async def test_run_ctx_unavailable_outside_of_runs():
    with pytest.raises(RuntimeError):
        get_this_run()
    assert RunContext.current() is None


async def test_run_scope_joins_the_active_run():
    with RunContext(operation="outer") as outer:
        with run_scope("inner") as inner:
            pass

    assert inner is outer
    assert outer.state == RunState.COMPLETED


async def test_run_scope_opens_a_fresh_run():
    STATE = None

    with run_scope("decompress") as ctx:
        STATE = ctx.state

    assert STATE == RunState.RUNNING
    assert ctx.state == RunState.COMPLETED
    assert ctx.operation == "decompress"
    assert ctx.stopped_at is not None


async def test_failed_run_is_in_correct_state():
    with pytest.raises(ValueError):
        with RunContext(operation="compress") as ctx:
            raise ValueError

    assert ctx.state == RunState.FAILED
    assert RunContext.current() is None


async def test_timings_accumulate_per_stage():
    ctx = RunContext(operation="compress")
    ctx.record_timing(Stage.ENCODE, 1.5)
    ctx.record_timing(Stage.ENCODE, 2.0)

    assert ctx.timings[Stage.ENCODE] == pytest.approx(3.5)
    assert ctx.summary()["timings_ms"] == {"encode": 3.5}


async def test_outcomes_are_counted_per_stage():
    OUTCOMES = [
        CorrectionOutcome((0, 0), Stage.RBF_SADDLE, True),
        CorrectionOutcome((1, 0), Stage.RBF_SADDLE, False, RevertReason.NEIGHBORS_COLLAPSED),
        CorrectionOutcome((2, 0), Stage.RBF_SADDLE, False, RevertReason.NO_SIGN_CHANGE),
    ]
    ctx = RunContext(operation="decompress")
    ctx.record_outcomes(Stage.RBF_SADDLE, OUTCOMES)

    assert ctx.summary()["correction_stats"] == {"rbf-saddle": {"applied": 1, "suppressed": 2}}
