import numpy as np
import pytest

from topokeep.codec import EncodedSections, decode_rank_metadata, encode_rank_metadata
from topokeep.config import CompressorConfig
from topokeep.context import RunContext
from topokeep.errors import DimensionError
from topokeep.grid import ScalarField2D, generate_synthetic
from topokeep.pipeline import acompress, adecompress, adecompress_detailed, aevaluate, verify
from topokeep.quantizer import quantize_array, reconstruct
from topokeep.restore import movement_budget
from topokeep.topo_meta import build_rank_metadata, unpack_map
from topokeep.topology import CriticalPointClass, detect_critical_points

PEAK_PATCH = [[0.0, 0.01, 0.0], [0.01, 0.012, 0.01], [0.0, 0.01, 0.0]]


def _field(rows) -> ScalarField2D:
    return ScalarField2D.from_array(np.array(rows, dtype=np.float32))


def _config(eps=0.05, **kwargs) -> CompressorConfig:
    kwargs.setdefault("threads", 1)
    return CompressorConfig(eps, **kwargs)


async def test_constant_field():
    field = _field(np.ones((4, 4)))

    stream = await acompress(field, _config(0.01))
    result = await adecompress_detailed(stream)

    assert unpack_map(stream.critical_points, 4, 4).counts()[CriticalPointClass.REGULAR] == 16
    assert result.outcomes == []
    assert np.all(np.abs(result.field.as_float64() - 1.0) <= 0.01)


async def test_peak_patch_side_channel():
    field = _field(PEAK_PATCH)

    stream = await acompress(field, _config(float(np.float32(0.01))))

    counts = unpack_map(stream.critical_points, 3, 3).counts()
    assert counts[CriticalPointClass.MAXIMUM] == 1
    assert counts[CriticalPointClass.MINIMUM] == 4
    sections = EncodedSections.from_bytes(stream.ranks, 5, stream.block_size)
    # the four corner minima tie in one bin and rank in raster order
    assert decode_rank_metadata(sections, 5, stream.block_size).tolist() == [1, 2, 1, 3, 4]


async def test_peak_patch_is_restored():
    field = _field(PEAK_PATCH)
    eps = float(np.float32(0.01))

    stream = await acompress(field, _config(eps))
    result = await adecompress_detailed(stream)

    assert np.all(result.base.values == np.float32(0.01))
    assert detect_critical_points(result.field) == detect_critical_points(field)
    corners = result.field.values[[0, 0, 2, 2], [0, 2, 0, 2]]
    assert np.all(np.diff(corners) > 0)
    assert verify(field, result.field, eps).fn == 0


async def test_index_sections_do_not_depend_on_topology():
    field = generate_synthetic("gaussian-mixture", 40, 30, seed=5).field

    plain = await acompress(field, _config(topology=False))
    aware = await acompress(field, _config(topology=True))

    assert plain.indices == aware.indices
    assert aware.nbytes - plain.nbytes == aware.side_channel_bytes


async def test_plain_mode_is_pure_dequantization():
    field = generate_synthetic("random-uniform", 33, 17, seed=2).field
    eps = 0.05
    expected = reconstruct(quantize_array(field.values, eps), eps)

    plain = await adecompress(await acompress(field, _config(eps, topology=False)))
    aware = await adecompress_detailed(await acompress(field, _config(eps, topology=True)))

    assert np.array_equal(plain.values.view(np.uint32), expected.view(np.uint32))
    assert np.array_equal(aware.base.values.view(np.uint32), expected.view(np.uint32))


async def test_side_channel_size():
    field = generate_synthetic("gaussian-mixture", 37, 21, seed=8).field
    config = _config(0.02)

    stream = await acompress(field, config)

    cp_map = detect_critical_points(field)
    ranks = build_rank_metadata(field, cp_map, 0.02)
    expected_ranks = encode_rank_metadata(ranks.ranks, config.block_size).nbytes
    assert len(stream.critical_points) == -(-37 * 21 // 4)
    assert len(stream.ranks) == expected_ranks


async def test_range_relative_bound():
    field = _field([[0.0, 2.0], [4.0, 1.0]])

    stream = await acompress(field, _config(0.01, eps_mode="range-relative"))

    assert stream.eps == pytest.approx(0.04)


async def test_results_do_not_depend_on_thread_count():
    field = generate_synthetic("gaussian-mixture", 300, 200, seed=11).field

    one = await acompress(field, _config(0.01, threads=1))
    four = await acompress(field, _config(0.01, threads=4))
    assert one.to_bytes() == four.to_bytes()

    serial = await adecompress_detailed(one, threads=1)
    parallel = await adecompress_detailed(one, threads=4)
    assert parallel.field.identical(serial.field)
    assert parallel.outcomes == serial.outcomes


@pytest.mark.parametrize("kind", ["gaussian-mixture", "sinusoid", "random-uniform"])
async def test_error_bounds(kind):
    field = generate_synthetic(kind, 48, 40, seed=4).field
    eps = 0.03

    plain = await adecompress(await acompress(field, _config(eps, topology=False)))
    aware = await adecompress_detailed(await acompress(field, _config(eps)))

    assert verify(field, plain, eps).bounds_satisfied.within_eps
    errors = np.abs(aware.field.as_float64() - aware.base.as_float64())
    assert errors.max() <= movement_budget(eps) + 1e-6
    report = verify(field, aware.field, eps)
    assert report.bounds_satisfied.within_2eps
    assert report.fp == 0
    assert report.ft == 0


async def test_decompression_records_stage_timings():
    field = generate_synthetic("gaussian-mixture", 32, 32, seed=1).field
    stream = await acompress(field, _config(0.05))

    with RunContext(operation="decompress") as ctx:
        result = await adecompress_detailed(stream)

    summary = ctx.summary()
    for name in ("decode", "dequantize", "metadata", "extrema-stencil", "rbf-saddle"):
        assert name in summary["timings_ms"]
    applied = sum(s["applied"] for s in summary["correction_stats"].values())
    assert applied == sum(o.applied for o in result.outcomes)


async def test_verify_within_eps():
    original = _field([[0.0, 1.0], [2.0, 3.0]])
    reconstructed = _field([[0.05, 1.05], [2.05, 3.05]])

    report = verify(original, reconstructed, 0.1)

    assert report.max_abs_error == pytest.approx(0.05, rel=1e-5)
    assert report.bounds_satisfied.within_eps
    assert report.fp == report.ft == 0
    assert report.passed(strict=True)
    assert report.psnr is not None


async def test_verify_within_twice_eps_only():
    original = _field([[0.0, 1.0], [2.0, 3.0]])
    reconstructed = _field([[0.15, 1.15], [2.15, 3.15]])

    report = verify(original, reconstructed, 0.1)

    assert not report.bounds_satisfied.within_eps
    assert report.bounds_satisfied.within_2eps
    assert report.passed()
    assert not report.passed(strict=True)


async def test_verify_identical_fields():
    field = _field(PEAK_PATCH)

    report = verify(field, field, 0.01)

    assert report.max_abs_error == 0.0
    assert report.psnr is None
    assert report.false_cases.total == 0


async def test_verify_counts_false_cases():
    flattened = _field(np.full((3, 3), 0.01))
    bumped = _field([[0.0, 0.0, 0.0], [0.0, 0.004, 0.0], [0.0, 0.0, 0.0]])

    lost = verify(_field(PEAK_PATCH), flattened, 0.01)
    invented = verify(_field(np.zeros((3, 3))), bumped, 0.01)

    assert lost.fn == 5
    assert lost.false_cases.fn_by_class == {"minimum": 4, "saddle": 0, "maximum": 1}
    assert lost.passed()
    assert invented.fp == 1
    assert not invented.passed()


async def test_verify_lipschitz_bound():
    original = _field([[0.0, 1.0]])
    reconstructed = _field([[0.2, 1.0]])

    report = verify(original, reconstructed, 0.1, lipschitz_hint=0.1)

    assert report.bounds_satisfied.within_lipschitz_bound is True
    assert verify(original, reconstructed, 0.1).bounds_satisfied.within_lipschitz_bound is None


async def test_verify_dimension_mismatch():
    with pytest.raises(DimensionError):
        verify(_field(np.zeros((2, 3))), _field(np.zeros((3, 2))), 0.1)


async def test_verify_flat_row():
    report = verify(_field(PEAK_PATCH), _field(PEAK_PATCH), 0.01)

    row = report.to_row()
    assert row["fn"] == 0
    assert row["within_eps"] is True
    assert not any(isinstance(v, dict) for v in row.values())


async def test_evaluate_compares_both_modes():
    field = generate_synthetic("gaussian-mixture", 64, 64, seed=7, params=(12,)).field

    report = await aevaluate(field, _config(1e-2, eps_mode="range-relative"))

    assert report.topology.fn <= report.baseline.fn
    assert report.topology.fp == report.topology.ft == 0
    assert report.side_channel_bytes > 0
    assert [row["mode"] for row in report.rows()] == ["baseline", "topology"]
    assert report.baseline.correction_stats == {}
    assert report.to_dict()["fn_eliminated"] == (report.topology.fn == 0)
    if report.topology.fn == 0:
        assert report.fn_reduction_factor is None


async def test_maxima_in_neighboring_bins_survive_binary32_rounding():
    # bin centers 2**24 + 3 and 2**24 + 5 both round to 2**24 + 4
    values = np.full((3, 5), 2.0**24, dtype=np.float32)
    values[1, 1], values[1, 3] = 2.0**24 + 2, 2.0**24 + 4
    field = ScalarField2D.from_array(values)

    stream = await acompress(field, _config(1.0))
    result = await adecompress_detailed(stream)

    assert result.base.values[1, 1] == result.base.values[1, 3]
    assert detect_critical_points(result.field) == detect_critical_points(field)
    assert np.abs(result.field.as_float64() - field.as_float64()).max() <= 2.0
