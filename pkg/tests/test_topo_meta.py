import numpy as np
import pytest

from topokeep.errors import CorruptMetadataError, DimensionError
from topokeep.grid import ScalarField2D, generate_synthetic
from topokeep.quantizer import quantize_array, reconstruct
from topokeep.topo_meta import (
    RankMetadata,
    build_rank_metadata,
    extrema_positions,
    pack_map,
    resolve_ranks,
    unpack_map,
)
from topokeep.topology import CriticalPointMap, detect_critical_points

EPS = float(np.float32(0.01))

# maxima 0.012 at (1, 1) and 0.013 at (5, 1), both in bin 1
TWO_PEAKS = [
    [-0.015, -0.015, -0.015, -0.015, -0.015, -0.015, -0.015],
    [-0.015, 0.012, 0.01, -0.015, 0.01, 0.013, -0.015],
    [-0.015, 0.01, -0.015, -0.015, -0.015, 0.01, -0.015],
]


def _field(rows) -> ScalarField2D:
    return ScalarField2D.from_array(np.array(rows, dtype=np.float32))


def _base(field: ScalarField2D, eps: float) -> ScalarField2D:
    return ScalarField2D(field.nx, field.ny, reconstruct(quantize_array(field.values, eps), eps))


def _maxima_ranks(field, cp_map, metadata):
    positions = extrema_positions(cp_map)
    labels = cp_map.labels.ravel()[positions]
    return {
        int(p): int(r) for p, r, c in zip(positions, metadata.ranks, labels) if c == 3
    }


async def test_same_bin_maxima_are_ranked_by_value():
    field = _field(TWO_PEAKS)
    cp_map = detect_critical_points(field)

    metadata = build_rank_metadata(field, cp_map, EPS)

    assert _maxima_ranks(field, cp_map, metadata) == {1 * 7 + 1: 1, 1 * 7 + 5: 2}


async def test_swapping_values_swaps_ranks():
    rows = [row[:] for row in TWO_PEAKS]
    rows[1][1], rows[1][5] = 0.013, 0.012
    field = _field(rows)
    cp_map = detect_critical_points(field)

    metadata = build_rank_metadata(field, cp_map, EPS)

    assert _maxima_ranks(field, cp_map, metadata) == {8: 2, 12: 1}


async def test_single_maximum_gets_rank_one():
    field = _field([[0.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.0, 0.5, 0.5]])
    cp_map = CriticalPointMap(3, 3, [0, 0, 0, 0, 3, 0, 0, 0, 0])

    assert build_rank_metadata(field, cp_map, EPS).to_list() == [1]


async def test_groups_split_by_class():
    # three minima in one bin and a lone maximum
    field = _field([[0.003, 0.5, 0.001, 0.5, 0.002], [0.5, 0.5, 0.5, 0.5, 0.9]])
    cp_map = detect_critical_points(field)

    metadata = build_rank_metadata(field, cp_map, EPS)

    assert metadata.to_list() == [3, 1, 2, 1]


async def test_ties_break_by_raster_order():
    field = _field([[0.001, 0.5, 0.001], [0.5, 0.5, 0.5]])
    cp_map = detect_critical_points(field)

    assert build_rank_metadata(field, cp_map, EPS).to_list() == [1, 2]


async def test_every_group_is_a_permutation():
    field = generate_synthetic("random-uniform", 40, 30, seed=5).field
    cp_map = detect_critical_points(field)
    metadata = build_rank_metadata(field, cp_map, 0.05)

    lookup = resolve_ranks(cp_map, _base(field, 0.05), metadata, 0.05)

    assert len(metadata) == int(cp_map.extrema_mask().sum())
    for members in lookup.groups():
        assert sorted(lookup.ranks[members].tolist()) == list(range(1, members.size + 1))


async def test_monotone_transform_keeps_ranks():
    field = generate_synthetic("gaussian-mixture", 24, 24, seed=2).field
    # doubling the values and the bound keeps every bin and every ordering
    doubled = ScalarField2D.from_array(field.as_float64() * 2.0)
    cp_map = detect_critical_points(field)

    assert build_rank_metadata(field, cp_map, 1e-2) == build_rank_metadata(doubled, cp_map, 2e-2)


async def test_rank_dimension_mismatch():
    with pytest.raises(DimensionError):
        build_rank_metadata(_field([[0.0, 1.0]]), CriticalPointMap(1, 2, [0, 0]), EPS)


async def test_pack_map_layout():
    assert pack_map(CriticalPointMap(4, 1, [3, 0, 0, 0])) == bytes([0b11000000])
    assert pack_map(CriticalPointMap(4, 1, [0, 0, 0, 0])) == b"\x00"
    assert pack_map(CriticalPointMap(5, 1, [1, 2, 3, 0, 2])) == bytes([0b01101100, 0b10000000])


async def test_pack_unpack_identity():
    labels = np.random.default_rng(0).choice([0, 1, 3], 7)
    cp_map = CriticalPointMap(7, 1, labels)

    assert unpack_map(pack_map(cp_map), 7, 1) == cp_map


async def test_unpack_accepts_interior_saddles():
    cp_map = CriticalPointMap(3, 3, [0, 0, 0, 0, 2, 0, 0, 0, 0])

    assert unpack_map(pack_map(cp_map), 3, 3) == cp_map


async def test_unpack_rejects_border_saddles():
    with pytest.raises(CorruptMetadataError, match="border"):
        unpack_map(pack_map(CriticalPointMap(3, 3, [0, 2, 0, 0, 0, 0, 0, 0, 0])), 3, 3)


async def test_unpack_rejects_wrong_byte_count():
    with pytest.raises(CorruptMetadataError):
        unpack_map(b"\x00", 3, 3)


async def test_unpack_rejects_non_zero_padding():
    with pytest.raises(CorruptMetadataError):
        unpack_map(bytes([0b00000011]), 3, 1)


async def test_resolve_two_peaks_in_one_bin():
    field = _field(TWO_PEAKS)
    cp_map = detect_critical_points(field)
    metadata = build_rank_metadata(field, cp_map, EPS)

    lookup = resolve_ranks(cp_map, _base(field, EPS), metadata, EPS)

    assert lookup.rank_of(8) == 1
    assert lookup.rank_of(12) == 2
    assert lookup.as_dict() == dict(zip(extrema_positions(cp_map).tolist(), metadata.to_list()))


async def test_resolve_without_extrema():
    field = _field([[0.0, 0.0], [0.0, 0.0]])
    cp_map = detect_critical_points(field)

    lookup = resolve_ranks(cp_map, field, RankMetadata([]), EPS)

    assert len(lookup) == 0
    assert lookup.as_dict() == {}


@pytest.mark.parametrize("seed", range(4))
async def test_resolved_groups_match_the_original(seed):
    field = generate_synthetic("gaussian-mixture", 48, 48, seed=seed, params=(12,)).field
    eps = 1e-2
    cp_map = detect_critical_points(field)
    metadata = build_rank_metadata(field, cp_map, eps)

    lookup = resolve_ranks(cp_map, _base(field, eps), metadata, eps)

    positions = extrema_positions(cp_map)
    assert np.array_equal(lookup.positions, positions)
    assert np.array_equal(lookup.bins, quantize_array(field.values.ravel()[positions], eps))
    assert np.array_equal(lookup.ranks, metadata.ranks)


async def test_resolve_rejects_count_mismatch():
    field = _field(TWO_PEAKS)
    cp_map = detect_critical_points(field)

    with pytest.raises(CorruptMetadataError):
        resolve_ranks(cp_map, field, RankMetadata([1]), EPS)


async def test_resolve_rejects_non_permutation():
    field = _field(TWO_PEAKS)
    cp_map = detect_critical_points(field)
    metadata = build_rank_metadata(field, cp_map, EPS)
    broken = RankMetadata([2 if r == 1 else r for r in metadata.to_list()])

    with pytest.raises(CorruptMetadataError):
        resolve_ranks(cp_map, _base(field, EPS), broken, EPS)


# at 2**24 the binary32 bin centers round away from their bins
def _wide_peaks() -> ScalarField2D:
    values = np.full((3, 5), 2.0**24, dtype=np.float32)
    values[1, 1], values[1, 3] = 2.0**24 + 2, 2.0**24 + 4
    return ScalarField2D.from_array(values)


async def test_resolve_groups_by_decoded_bins():
    field = _wide_peaks()
    cp_map = detect_critical_points(field)
    metadata = build_rank_metadata(field, cp_map, 1.0)
    bins = quantize_array(field.values, 1.0)

    lookup = resolve_ranks(cp_map, _base(field, 1.0), metadata, 1.0, bins=bins)

    assert lookup.as_dict() == {6: 1, 8: 1}
    assert lookup.bins.tolist() == [2**23 + 2, 2**23 + 3]
    assert lookup.group_sizes.tolist() == [1, 1]


async def test_resolve_rejects_bins_of_the_wrong_size():
    field = _wide_peaks()
    cp_map = detect_critical_points(field)
    metadata = build_rank_metadata(field, cp_map, 1.0)

    with pytest.raises(DimensionError):
        resolve_ranks(cp_map, field, metadata, 1.0, bins=np.zeros(14, dtype=np.int64))
