import numpy as np
import pytest

from topokeep.errors import DimensionError
from topokeep.grid import ScalarField2D, generate_synthetic
from topokeep.pool import WorkerPool
from topokeep.topology import (
    CriticalPointClass,
    CriticalPointMap,
    adetect_critical_points,
    classify_array,
    classify_point,
    count_false_cases,
    detect_critical_points,
)

PEAK_PATCH = [[0.0, 0.01, 0.0], [0.01, 0.012, 0.01], [0.0, 0.01, 0.0]]


def _field(rows) -> ScalarField2D:
    return ScalarField2D.from_array(np.array(rows, dtype=np.float32))


def _brute_force(values: np.ndarray) -> np.ndarray:
    ny, nx = values.shape
    labels = np.zeros((ny, nx), dtype=np.uint8)
    for y in range(ny):
        for x in range(nx):
            v = values[y, x]
            nbrs = {}
            if y > 0:
                nbrs["t"] = values[y - 1, x]
            if y < ny - 1:
                nbrs["d"] = values[y + 1, x]
            if x > 0:
                nbrs["l"] = values[y, x - 1]
            if x < nx - 1:
                nbrs["r"] = values[y, x + 1]
            if nbrs and all(v < n for n in nbrs.values()):
                labels[y, x] = 1
            elif nbrs and all(v > n for n in nbrs.values()):
                labels[y, x] = 3
            elif len(nbrs) == 4 and (
                (nbrs["t"] > v < nbrs["d"] and nbrs["l"] < v > nbrs["r"])
                or (nbrs["t"] < v > nbrs["d"] and nbrs["l"] > v < nbrs["r"])
            ):
                labels[y, x] = 2
    return labels


async def test_maximum_in_patch():
    assert classify_point(_field(PEAK_PATCH), 1, 1) == CriticalPointClass.MAXIMUM


async def test_saddle():
    field = _field([[0, 5, 0], [1, 3, 1], [0, 5, 0]])

    assert classify_point(field, 1, 1) == CriticalPointClass.SADDLE


async def test_ties_are_regular():
    field = _field([[0, 0.012, 0], [0.01, 0.012, 0.01], [0, 0.01, 0]])

    assert classify_point(field, 1, 1) == CriticalPointClass.REGULAR


async def test_corner_minimum_uses_two_neighbors():
    field = _field([[0, 1, 2], [1, 2, 3]])

    assert classify_point(field, 0, 0) == CriticalPointClass.MINIMUM
    assert classify_point(field, 2, 1) == CriticalPointClass.MAXIMUM


async def test_boundary_points_are_never_saddles():
    field = _field([[5, 3, 5], [0, 0, 0]])

    assert classify_point(field, 1, 0) != CriticalPointClass.SADDLE


async def test_single_point_field_is_regular():
    assert classify_point(_field([[1.0]]), 0, 0) == CriticalPointClass.REGULAR


async def test_out_of_range_point():
    with pytest.raises(IndexError):
        classify_point(_field(PEAK_PATCH), 3, 0)


@pytest.mark.parametrize("seed", range(5))
async def test_vectorized_labels_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    # few distinct values so ties show up often
    values = rng.integers(0, 4, size=(9, 11)).astype(np.float32)

    assert np.array_equal(classify_array(values), _brute_force(values))


async def test_banded_detection_matches_serial():
    field = generate_synthetic("random-uniform", 37, 600, seed=4).field

    banded = await adetect_critical_points(field, WorkerPool(4))

    assert banded == detect_critical_points(field)


async def test_map_counts():
    counts = detect_critical_points(_field(PEAK_PATCH)).counts()

    assert counts[CriticalPointClass.MAXIMUM] == 1
    assert counts[CriticalPointClass.MINIMUM] == 4
    assert sum(counts.values()) == 9


async def test_false_case_counts():
    original = CriticalPointMap(2, 2, [3, 0, 2, 1])
    reconstructed = CriticalPointMap(2, 2, [0, 1, 1, 1])

    report = count_false_cases(original, reconstructed)

    assert (report.fn_count, report.fp_count, report.ft_count) == (1, 1, 1)
    assert report.fn_by_class == {"minimum": 0, "saddle": 0, "maximum": 1}
    assert report.total == 3


async def test_false_case_identity():
    cp_map = detect_critical_points(generate_synthetic("gaussian-mixture", 20, 20).field)

    assert count_false_cases(cp_map, cp_map).total == 0


async def test_false_case_dimension_mismatch():
    with pytest.raises(DimensionError):
        count_false_cases(CriticalPointMap(2, 2, [0] * 4), CriticalPointMap(4, 1, [0] * 4))


@pytest.mark.parametrize("seed", range(5))
async def test_swapping_maps_swaps_fn_and_fp(seed):
    rng = np.random.default_rng(seed)
    a = CriticalPointMap(12, 9, rng.integers(0, 4, size=108))
    b = CriticalPointMap(12, 9, rng.integers(0, 4, size=108))

    forward, backward = count_false_cases(a, b), count_false_cases(b, a)

    assert (forward.fn_count, forward.fp_count) == (backward.fp_count, backward.fn_count)
    assert forward.ft_count == backward.ft_count


@pytest.mark.parametrize("seed", range(5))
async def test_classification_only_reads_the_neighborhood(seed):
    rng = np.random.default_rng(seed)
    values = rng.integers(0, 4, size=(7, 7)).astype(np.float32)
    x, y = (int(v) for v in rng.integers(0, 7, size=2))
    before = classify_point(ScalarField2D.from_array(values), x, y)

    for qy in range(7):
        for qx in range(7):
            if abs(qx - x) + abs(qy - y) <= 1:
                continue
            changed = values.copy()
            changed[qy, qx] = rng.uniform(-10.0, 10.0)
            assert classify_point(ScalarField2D.from_array(changed), x, y) == before


@pytest.mark.parametrize("levels", [2, 3, 50, None])
async def test_adjacent_points_never_share_an_extremum_class(levels):
    rng = np.random.default_rng(levels or 0)
    if levels is None:
        values = rng.standard_normal((40, 40)).astype(np.float32)
    else:
        values = rng.integers(0, levels, size=(40, 40)).astype(np.float32)

    labels = classify_array(values)

    for cls in (CriticalPointClass.MINIMUM, CriticalPointClass.MAXIMUM):
        hit = labels == cls
        assert not np.any(hit[:, 1:] & hit[:, :-1])
        assert not np.any(hit[1:, :] & hit[:-1, :])
