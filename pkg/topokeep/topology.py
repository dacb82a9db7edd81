import enum
import typing as t
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .grid import ScalarField2D
from .pool import WorkerPool, split_range
from .stages import stage
from .states import Stage


class CriticalPointClass(enum.IntEnum):
    REGULAR = 0
    MINIMUM = 1
    SADDLE = 2
    MAXIMUM = 3

    @property
    def label(self) -> str:
        return self.name.lower()


CRITICAL_CLASSES = (
    CriticalPointClass.MINIMUM,
    CriticalPointClass.SADDLE,
    CriticalPointClass.MAXIMUM,
)


@dataclass(frozen=True, eq=False)
class CriticalPointMap:
    nx: int
    ny: int
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.uint8, copy=True)
        if labels.size != self.nx * self.ny:
            raise DimensionError(
                f"label count {labels.size} does not match {self.nx}x{self.ny}"
            )
        labels = labels.reshape(self.ny, self.nx)
        if labels.size and labels.max() > 3:
            raise DimensionError("labels must be 2-bit class codes")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __getitem__(self, position: tuple[int, int]) -> CriticalPointClass:
        x, y = position
        return CriticalPointClass(int(self.labels[y, x]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CriticalPointMap):
            return NotImplemented
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and np.array_equal(self.labels, other.labels)
        )

    def counts(self) -> dict[CriticalPointClass, int]:
        tally = np.bincount(self.labels.ravel(), minlength=4)
        return {cls: int(tally[cls]) for cls in CriticalPointClass}

    def extrema_mask(self) -> np.ndarray:
        return (self.labels == CriticalPointClass.MINIMUM) | (
            self.labels == CriticalPointClass.MAXIMUM
        )


def _classify_at(values: np.ndarray, x: int, y: int) -> CriticalPointClass:
    ny, nx = values.shape
    v = values.item(y, x)
    top = values.item(y - 1, x) if y > 0 else None
    down = values.item(y + 1, x) if y < ny - 1 else None
    left = values.item(y, x - 1) if x > 0 else None
    right = values.item(y, x + 1) if x < nx - 1 else None

    available = [n for n in (top, down, left, right) if n is not None]
    if not available:
        return CriticalPointClass.REGULAR
    if all(v < n for n in available):
        return CriticalPointClass.MINIMUM
    if all(v > n for n in available):
        return CriticalPointClass.MAXIMUM
    if len(available) == 4:
        if (top > v and down > v and left < v and right < v) or (
            top < v and down < v and left > v and right > v
        ):
            return CriticalPointClass.SADDLE
    return CriticalPointClass.REGULAR


def classify_point(field: ScalarField2D, x: int, y: int) -> CriticalPointClass:
    if not (0 <= x < field.nx and 0 <= y < field.ny):
        raise IndexError(f"({x}, {y}) is outside a {field.nx}x{field.ny} field")
    return _classify_at(field.values, x, y)


def classify_rows(values: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Label rows ``[start, stop)`` of ``values``; reads one halo row each side."""
    ny, nx = values.shape
    lo, hi = max(start - 1, 0), min(stop + 1, ny)
    rows = stop - start
    offset = start - lo

    padded = np.full((hi - lo + 2, nx + 2), np.nan, dtype=values.dtype)
    padded[1:-1, 1:-1] = values[lo:hi]
    center = padded[1 + offset : 1 + offset + rows, 1:-1]
    top = padded[offset : offset + rows, 1:-1]
    down = padded[2 + offset : 2 + offset + rows, 1:-1]
    left = padded[1 + offset : 1 + offset + rows, :-2]
    right = padded[1 + offset : 1 + offset + rows, 2:]

    below_all = np.ones(center.shape, dtype=bool)
    above_all = np.ones(center.shape, dtype=bool)
    has_neighbor = np.zeros(center.shape, dtype=bool)
    for n in (top, down, left, right):
        available = ~np.isnan(n)
        has_neighbor |= available
        below_all &= ~available | (center < n)
        above_all &= ~available | (center > n)

    # NaN compares False, so boundary points drop out of the saddle test
    saddle = ((center < top) & (center < down) & (center > left) & (center > right)) | (
        (center > top) & (center > down) & (center < left) & (center < right)
    )

    labels = np.zeros(center.shape, dtype=np.uint8)
    labels[saddle] = CriticalPointClass.SADDLE
    labels[below_all & has_neighbor] = CriticalPointClass.MINIMUM
    labels[above_all & has_neighbor] = CriticalPointClass.MAXIMUM
    return labels


def classify_array(values: np.ndarray) -> np.ndarray:
    return classify_rows(values, 0, values.shape[0])


def detect_critical_points(field: ScalarField2D) -> CriticalPointMap:
    return CriticalPointMap(nx=field.nx, ny=field.ny, labels=classify_array(field.values))


# rows per band; keeps the padded copies small on large grids
_BAND_ROWS = 256


@stage(name=Stage.CRITICAL_POINTS)
async def adetect_critical_points(
    field: ScalarField2D, pool: WorkerPool | None = None
) -> CriticalPointMap:
    pool = pool or WorkerPool(1)
    bands = split_range(field.ny, max(pool.threads, -(-field.ny // _BAND_ROWS)))
    labels = await pool.map(lambda band: classify_rows(field.values, *band), bands)
    return CriticalPointMap(nx=field.nx, ny=field.ny, labels=np.concatenate(labels, axis=0))


@dataclass(frozen=True)
class FalseCaseReport:
    fn_count: int
    fp_count: int
    ft_count: int
    fn_by_class: dict[str, int]

    @property
    def total(self) -> int:
        return self.fn_count + self.fp_count + self.ft_count

    @property
    def extrema_fn(self) -> int:
        return self.fn_by_class["minimum"] + self.fn_by_class["maximum"]

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "fn": self.fn_count,
            "fp": self.fp_count,
            "ft": self.ft_count,
            "total": self.total,
            "fn_by_class": dict(self.fn_by_class),
        }


def false_case_masks(
    original: np.ndarray, reconstructed: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean (FN, FP, FT) masks for two label arrays of equal shape."""
    original_critical = original != CriticalPointClass.REGULAR
    reconstructed_critical = reconstructed != CriticalPointClass.REGULAR
    fn = original_critical & ~reconstructed_critical
    fp = ~original_critical & reconstructed_critical
    ft = original_critical & reconstructed_critical & (original != reconstructed)
    return fn, fp, ft


def count_false_cases(
    original_map: CriticalPointMap, reconstructed_map: CriticalPointMap
) -> FalseCaseReport:
    if (original_map.nx, original_map.ny) != (reconstructed_map.nx, reconstructed_map.ny):
        raise DimensionError(
            f"cannot compare a {original_map.nx}x{original_map.ny} map "
            f"with a {reconstructed_map.nx}x{reconstructed_map.ny} map"
        )
    fn, fp, ft = false_case_masks(original_map.labels, reconstructed_map.labels)
    lost = np.bincount(original_map.labels[fn], minlength=4)
    return FalseCaseReport(
        fn_count=int(fn.sum()),
        fp_count=int(fp.sum()),
        ft_count=int(ft.sum()),
        fn_by_class={cls.label: int(lost[cls]) for cls in CRITICAL_CLASSES},
    )
