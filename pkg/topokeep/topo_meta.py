import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptMetadataError, DimensionError
from .grid import ScalarField2D
from .quantizer import quantize_array
from .stages import stage
from .states import Stage
from .topology import CriticalPointClass, CriticalPointMap

logger = logging.getLogger(__name__)

_SHIFTS = np.array([6, 4, 2, 0], dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class RankMetadata:
    ranks: np.ndarray = field(repr=False)

    def __post_init__(self):
        ranks = np.array(self.ranks, dtype=np.int64, copy=True).ravel()
        ranks.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)

    def __len__(self) -> int:
        return self.ranks.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RankMetadata):
            return NotImplemented
        return np.array_equal(self.ranks, other.ranks)

    def to_list(self) -> list[int]:
        return self.ranks.tolist()


def extrema_positions(cp_map: CriticalPointMap) -> np.ndarray:
    """Flat raster indices of every minimum and maximum."""
    return np.flatnonzero(cp_map.extrema_mask().ravel())


def _group_ranks(classes: np.ndarray, bins: np.ndarray, values: np.ndarray) -> np.ndarray:
    count = classes.size
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    # lexsort keys run last-to-first: class, then bin, then value, then raster order
    order = np.lexsort((np.arange(count), values, bins, classes))
    sorted_class, sorted_bin = classes[order], bins[order]
    starts = np.ones(count, dtype=bool)
    starts[1:] = (sorted_class[1:] != sorted_class[:-1]) | (sorted_bin[1:] != sorted_bin[:-1])
    group_start = np.maximum.accumulate(np.where(starts, np.arange(count), 0))

    ranks = np.empty(count, dtype=np.int64)
    ranks[order] = np.arange(count) - group_start + 1
    return ranks


@stage(name=Stage.RANKS)
def build_rank_metadata(field: ScalarField2D, cp_map: CriticalPointMap, eps: float) -> RankMetadata:
    if (field.nx, field.ny) != (cp_map.nx, cp_map.ny):
        raise DimensionError(
            f"{cp_map.nx}x{cp_map.ny} map does not match {field.nx}x{field.ny} field"
        )
    positions = extrema_positions(cp_map)
    values = field.values.ravel()[positions].astype(np.float64)
    classes = cp_map.labels.ravel()[positions]
    ranks = _group_ranks(classes, quantize_array(values, eps), values)
    logger.debug("ranked %d extrema", ranks.size)
    return RankMetadata(ranks)


def pack_map(cp_map: CriticalPointMap) -> bytes:
    """Four 2-bit labels per byte in raster order, first label in the top bits."""
    labels = cp_map.labels.ravel()
    padded = np.zeros(-(-labels.size // 4) * 4, dtype=np.uint8)
    padded[: labels.size] = labels
    slots = padded.reshape(-1, 4) << _SHIFTS
    return np.bitwise_or.reduce(slots, axis=1).astype(np.uint8).tobytes()


def unpack_map(data: bytes, nx: int, ny: int) -> CriticalPointMap:
    count = nx * ny
    expected = -(-count // 4)
    if len(data) != expected:
        raise CorruptMetadataError(
            f"{len(data)} bytes for a {nx}x{ny} map, expected {expected}",
            section="critical_points",
        )
    packed = np.frombuffer(data, dtype=np.uint8)
    labels = ((packed[:, None] >> _SHIFTS) & 0b11).ravel()
    if np.any(labels[count:]):
        raise CorruptMetadataError(
            "non-zero padding after the last label", section="critical_points"
        )
    cp_map = CriticalPointMap(nx=nx, ny=ny, labels=labels[:count])

    # saddles need all four neighbors
    border = np.ones((ny, nx), dtype=bool)
    border[1:-1, 1:-1] = False
    if np.any(border & (cp_map.labels == CriticalPointClass.SADDLE)):
        raise CorruptMetadataError(
            "saddle labeled on the grid border", section="critical_points"
        )
    return cp_map


@dataclass(frozen=True, eq=False)
class RankLookup:
    """Ranks resolved against positions, in raster order of the extrema."""

    positions: np.ndarray
    ranks: np.ndarray
    classes: np.ndarray
    bins: np.ndarray
    group_sizes: np.ndarray

    def __len__(self) -> int:
        return self.positions.size

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.positions.tolist(), self.ranks.tolist()))

    def rank_of(self, position: int) -> int:
        i = int(np.searchsorted(self.positions, position))
        if i == self.positions.size or self.positions[i] != position:
            raise CorruptMetadataError(f"no rank stored for position {position}", section="ranks")
        return int(self.ranks[i])

    def groups(self) -> list[np.ndarray]:
        """Indices into this lookup, one array per (class, bin) group."""
        if not len(self):
            return []
        order = np.lexsort((self.ranks, self.bins, self.classes))
        keys = np.stack([self.classes[order], self.bins[order]], axis=1)
        cuts = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
        return np.split(order, cuts)


def resolve_ranks(
    cp_map: CriticalPointMap,
    base: ScalarField2D,
    ranks: RankMetadata,
    eps: float,
    bins: np.ndarray | None = None,
) -> RankLookup:
    if (base.nx, base.ny) != (cp_map.nx, cp_map.ny):
        raise DimensionError(
            f"{cp_map.nx}x{cp_map.ny} map does not match {base.nx}x{base.ny} reconstruction"
        )
    positions = extrema_positions(cp_map)
    if positions.size != len(ranks):
        raise CorruptMetadataError(
            f"{len(ranks)} ranks stored for {positions.size} extrema", section="ranks"
        )

    classes = cp_map.labels.ravel()[positions].astype(np.int64)
    # binary32 centers can re-quantize into the neighboring bin, so decoders pass their bins
    if bins is None:
        bins = quantize_array(base.values.ravel()[positions], eps)
    else:
        bins = np.asarray(bins).ravel()
        if bins.size != base.nx * base.ny:
            raise DimensionError(f"{bins.size} bin indices for a {base.nx}x{base.ny} field")
        bins = bins[positions]
    values = ranks.ranks
    group_sizes = np.zeros(positions.size, dtype=np.int64)

    lookup = RankLookup(positions, values, classes, bins.astype(np.int64), group_sizes)
    for members in lookup.groups():
        got = values[members]
        if not np.array_equal(got, np.arange(1, members.size + 1)):
            first = int(positions[members[0]])
            label = CriticalPointClass(int(classes[members[0]])).label
            raise CorruptMetadataError(
                f"{label} group at position {first} holds ranks {sorted(got.tolist())[:8]}, "
                f"not a permutation of 1..{members.size}",
                section="ranks",
            )
        group_sizes[members] = members.size
    return lookup
