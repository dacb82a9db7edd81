import logging
import typing as t
from collections import Counter
from dataclasses import dataclass

import numpy as np
from cachetools import LRUCache, cached

from .errors import CorruptMetadataError, DimensionError, ValidationError
from .grid import ScalarField2D
from .pool import WorkerPool, split_range
from .quantizer import reconstruct
from .stages import stage
from .states import RevertReason, Stage
from .topo_meta import RankLookup
from .topology import CriticalPointClass, CriticalPointMap, _classify_at, classify_array

logger = logging.getLogger(__name__)

REGULAR = CriticalPointClass.REGULAR
MINIMUM = CriticalPointClass.MINIMUM
SADDLE = CriticalPointClass.SADDLE
MAXIMUM = CriticalPointClass.MAXIMUM

EPS_RBF_FACTOR = 0.1
KERNEL_SIZES = (3, 5, 7)

Position = tuple[int, int]


@dataclass(frozen=True)
class RbfParams:
    sigma: float
    k_size: int
    eps_rbf: float
    radius: int | None = None

    def __post_init__(self):
        if self.k_size not in KERNEL_SIZES:
            raise ValidationError(f"k_size must be one of {KERNEL_SIZES}, got {self.k_size}")
        if self.radius is None:
            object.__setattr__(self, "radius", self.k_size // 2)
        elif self.radius != self.k_size // 2:
            raise ValidationError(f"radius {self.radius} does not match k_size {self.k_size}")
        if not 0.5 <= self.sigma <= 1.0:
            raise ValidationError(f"sigma must lie in [0.5, 1.0], got {self.sigma}")
        if not self.eps_rbf > 0:
            raise ValidationError(f"eps_rbf must be positive, got {self.eps_rbf}")


@dataclass(frozen=True)
class CorrectionOutcome:
    position: Position
    stage: Stage
    applied: bool
    reverted_reason: RevertReason | None = None

    def __post_init__(self):
        if self.applied == (self.reverted_reason is not None):
            raise ValueError("reverted_reason is required exactly when a correction is not applied")


def summarize_outcomes(outcomes: t.Iterable[CorrectionOutcome]) -> dict[str, dict[str, t.Any]]:
    summary: dict[str, dict[str, t.Any]] = {}
    for outcome in outcomes:
        entry = summary.setdefault(
            str(outcome.stage), {"applied": 0, "suppressed": 0, "reasons": Counter()}
        )
        if outcome.applied:
            entry["applied"] += 1
        else:
            entry["suppressed"] += 1
            entry["reasons"][str(outcome.reverted_reason)] += 1
    for entry in summary.values():
        entry["reasons"] = dict(sorted(entry["reasons"].items()))
    return summary


def movement_budget(eps: float) -> float:
    """Largest distance any restore stage may put between a value and its bin center."""
    return eps - EPS_RBF_FACTOR * eps


# representable-value stepping ------------------------------------------------


def _to_key(values: np.ndarray) -> np.ndarray:
    # binary32 bit patterns as integers that sort like the values they encode
    bits = np.asarray(values, dtype=np.float32).view(np.int32).astype(np.int64)
    return np.where(bits >= 0, bits, -(bits & 0x7FFFFFFF))


def _from_key(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    bits = np.where(keys >= 0, keys, (-keys) | 0x80000000)
    return bits.astype(np.uint32).view(np.float32)


def ulp_step(values: np.ndarray | float, steps: np.ndarray | int) -> np.ndarray:
    """Move each binary32 value by ``steps`` representable values (negative is down)."""
    return _from_key(_to_key(values) + np.asarray(steps, dtype=np.int64))


def _highest_within(centers: np.ndarray, budget: float) -> np.ndarray:
    limit = np.asarray(centers, dtype=np.float64) + budget
    rounded = limit.astype(np.float32)
    return np.where(
        rounded.astype(np.float64) > limit, np.nextafter(rounded, np.float32(-np.inf)), rounded
    )


def _lowest_within(centers: np.ndarray, budget: float) -> np.ndarray:
    limit = np.asarray(centers, dtype=np.float64) - budget
    rounded = limit.astype(np.float32)
    return np.where(
        rounded.astype(np.float64) < limit, np.nextafter(rounded, np.float32(np.inf)), rounded
    )


# suppression guard -----------------------------------------------------------


def _neighborhood(x: int, y: int, nx: int, ny: int) -> list[Position]:
    points = [(x, y)]
    if y > 0:
        points.append((x, y - 1))
    if y < ny - 1:
        points.append((x, y + 1))
    if x > 0:
        points.append((x - 1, y))
    if x < nx - 1:
        points.append((x + 1, y))
    return points


def _guard(
    values: np.ndarray,
    stored: np.ndarray,
    current: np.ndarray,
    points: t.Iterable[Position],
) -> tuple[RevertReason | None, dict[Position, int]]:
    """Re-classify ``points`` after a tentative change.

    ``current`` holds the classes before the change. Returns the revert
    reason, or ``None`` with the new classes to write back into ``current``.
    """
    updated: dict[Position, int] = {}
    lost = False
    for x, y in points:
        cls = _classify_at(values, x, y)
        want = stored[y, x]
        if cls != REGULAR and cls != want:
            if want == REGULAR:
                return RevertReason.WOULD_CREATE_FP, {}
            return RevertReason.WOULD_CREATE_FT, {}
        if cls != want and current[y, x] == want:
            lost = True
        updated[(x, y)] = int(cls)
    if lost:
        return RevertReason.WOULD_CREATE_FN, {}
    return None, updated


def _violations(stored: np.ndarray, before: np.ndarray, after: np.ndarray) -> np.ndarray:
    invented = (after != REGULAR) & (after != stored)
    lost = (stored != REGULAR) & (before == stored) & (after != stored)
    return invented | lost


def _check_inputs(field: ScalarField2D, cp_map: CriticalPointMap) -> None:
    if (field.nx, field.ny) != (cp_map.nx, cp_map.ny):
        raise DimensionError(
            f"{cp_map.nx}x{cp_map.ny} map does not match {field.nx}x{field.ny} field"
        )


# extrema stencils ------------------------------------------------------------


def _neighbor_extremes(values: np.ndarray, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ny, nx = values.shape
    padded = np.pad(values, 1, constant_values=np.nan)
    ys, xs = np.divmod(flat, nx)
    ys, xs = ys + 1, xs + 1
    stack = np.stack(
        [padded[ys - 1, xs], padded[ys + 1, xs], padded[ys, xs - 1], padded[ys, xs + 1]]
    )
    return np.nanmin(stack, axis=0), np.nanmax(stack, axis=0)


def _position(flat: int, nx: int) -> Position:
    y, x = divmod(int(flat), nx)
    return (x, y)


def _extrema_stencil(
    values: np.ndarray, stored: np.ndarray, lookup: RankLookup, eps: float
) -> tuple[np.ndarray, list[CorrectionOutcome]]:
    ny, nx = values.shape
    before = classify_array(values)
    lost = before.ravel()[lookup.positions] != lookup.classes
    candidates = lookup.positions[lost]
    if not candidates.size:
        return values, []

    ranks = lookup.ranks[lost]
    if np.any(ranks < 1):
        raise CorruptMetadataError("extremum without a usable rank", section="ranks")
    is_max = lookup.classes[lost] == MAXIMUM
    centers = values.ravel()[candidates]
    lowest, highest = _neighbor_extremes(values, candidates)

    # phase 1: proposals read the unmodified input only
    anchors = np.where(is_max, highest, lowest)
    budget = movement_budget(eps)
    limits = np.where(is_max, _highest_within(centers, budget), _lowest_within(centers, budget))
    room = np.where(is_max, _to_key(limits) - _to_key(anchors), _to_key(anchors) - _to_key(limits))
    steps = np.minimum(ranks, room)
    fits = steps >= 1
    proposals = ulp_step(anchors, np.where(is_max, steps, -steps))

    # phase 2: apply everything, fall back to a raster-order guarded pass on conflicts
    result = values.copy()
    result.reshape(-1)[candidates[fits]] = proposals[fits]
    if _violations(stored, before, classify_array(result)).any():
        logger.debug("extrema stencil conflicts; applying one candidate at a time")
        return _extrema_serial(values, stored, before, candidates, proposals, fits)

    outcomes = [
        CorrectionOutcome(_position(p, nx), Stage.EXTREMA_STENCIL, True)
        if ok
        else CorrectionOutcome(
            _position(p, nx), Stage.EXTREMA_STENCIL, False, RevertReason.EXCEEDS_TOLERANCE
        )
        for p, ok in zip(candidates.tolist(), fits.tolist())
    ]
    return result, outcomes


def _extrema_serial(
    values: np.ndarray,
    stored: np.ndarray,
    before: np.ndarray,
    candidates: np.ndarray,
    proposals: np.ndarray,
    fits: np.ndarray,
) -> tuple[np.ndarray, list[CorrectionOutcome]]:
    ny, nx = values.shape
    result = values.copy()
    current = before.copy()
    outcomes = []
    for p, proposal, ok in zip(candidates.tolist(), proposals, fits.tolist()):
        x, y = _position(p, nx)
        if not ok:
            outcomes.append(
                CorrectionOutcome(
                    (x, y), Stage.EXTREMA_STENCIL, False, RevertReason.EXCEEDS_TOLERANCE
                )
            )
            continue
        old = result[y, x]
        result[y, x] = proposal
        reason, updated = _guard(result, stored, current, _neighborhood(x, y, nx, ny))
        if reason is not None:
            result[y, x] = old
            logger.debug("extrema stencil at (%d, %d) suppressed: %s", x, y, reason)
            outcomes.append(CorrectionOutcome((x, y), Stage.EXTREMA_STENCIL, False, reason))
            continue
        for (qx, qy), cls in updated.items():
            current[qy, qx] = cls
        outcomes.append(CorrectionOutcome((x, y), Stage.EXTREMA_STENCIL, True))
    return result, outcomes


@stage(name=Stage.EXTREMA_STENCIL)
def restore_extrema(
    base: ScalarField2D, cp_map: CriticalPointMap, lookup: RankLookup, eps: float
) -> tuple[ScalarField2D, list[CorrectionOutcome]]:
    _check_inputs(base, cp_map)
    values, outcomes = _extrema_stencil(base.values, cp_map.labels, lookup, eps)
    if not outcomes:
        return base, outcomes
    return ScalarField2D(base.nx, base.ny, values), outcomes


# order restoration -----------------------------------------------------------


def _order_restore(
    values: np.ndarray, stored: np.ndarray, lookup: RankLookup, eps: float
) -> tuple[np.ndarray, list[CorrectionOutcome]]:
    ny, nx = values.shape
    result = values.copy()
    flat = result.reshape(-1)
    current = classify_array(result)
    budget, nudge = movement_budget(eps), EPS_RBF_FACTOR * eps
    centers = reconstruct(lookup.bins, eps)
    outcomes: list[CorrectionOutcome] = []

    for members in lookup.groups():
        if members.size < 2:
            continue
        positions = lookup.positions[members]
        old = flat[positions].copy()
        if np.all(old[1:] > old[:-1]):
            continue

        k = members.size
        center = centers[members[0]]
        ranks = lookup.ranks[members]
        # maxima climb above the center by rank, minima descend so rank 1 ends lowest
        if lookup.classes[members[0]] == MAXIMUM:
            steps = ranks
        else:
            steps = -(k + 1 - ranks)
        targets = ulp_step(np.full(k, center, dtype=np.float32), steps)
        points = [_position(p, nx) for p in positions.tolist()]

        within = (np.abs(targets.astype(np.float64) - float(center)) <= budget) & (
            np.abs(targets.astype(np.float64) - old.astype(np.float64)) <= nudge
        )
        if not within.all():
            outcomes += [
                CorrectionOutcome(p, Stage.ORDER_RESTORE, False, RevertReason.EXCEEDS_TOLERANCE)
                for p in points
            ]
            continue

        flat[positions] = targets
        touched = {q for x, y in points for q in _neighborhood(x, y, nx, ny)}
        touched = sorted(touched, key=lambda q: (q[1], q[0]))
        reason, updated = _guard(result, stored, current, touched)
        if reason is not None:
            flat[positions] = old
            logger.debug("order restore of %d extrema at %s suppressed: %s", k, points[0], reason)
            outcomes += [CorrectionOutcome(p, Stage.ORDER_RESTORE, False, reason) for p in points]
            continue
        for (qx, qy), cls in updated.items():
            current[qy, qx] = cls
        outcomes += [CorrectionOutcome(p, Stage.ORDER_RESTORE, True) for p in points]
    return result, outcomes


@stage(name=Stage.ORDER_RESTORE)
def restore_order(
    field: ScalarField2D, cp_map: CriticalPointMap, lookup: RankLookup, eps: float
) -> tuple[ScalarField2D, list[CorrectionOutcome]]:
    _check_inputs(field, cp_map)
    values, outcomes = _order_restore(field.values, cp_map.labels, lookup, eps)
    if not any(o.applied for o in outcomes):
        return field, outcomes
    return ScalarField2D(field.nx, field.ny, values), outcomes


# RBF saddle refinement -------------------------------------------------------


@cached(LRUCache(maxsize=8))
def kernel_offsets(radius: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dy, dx, squared distance) of every offset within Chebyshev ``radius``, centre excluded."""
    span = np.arange(-radius, radius + 1)
    dy, dx = (a.ravel() for a in np.meshgrid(span, span, indexing="ij"))
    keep = (dy != 0) | (dx != 0)
    dy, dx = dy[keep], dx[keep]
    d2 = (dy * dy + dx * dx).astype(np.float64)
    for a in (dy, dx, d2):
        a.setflags(write=False)
    return dy, dx, d2


def _kernel_size(global_variation: float) -> int:
    if global_variation < 0.05:
        return 7
    if global_variation < 0.2:
        return 5
    return 3


def _global_stats(values: np.ndarray) -> tuple[float, float]:
    """(value range, global variation)."""
    as64 = values.astype(np.float64)
    value_range = float(as64.max() - as64.min())
    if value_range == 0.0:
        return 0.0, 0.0
    return value_range, float(as64.std()) / value_range


def _gather(values: np.ndarray, ys: np.ndarray, xs: np.ndarray, radius: int, with_centre: bool):
    ny, nx = values.shape
    dy, dx, d2 = kernel_offsets(radius)
    if with_centre:
        dy, dx, d2 = np.append(dy, 0), np.append(dx, 0), np.append(d2, 0.0)
    qy = ys[:, None] + dy[None, :]
    qx = xs[:, None] + dx[None, :]
    inside = (qy >= 0) & (qy < ny) & (qx >= 0) & (qx < nx)
    gathered = values[np.clip(qy, 0, ny - 1), np.clip(qx, 0, nx - 1)].astype(np.float64)
    return gathered, inside, d2


def _sigmas(values: np.ndarray, ys: np.ndarray, xs: np.ndarray, radius: int, value_range: float):
    if value_range == 0.0:
        return np.ones(ys.size)
    gathered, inside, _ = _gather(values, ys, xs, radius, with_centre=True)
    local = np.where(inside, gathered, -np.inf).max(axis=1) - np.where(
        inside, gathered, np.inf
    ).min(axis=1)
    return 0.5 + 0.5 * (1.0 - np.clip(local / value_range, 0.0, 1.0))


def _rbf_proposals(
    values: np.ndarray, ys: np.ndarray, xs: np.ndarray, radius: int, sigmas: np.ndarray
) -> np.ndarray:
    gathered, inside, d2 = _gather(values, ys, xs, radius, with_centre=False)
    weights = np.exp(-d2[None, :] / (2.0 * sigmas[:, None] ** 2)) * inside
    weights /= weights.sum(axis=1, keepdims=True)
    return (weights * gathered).sum(axis=1)


def adaptive_params(base: ScalarField2D, p: Position, eps: float) -> RbfParams:
    x, y = p
    value_range, global_variation = _global_stats(base.values)
    k_size = _kernel_size(global_variation)
    sigma = _sigmas(base.values, np.array([y]), np.array([x]), k_size // 2, value_range)[0]
    return RbfParams(sigma=float(sigma), k_size=k_size, eps_rbf=EPS_RBF_FACTOR * eps)


def rbf_refine(base: ScalarField2D, p: Position, params: RbfParams) -> float:
    """Normalized Gaussian-weighted mean of the neighbors of ``p``."""
    x, y = p
    if base.size < 2:
        raise ValidationError("a single-point field has no neighborhood")
    radius = t.cast(int, params.radius)
    proposal = _rbf_proposals(
        base.values, np.array([y]), np.array([x]), radius, np.array([params.sigma])
    )
    return float(proposal[0])


def _saddle_candidates(values: np.ndarray, stored: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    current = classify_array(values)
    ys, xs = np.nonzero((stored == SADDLE) & (current != SADDLE))
    return ys, xs


def _collapsed(values: np.ndarray, x: int, y: int) -> bool:
    top, down = values.item(y - 1, x), values.item(y + 1, x)
    left, right = values.item(y, x - 1), values.item(y, x + 1)
    return not (
        min(top, down) > max(left, right) or min(left, right) > max(top, down)
    )


def _apply_saddles(
    values: np.ndarray,
    stored: np.ndarray,
    ys: np.ndarray,
    xs: np.ndarray,
    proposals: np.ndarray,
    eps: float,
) -> tuple[np.ndarray, list[CorrectionOutcome]]:
    ny, nx = values.shape
    result = values.copy()
    current = classify_array(result)
    budget = movement_budget(eps)
    outcomes: list[CorrectionOutcome] = []

    def revert(position: Position, reason: RevertReason):
        logger.debug("saddle refinement at %s suppressed: %s", position, reason)
        outcomes.append(CorrectionOutcome(position, Stage.RBF_SADDLE, False, reason))

    for x, y, proposal in zip(xs.tolist(), ys.tolist(), proposals.tolist()):
        if current[y, x] == SADDLE:
            continue
        if _collapsed(result, x, y):
            revert((x, y), RevertReason.NEIGHBORS_COLLAPSED)
            continue
        old = result[y, x]
        value = np.float32(proposal)
        if abs(float(value) - float(old)) > budget:
            revert((x, y), RevertReason.EXCEEDS_TOLERANCE)
            continue

        result[y, x] = value
        cls = _classify_at(result, x, y)
        if cls != SADDLE:
            result[y, x] = old
            revert(
                (x, y),
                RevertReason.NO_SIGN_CHANGE if cls == REGULAR else RevertReason.WOULD_CREATE_FT,
            )
            continue
        reason, updated = _guard(result, stored, current, _neighborhood(x, y, nx, ny))
        if reason is not None:
            result[y, x] = old
            revert((x, y), reason)
            continue
        for (qx, qy), q_cls in updated.items():
            current[qy, qx] = q_cls
        outcomes.append(CorrectionOutcome((x, y), Stage.RBF_SADDLE, True))
    return result, outcomes


def _saddle_setup(values: np.ndarray, stored: np.ndarray):
    ys, xs = _saddle_candidates(values, stored)
    value_range, global_variation = _global_stats(values)
    radius = _kernel_size(global_variation) // 2
    return ys, xs, value_range, radius


@stage(name=Stage.RBF_SADDLE)
def refine_saddles(
    field: ScalarField2D, cp_map: CriticalPointMap, eps: float
) -> tuple[ScalarField2D, list[CorrectionOutcome]]:
    _check_inputs(field, cp_map)
    values = field.values
    ys, xs, value_range, radius = _saddle_setup(values, cp_map.labels)
    if not ys.size:
        return field, []
    sigmas = _sigmas(values, ys, xs, radius, value_range)
    proposals = _rbf_proposals(values, ys, xs, radius, sigmas)
    result, outcomes = _apply_saddles(values, cp_map.labels, ys, xs, proposals, eps)
    return ScalarField2D(field.nx, field.ny, result), outcomes


@stage(name=Stage.RBF_SADDLE)
async def arefine_saddles(
    field: ScalarField2D,
    cp_map: CriticalPointMap,
    eps: float,
    pool: WorkerPool | None = None,
) -> tuple[ScalarField2D, list[CorrectionOutcome]]:
    _check_inputs(field, cp_map)
    values = field.values
    ys, xs, value_range, radius = _saddle_setup(values, cp_map.labels)
    if not ys.size:
        return field, []
    pool = pool or WorkerPool(1)

    def propose(span: tuple[int, int]) -> np.ndarray:
        lo, hi = span
        sigmas = _sigmas(values, ys[lo:hi], xs[lo:hi], radius, value_range)
        return _rbf_proposals(values, ys[lo:hi], xs[lo:hi], radius, sigmas)

    chunks = await pool.map(propose, split_range(ys.size, pool.threads))
    proposals = np.concatenate(chunks)
    result, outcomes = _apply_saddles(values, cp_map.labels, ys, xs, proposals, eps)
    return ScalarField2D(field.nx, field.ny, result), outcomes


def log_outcomes(stage_name: Stage, outcomes: list[CorrectionOutcome]) -> None:
    applied = sum(o.applied for o in outcomes)
    logger.info(
        "%s: %d applied, %d suppressed", stage_name, applied, len(outcomes) - applied
    )


