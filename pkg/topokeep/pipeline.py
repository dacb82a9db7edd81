import dataclasses
import logging
import math
import typing as t
from dataclasses import dataclass

import anyio
import numpy as np

from .codec import (
    EncodedSections,
    adecode_indices,
    aencode_indices,
    decode_rank_metadata,
    encode_rank_metadata,
)
from .config import GRID_SPACING, MAX_RBF_RADIUS, CompressorConfig
from .container import CompressedStream, stream_stats
from .context import run_scope
from .errors import CorruptStreamError, DimensionError
from .grid import ScalarField2D
from .pool import WorkerPool
from .quantizer import quantize_array, reconstruct
from .restore import (
    CorrectionOutcome,
    arefine_saddles,
    log_outcomes,
    restore_extrema,
    restore_order,
    summarize_outcomes,
)
from .stages import stage
from .states import Stage
from .topo_meta import RankMetadata, build_rank_metadata, pack_map, resolve_ranks, unpack_map
from .topology import (
    CriticalPointMap,
    FalseCaseReport,
    adetect_critical_points,
    count_false_cases,
    detect_critical_points,
)

logger = logging.getLogger(__name__)


@stage(name=Stage.QUANTIZE)
def _quantize(field: ScalarField2D, eps: float) -> np.ndarray:
    return quantize_array(field.values, eps)


@stage(name=Stage.METADATA)
def _encode_side_channel(
    cp_map: CriticalPointMap, ranks: RankMetadata, block_size: int
) -> tuple[bytes, bytes]:
    return pack_map(cp_map), encode_rank_metadata(ranks.ranks, block_size).to_bytes()


@stage(name=Stage.METADATA)
def _decode_side_channel(stream: CompressedStream) -> tuple[CriticalPointMap, RankMetadata]:
    cp_map = unpack_map(stream.critical_points, stream.nx, stream.ny)
    count = int(cp_map.extrema_mask().sum())
    sections = EncodedSections.from_bytes(stream.ranks, count, stream.block_size)
    return cp_map, RankMetadata(decode_rank_metadata(sections, count, stream.block_size))


@stage(name=Stage.DEQUANTIZE)
def _dequantize(bins: np.ndarray, stream: CompressedStream) -> ScalarField2D:
    with np.errstate(over="ignore"):
        values = reconstruct(bins, stream.eps)
    if not np.isfinite(values).all():
        raise CorruptStreamError("bin indices reconstruct outside binary32", section="firsts")
    return ScalarField2D(stream.nx, stream.ny, values)


async def acompress(field: ScalarField2D, config: CompressorConfig) -> CompressedStream:
    with run_scope("compress"):
        eps = config.effective_eps(field)
        logger.info(
            "compressing %dx%d, eps=%g (%s), topology=%s",
            field.nx, field.ny, eps, config.eps_mode, config.topology,
        )
        pool = WorkerPool(config.threads)

        # topology comes from the original field, before anything is lost
        critical_points, ranks = b"", b""
        if config.topology:
            cp_map = await adetect_critical_points(field, pool)
            metadata = build_rank_metadata(field, cp_map, eps)
            critical_points, ranks = _encode_side_channel(cp_map, metadata, config.block_size)

        bins = _quantize(field, eps)
        indices = await aencode_indices(bins.ravel(), config.block_size, pool)
        return CompressedStream(
            nx=field.nx,
            ny=field.ny,
            eps=eps,
            block_size=config.block_size,
            indices=indices,
            topology=config.topology,
            critical_points=critical_points,
            ranks=ranks,
        )


def compress(field: ScalarField2D, config: CompressorConfig) -> CompressedStream:
    return anyio.run(acompress, field, config)


@dataclass(frozen=True)
class Decompressed:
    field: ScalarField2D
    base: ScalarField2D
    outcomes: list[CorrectionOutcome]

    def correction_stats(self) -> dict[str, dict[str, t.Any]]:
        return summarize_outcomes(self.outcomes)


async def adecompress_detailed(
    stream: CompressedStream, threads: int | None = None
) -> Decompressed:
    with run_scope("decompress") as ctx:
        pool = WorkerPool(threads)
        bins = await adecode_indices(stream.indices, stream.nx * stream.ny, stream.block_size, pool)
        base = _dequantize(bins, stream)
        if not stream.topology:
            return Decompressed(field=base, base=base, outcomes=[])

        cp_map, ranks = _decode_side_channel(stream)
        lookup = resolve_ranks(cp_map, base, ranks, stream.eps, bins=bins)

        field, extrema = restore_extrema(base, cp_map, lookup, stream.eps)
        field, order = restore_order(field, cp_map, lookup, stream.eps)
        field, saddles = await arefine_saddles(field, cp_map, stream.eps, pool)

        for name, outcomes in (
            (Stage.EXTREMA_STENCIL, extrema),
            (Stage.ORDER_RESTORE, order),
            (Stage.RBF_SADDLE, saddles),
        ):
            ctx.record_outcomes(name, outcomes)
            log_outcomes(name, outcomes)
        return Decompressed(field=field, base=base, outcomes=extrema + order + saddles)


async def adecompress(stream: CompressedStream, threads: int | None = None) -> ScalarField2D:
    return (await adecompress_detailed(stream, threads)).field


def decompress(stream: CompressedStream, threads: int | None = None) -> ScalarField2D:
    return anyio.run(adecompress, stream, threads)


@dataclass(frozen=True)
class BoundsSatisfied:
    within_eps: bool
    within_2eps: bool
    within_lipschitz_bound: bool | None = None


@dataclass(frozen=True)
class VerificationReport:
    max_abs_error: float
    mean_abs_error: float
    psnr: float | None
    false_cases: FalseCaseReport
    eps_effective: float
    bounds_satisfied: BoundsSatisfied
    compression_ratio: float | None = None
    bit_rate: float | None = None
    correction_stats: dict[str, dict[str, t.Any]] = dataclasses.field(default_factory=dict)

    @property
    def fn(self) -> int:
        return self.false_cases.fn_count

    @property
    def fp(self) -> int:
        return self.false_cases.fp_count

    @property
    def ft(self) -> int:
        return self.false_cases.ft_count

    def passed(self, strict: bool = False) -> bool:
        within = self.bounds_satisfied.within_eps if strict else self.bounds_satisfied.within_2eps
        return self.fp == 0 and self.ft == 0 and within

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "max_abs_error": self.max_abs_error,
            "mean_abs_error": self.mean_abs_error,
            "psnr": self.psnr,
            "fn": self.fn,
            "fp": self.fp,
            "ft": self.ft,
            "fn_by_class": dict(self.false_cases.fn_by_class),
            "compression_ratio": self.compression_ratio,
            "bit_rate": self.bit_rate,
            "eps_effective": self.eps_effective,
            "bounds_satisfied": dataclasses.asdict(self.bounds_satisfied),
            "correction_stats": self.correction_stats,
        }

    def to_row(self) -> dict[str, t.Any]:
        """Flat view for CSV output."""
        row = {k: v for k, v in self.to_dict().items() if not isinstance(v, dict)}
        row.update({f"fn_{cls}": n for cls, n in self.false_cases.fn_by_class.items()})
        row.update(dataclasses.asdict(self.bounds_satisfied))
        for name, stats in sorted(self.correction_stats.items()):
            row[f"{name}_applied"] = stats["applied"]
            row[f"{name}_suppressed"] = stats["suppressed"]
        return row


def _psnr(original: np.ndarray, mse: float) -> float | None:
    value_range = float(original.max() - original.min())
    if mse == 0.0 or value_range == 0.0:
        return None
    return 20.0 * math.log10(value_range) - 10.0 * math.log10(mse)


def verify(
    original: ScalarField2D,
    reconstructed: ScalarField2D,
    eps: float,
    lipschitz_hint: float | None = None,
    stream: CompressedStream | None = None,
    correction_stats: dict[str, dict[str, t.Any]] | None = None,
) -> VerificationReport:
    if (original.nx, original.ny) != (reconstructed.nx, reconstructed.ny):
        raise DimensionError(
            f"cannot compare {original.nx}x{original.ny} with "
            f"{reconstructed.nx}x{reconstructed.ny}"
        )
    reference = original.as_float64()
    values = reconstructed.as_float64()
    errors = np.abs(reference - values)
    # one binary32 step of slack for materializing bin centers
    slack = np.spacing(np.abs(reconstructed.values)).astype(np.float64)

    def within(bound: float) -> bool:
        return bool(np.all(errors <= bound + slack))

    lipschitz_ok = None
    if lipschitz_hint is not None:
        lipschitz_ok = within(eps + lipschitz_hint * MAX_RBF_RADIUS * GRID_SPACING)

    stats = stream_stats(stream) if stream is not None else None
    return VerificationReport(
        max_abs_error=float(errors.max()),
        mean_abs_error=float(errors.mean()),
        psnr=_psnr(reference, float(np.mean(errors**2))),
        false_cases=count_false_cases(
            detect_critical_points(original), detect_critical_points(reconstructed)
        ),
        eps_effective=eps,
        bounds_satisfied=BoundsSatisfied(
            within_eps=within(eps),
            within_2eps=within(2.0 * eps),
            within_lipschitz_bound=lipschitz_ok,
        ),
        compression_ratio=stats["compression_ratio"] if stats else None,
        bit_rate=stats["bit_rate"] if stats else None,
        correction_stats=correction_stats or {},
    )


@dataclass(frozen=True)
class EvaluationReport:
    baseline: VerificationReport
    topology: VerificationReport
    side_channel_bytes: int

    @property
    def fn_reduction_factor(self) -> float | None:
        if self.topology.fn == 0:
            return None
        return self.baseline.fn / self.topology.fn

    @property
    def fn_eliminated(self) -> bool:
        return self.topology.fn == 0

    def to_dict(self) -> dict[str, t.Any]:
        return {
            "baseline": self.baseline.to_dict(),
            "topology": self.topology.to_dict(),
            "fn_reduction_factor": self.fn_reduction_factor,
            "fn_eliminated": self.fn_eliminated,
            "side_channel_bytes": self.side_channel_bytes,
        }

    def rows(self) -> list[dict[str, t.Any]]:
        return [
            {"mode": mode, **report.to_row()}
            for mode, report in (("baseline", self.baseline), ("topology", self.topology))
        ]


async def aevaluate(field: ScalarField2D, config: CompressorConfig) -> EvaluationReport:
    """Run the same field through both modes and compare them."""
    with run_scope("evaluate"):
        reports = {}
        side_channel = 0
        for topology in (False, True):
            mode_config = dataclasses.replace(config, topology=topology)
            stream = await acompress(field, mode_config)
            result = await adecompress_detailed(stream, config.threads)
            reports[topology] = verify(
                field,
                result.field,
                stream.eps,
                config.lipschitz_hint,
                stream=stream,
                correction_stats=result.correction_stats(),
            )
            side_channel = stream.side_channel_bytes
        report = EvaluationReport(reports[False], reports[True], side_channel)
        logger.info(
            "fn baseline=%d topology=%d", report.baseline.fn, report.topology.fn
        )
        return report


def evaluate(field: ScalarField2D, config: CompressorConfig) -> EvaluationReport:
    return anyio.run(aevaluate, field, config)
