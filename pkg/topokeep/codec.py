"""Lossless block codec for signed 32-bit bin indices.

The flattened index stream is cut into blocks of ``block_size``. Each block
keeps its first index verbatim and the deltas between consecutive indices.
A block whose deltas are all zero is *constant* and costs one bitmap bit plus
its first index. Other blocks store one width byte (the bit length of the
largest delta magnitude), one sign bit per delta and the magnitudes packed at
that width. All bit streams are MSB-first with the final byte zero-padded.

The same codec compresses the rank metadata in a second pass.
"""
import logging
import typing as t
from dataclasses import dataclass

import numpy as np

from .errors import CorruptStreamError, ValidationError
from .pool import WorkerPool
from .quantizer import INDEX_MAX, INDEX_MIN
from .stages import stage
from .states import Stage

logger = logging.getLogger(__name__)

SECTION_NAMES = ("constant_bitmap", "widths", "sign_bits", "firsts", "payload")
MAX_WIDTH = 32

# blocks per worker chunk; bounds the (values x width) bit matrices
_CHUNK_BLOCKS = 4096


@dataclass(frozen=True)
class EncodedSections:
    constant_bitmap: bytes = b""
    widths: bytes = b""
    sign_bits: bytes = b""
    firsts: bytes = b""
    payload: bytes = b""

    def sizes(self) -> dict[str, int]:
        return {name: len(getattr(self, name)) for name in SECTION_NAMES}

    @property
    def nbytes(self) -> int:
        return sum(self.sizes().values())

    def to_bytes(self) -> bytes:
        return b"".join(getattr(self, name) for name in SECTION_NAMES)

    @classmethod
    def from_bytes(cls, blob: bytes, total_count: int, block_size: int) -> "EncodedSections":
        """Split a concatenation produced by :meth:`to_bytes`.

        Section boundaries follow from the element count, the block size and
        the bitmap and width bytes themselves.
        """
        nblocks = block_count(total_count, block_size)
        cursor = 0

        def take(name: str, length: int) -> bytes:
            nonlocal cursor
            if cursor + length > len(blob):
                raise CorruptStreamError(
                    f"needs {length} bytes at offset {cursor}, only {len(blob) - cursor} left",
                    section=name,
                )
            chunk = blob[cursor : cursor + length]
            cursor += length
            return chunk

        bitmap = take("constant_bitmap", _packed_len(nblocks))
        constant = _unpack_flags(bitmap, nblocks)
        widths = take("widths", int((~constant).sum()))
        block_widths = _block_widths(constant, widths)
        counts = deltas_per_block(total_count, block_size)
        sign_bits = take("sign_bits", _packed_len(int(counts[~constant].sum())))
        firsts = take("firsts", 4 * nblocks)
        payload = take("payload", _packed_len(int((block_widths.astype(np.int64) * counts).sum())))
        if cursor != len(blob):
            raise CorruptStreamError(
                f"{len(blob) - cursor} trailing bytes after the payload", section="payload"
            )
        return cls(bitmap, widths, sign_bits, firsts, payload)


def block_count(total_count: int, block_size: int) -> int:
    return -(-total_count // block_size)


def deltas_per_block(total_count: int, block_size: int) -> np.ndarray:
    nblocks = block_count(total_count, block_size)
    counts = np.full(nblocks, block_size - 1, dtype=np.int64)
    if nblocks:
        counts[-1] = total_count - (nblocks - 1) * block_size - 1
    return counts


def _packed_len(bits: int) -> int:
    return -(-bits // 8)


def _unpack_bits(packed: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(packed, dtype=np.uint8), count=count)


def _unpack_flags(packed: bytes, count: int) -> np.ndarray:
    return _unpack_bits(packed, count).astype(bool)


def _bit_length(magnitudes: np.ndarray) -> np.ndarray:
    # exact for integers below 2**53; bit_length(0) == 0
    return np.frexp(magnitudes.astype(np.float64))[1].astype(np.uint8)


def _block_widths(constant: np.ndarray, widths: bytes) -> np.ndarray:
    declared = np.frombuffer(widths, dtype=np.uint8)
    if declared.size != int((~constant).sum()):
        raise CorruptStreamError(
            f"{declared.size} width bytes for {int((~constant).sum())} non-constant blocks",
            section="widths",
        )
    if declared.size and (declared.min() < 1 or declared.max() > MAX_WIDTH):
        raise CorruptStreamError(
            f"width byte outside 1..{MAX_WIDTH}: {int(declared.min())}..{int(declared.max())}",
            section="widths",
        )
    block_widths = np.zeros(constant.size, dtype=np.uint8)
    block_widths[~constant] = declared
    return block_widths


@dataclass
class _EncodedChunk:
    constant: np.ndarray
    widths: np.ndarray
    signs: np.ndarray
    firsts: np.ndarray
    payload: np.ndarray


def _encode_chunk(chunk: np.ndarray, block_size: int) -> _EncodedChunk:
    count = chunk.size
    nblocks = block_count(count, block_size)
    pad = nblocks * block_size - count
    if pad:
        # repeating the last index keeps padded deltas at zero
        chunk = np.concatenate([chunk, np.full(pad, chunk[-1], dtype=chunk.dtype)])
    blocks = chunk.reshape(nblocks, block_size)
    deltas = np.diff(blocks, axis=1)
    magnitudes = np.abs(deltas)
    widths = _bit_length(magnitudes.max(axis=1))
    constant = widths == 0

    counts = deltas_per_block(count, block_size)
    columns = np.arange(block_size - 1)
    selected = (columns[None, :] < counts[:, None]) & ~constant[:, None]

    mags = magnitudes[selected]
    value_widths = np.broadcast_to(widths[:, None], deltas.shape)[selected]
    if mags.size:
        shifts = np.arange(int(value_widths.max()) - 1, -1, -1, dtype=np.int64)
        bits = ((mags[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
        payload = bits[shifts[None, :] < value_widths[:, None].astype(np.int64)]
    else:
        payload = np.zeros(0, dtype=np.uint8)

    return _EncodedChunk(
        constant=constant,
        widths=widths[~constant],
        signs=(deltas[selected] < 0).astype(np.uint8),
        firsts=blocks[:, 0],
        payload=payload,
    )


def _prepare_indices(indices: t.Iterable[int] | np.ndarray) -> np.ndarray:
    values = np.asarray(indices, dtype=np.int64).ravel()
    if values.size and (values.min() < INDEX_MIN - 1 or values.max() > INDEX_MAX):
        raise ValidationError("indices must fit in signed 32 bits")
    return values


def _chunk_spans(count: int, block_size: int) -> list[tuple[int, int]]:
    step = block_size * _CHUNK_BLOCKS
    return [(lo, min(lo + step, count)) for lo in range(0, count, step)]


def _assemble(chunks: list[_EncodedChunk]) -> EncodedSections:
    if not chunks:
        return EncodedSections()

    def cat(name: str) -> np.ndarray:
        return np.concatenate([getattr(c, name) for c in chunks])

    return EncodedSections(
        constant_bitmap=np.packbits(cat("constant")).tobytes(),
        widths=cat("widths").astype(np.uint8).tobytes(),
        sign_bits=np.packbits(cat("signs")).tobytes(),
        firsts=cat("firsts").astype("<i4").tobytes(),
        payload=np.packbits(cat("payload")).tobytes(),
    )


@stage(name=Stage.ENCODE)
async def aencode_indices(
    indices: t.Iterable[int] | np.ndarray, block_size: int, pool: WorkerPool | None = None
) -> EncodedSections:
    if block_size < 2:
        raise ValidationError(f"block_size must be >= 2, got {block_size}")
    values = _prepare_indices(indices)
    pool = pool or WorkerPool(1)
    chunks = await pool.map(
        lambda span: _encode_chunk(values[span[0] : span[1]], block_size),
        _chunk_spans(values.size, block_size),
    )
    sections = _assemble(chunks)
    logger.debug("encoded %d indices into %s", values.size, sections.sizes())
    return sections


def encode_indices(indices: t.Iterable[int] | np.ndarray, block_size: int) -> EncodedSections:
    if block_size < 2:
        raise ValidationError(f"block_size must be >= 2, got {block_size}")
    values = _prepare_indices(indices)
    return _assemble(
        [
            _encode_chunk(values[lo:hi], block_size)
            for lo, hi in _chunk_spans(values.size, block_size)
        ]
    )


@dataclass
class _Layout:
    total_count: int
    block_size: int
    constant: np.ndarray
    block_widths: np.ndarray
    counts: np.ndarray
    firsts: np.ndarray
    sign_offsets: np.ndarray
    payload_offsets: np.ndarray
    sign_bits: np.ndarray
    payload_bits: np.ndarray

    @property
    def nblocks(self) -> int:
        return self.constant.size


def _parse_layout(sections: EncodedSections, total_count: int, block_size: int) -> _Layout:
    if block_size < 2:
        raise ValidationError(f"block_size must be >= 2, got {block_size}")
    nblocks = block_count(total_count, block_size)

    if len(sections.constant_bitmap) != _packed_len(nblocks):
        raise CorruptStreamError(
            f"{len(sections.constant_bitmap)} bytes for {nblocks} blocks",
            section="constant_bitmap",
        )
    constant = _unpack_flags(sections.constant_bitmap, nblocks)
    block_widths = _block_widths(constant, sections.widths)

    counts = deltas_per_block(total_count, block_size)
    if np.any(counts[~constant] < 1):
        raise CorruptStreamError(
            "single-element block flagged non-constant", section="constant_bitmap"
        )
    if len(sections.firsts) != 4 * nblocks:
        raise CorruptStreamError(
            f"{len(sections.firsts)} bytes for {nblocks} first indices", section="firsts"
        )

    sign_counts = np.where(constant, 0, counts)
    payload_counts = block_widths.astype(np.int64) * counts
    sign_offsets = np.concatenate([[0], np.cumsum(sign_counts)])
    payload_offsets = np.concatenate([[0], np.cumsum(payload_counts)])

    sign_total, payload_total = int(sign_offsets[-1]), int(payload_offsets[-1])
    if len(sections.sign_bits) != _packed_len(sign_total):
        raise CorruptStreamError(
            f"{len(sections.sign_bits)} bytes for {sign_total} sign bits", section="sign_bits"
        )
    if len(sections.payload) < _packed_len(payload_total):
        raise CorruptStreamError(
            f"truncated: {len(sections.payload)} bytes for {payload_total} bits",
            section="payload",
        )
    if len(sections.payload) > _packed_len(payload_total):
        raise CorruptStreamError(
            f"{len(sections.payload)} bytes for {payload_total} bits", section="payload"
        )

    return _Layout(
        total_count=total_count,
        block_size=block_size,
        constant=constant,
        block_widths=block_widths,
        counts=counts,
        firsts=np.frombuffer(sections.firsts, dtype="<i4").astype(np.int64),
        sign_offsets=sign_offsets,
        payload_offsets=payload_offsets,
        sign_bits=_unpack_bits(sections.sign_bits, sign_total),
        payload_bits=_unpack_bits(sections.payload, payload_total),
    )


def _decode_span(layout: _Layout, lo: int, hi: int) -> np.ndarray:
    block_size = layout.block_size
    constant = layout.constant[lo:hi]
    widths = layout.block_widths[lo:hi]
    counts = layout.counts[lo:hi]

    columns = np.arange(block_size - 1)
    selected = (columns[None, :] < counts[:, None]) & ~constant[:, None]
    value_widths = np.broadcast_to(widths[:, None], selected.shape)[selected].astype(np.int64)

    bits = layout.payload_bits[layout.payload_offsets[lo] : layout.payload_offsets[hi]]
    starts = np.cumsum(value_widths) - value_widths
    mags = np.zeros(value_widths.size, dtype=np.int64)
    for j in range(int(value_widths.max()) if value_widths.size else 0):
        active = j < value_widths
        positions = np.where(active, starts + j, 0)
        shift = np.maximum(value_widths - 1 - j, 0)
        mags += np.where(active, bits[positions].astype(np.int64) << shift, 0)

    signs = layout.sign_bits[layout.sign_offsets[lo] : layout.sign_offsets[hi]].astype(bool)
    deltas = np.zeros(selected.shape, dtype=np.int64)
    deltas[selected] = np.where(signs, -mags, mags)

    blocks = np.empty((hi - lo, block_size), dtype=np.int64)
    blocks[:, 0] = layout.firsts[lo:hi]
    blocks[:, 1:] = layout.firsts[lo:hi, None] + np.cumsum(deltas, axis=1)
    return blocks.ravel()


def _finish(layout: _Layout, spans: list[np.ndarray]) -> np.ndarray:
    flat = np.concatenate(spans)[: layout.total_count] if spans else np.zeros(0, np.int64)
    if flat.size and (flat.min() < INDEX_MIN - 1 or flat.max() > INDEX_MAX):
        raise CorruptStreamError("decoded index leaves the signed 32-bit range", section="payload")
    return flat.astype(np.int32)


def _block_spans(nblocks: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + _CHUNK_BLOCKS, nblocks)) for lo in range(0, nblocks, _CHUNK_BLOCKS)]


def decode_indices(sections: EncodedSections, total_count: int, block_size: int) -> np.ndarray:
    layout = _parse_layout(sections, total_count, block_size)
    spans = [_decode_span(layout, lo, hi) for lo, hi in _block_spans(layout.nblocks)]
    return _finish(layout, spans)


@stage(name=Stage.DECODE)
async def adecode_indices(
    sections: EncodedSections,
    total_count: int,
    block_size: int,
    pool: WorkerPool | None = None,
) -> np.ndarray:
    layout = _parse_layout(sections, total_count, block_size)
    pool = pool or WorkerPool(1)
    spans = await pool.map(lambda span: _decode_span(layout, *span), _block_spans(layout.nblocks))
    return _finish(layout, spans)


def encode_rank_metadata(ranks: t.Iterable[int] | np.ndarray, block_size: int) -> EncodedSections:
    values = np.asarray(ranks, dtype=np.int64).ravel()
    if values.size and values.min() < 0:
        raise ValidationError("ranks must be non-negative")
    return encode_indices(values, block_size)


def decode_rank_metadata(sections: EncodedSections, count: int, block_size: int) -> np.ndarray:
    ranks = decode_indices(sections, count, block_size)
    if ranks.size and ranks.min() < 0:
        raise CorruptStreamError("negative rank decoded", section="ranks")
    return ranks.astype(np.int64)
