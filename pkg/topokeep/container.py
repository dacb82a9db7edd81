"""The ``.tszp`` file: a fixed little-endian header followed by seven sections.

Header layout (84 bytes)::

    magic       4s   b"TSZP"
    version     u16
    flags       u16  bit 0: topology sections present
    nx, ny      u32  u32
    eps         f64  effective absolute error bound
    block_size  u32
    lengths     7 x u64, one per section

Sections, in order: the five codec sections of the bin-index stream, the
packed critical-point map and the codec-encoded rank metadata.
"""
import logging
import math
import struct
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

from . import _io
from .codec import SECTION_NAMES as INDEX_SECTIONS
from .codec import EncodedSections
from .errors import (
    BadMagicError,
    CorruptStreamError,
    TruncatedStreamError,
    UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

MAGIC = b"TSZP"
FORMAT_VERSION = 1
FLAG_TOPOLOGY = 0x1
SUFFIX = ".tszp"

HEADER = struct.Struct("<4sHHIIdI7Q")
SECTION_NAMES = INDEX_SECTIONS + ("critical_points", "ranks")


@dataclass(frozen=True)
class CompressedStream:
    nx: int
    ny: int
    eps: float
    block_size: int
    indices: EncodedSections = field(repr=False)
    topology: bool = False
    critical_points: bytes = field(default=b"", repr=False)
    ranks: bytes = field(default=b"", repr=False)
    version: int = FORMAT_VERSION

    @property
    def flags(self) -> int:
        return FLAG_TOPOLOGY if self.topology else 0

    @property
    def sections(self) -> tuple[bytes, ...]:
        return tuple(getattr(self.indices, name) for name in INDEX_SECTIONS) + (
            self.critical_points,
            self.ranks,
        )

    @property
    def section_lengths(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sections)

    @property
    def nbytes(self) -> int:
        return HEADER.size + sum(self.section_lengths)

    @property
    def original_bytes(self) -> int:
        return 4 * self.nx * self.ny

    @property
    def side_channel_bytes(self) -> int:
        return len(self.critical_points) + len(self.ranks)

    def header_bytes(self) -> bytes:
        return HEADER.pack(
            MAGIC,
            self.version,
            self.flags,
            self.nx,
            self.ny,
            self.eps,
            self.block_size,
            *self.section_lengths,
        )

    def to_bytes(self) -> bytes:
        return self.header_bytes() + b"".join(self.sections)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CompressedStream":
        if len(blob) < len(MAGIC) and MAGIC.startswith(blob):
            raise TruncatedStreamError(f"{len(blob)} bytes is shorter than the header")
        if blob[:4] != MAGIC:
            raise BadMagicError(f"bad magic {bytes(blob[:4])!r}, expected {MAGIC!r}")
        if len(blob) < HEADER.size:
            raise TruncatedStreamError(
                f"{len(blob)} bytes is shorter than the {HEADER.size}-byte header"
            )

        magic, version, flags, nx, ny, eps, block_size, *lengths = HEADER.unpack_from(blob)
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"format version {version}, this reader supports {FORMAT_VERSION}"
            )
        if flags & ~FLAG_TOPOLOGY:
            raise CorruptStreamError(f"unknown flag bits {flags:#06x}", section="header")
        if nx < 1 or ny < 1:
            raise CorruptStreamError(f"bad dimensions {nx}x{ny}", section="header")
        if not (math.isfinite(eps) and eps > 0):
            raise CorruptStreamError(f"bad error bound {eps}", section="header")
        if block_size < 2:
            raise CorruptStreamError(f"bad block size {block_size}", section="header")

        declared = HEADER.size + sum(lengths)
        if declared > len(blob):
            raise TruncatedStreamError(
                f"sections declare {declared} bytes, file holds {len(blob)}"
            )
        if declared < len(blob):
            raise CorruptStreamError(
                f"{len(blob) - declared} bytes after the last section", section="ranks"
            )

        topology = bool(flags & FLAG_TOPOLOGY)
        map_len, rank_len = lengths[5], lengths[6]
        if topology and map_len != -(-nx * ny // 4):
            raise CorruptStreamError(
                f"{map_len} bytes for a {nx}x{ny} map", section="critical_points"
            )
        if not topology and (map_len or rank_len):
            raise CorruptStreamError(
                "topology sections present without the topology flag", section="header"
            )

        sections = []
        cursor = HEADER.size
        for length in lengths:
            sections.append(bytes(blob[cursor : cursor + length]))
            cursor += length

        return cls(
            nx=nx,
            ny=ny,
            eps=eps,
            block_size=block_size,
            indices=EncodedSections(*sections[:5]),
            topology=topology,
            critical_points=sections[5],
            ranks=sections[6],
            version=version,
        )


def write_stream(stream: CompressedStream, path: str | Path) -> None:
    _io.write_bytes(path, stream.to_bytes())
    logger.debug("wrote %s (%d bytes)", path, stream.nbytes)


def read_stream(path: str | Path) -> CompressedStream:
    return CompressedStream.from_bytes(_io.read_bytes(path))


def stream_stats(stream: CompressedStream) -> dict[str, t.Any]:
    compressed = stream.nbytes
    ratio = stream.original_bytes / compressed
    breakdown = {"header": HEADER.size}
    breakdown.update(zip(SECTION_NAMES, stream.section_lengths))
    return {
        "compressed_bytes": compressed,
        "original_bytes": stream.original_bytes,
        "compression_ratio": ratio,
        "bit_rate": 32.0 / ratio,
        "sections": breakdown,
    }


def header_info(stream: CompressedStream) -> dict[str, t.Any]:
    return {
        "magic": MAGIC.decode(),
        "version": stream.version,
        "flags": stream.flags,
        "topology": stream.topology,
        "nx": stream.nx,
        "ny": stream.ny,
        "eps": stream.eps,
        "block_size": stream.block_size,
    }
