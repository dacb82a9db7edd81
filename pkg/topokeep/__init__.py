from .config import CompressorConfig
from .container import CompressedStream, read_stream, stream_stats, write_stream
from .context import RunContext, get_this_run
from .grid import ScalarField2D, generate_synthetic, load_raw, store_raw
from .pipeline import (
    acompress,
    adecompress,
    adecompress_detailed,
    aevaluate,
    compress,
    decompress,
    evaluate,
    verify,
)
from .topology import CriticalPointClass, count_false_cases, detect_critical_points

__all__ = (
    "acompress",
    "adecompress",
    "adecompress_detailed",
    "aevaluate",
    "compress",
    "CompressedStream",
    "CompressorConfig",
    "count_false_cases",
    "CriticalPointClass",
    "decompress",
    "detect_critical_points",
    "evaluate",
    "generate_synthetic",
    "get_this_run",
    "load_raw",
    "read_stream",
    "RunContext",
    "ScalarField2D",
    "store_raw",
    "stream_stats",
    "verify",
    "write_stream",
)
