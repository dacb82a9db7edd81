"""Compress 2D binary32 fields while keeping their critical points."""
import argparse
import csv
import json
import logging
import sys
import typing as t
from pathlib import Path

import anyio

from . import _io
from .config import DEFAULT_BLOCK_SIZE, CompressorConfig
from .container import SUFFIX, header_info, read_stream, stream_stats, write_stream
from .context import RunContext
from .errors import TopokeepError
from .grid import SYNTHETIC_KINDS, generate_synthetic, load_raw, store_raw
from .pipeline import adecompress_detailed, compress, evaluate, verify
from .topo_meta import unpack_map

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFY_FAILED = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> t.NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0 or value == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return value


def _non_negative(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _count(minimum: int):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value

    return parse


def _emit_json(payload: t.Any) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _emit_csv(rows: list[dict[str, t.Any]]) -> None:
    fieldnames = list(dict.fromkeys(key for row in rows for key in row))
    writer = csv.DictWriter(sys.stdout, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)


def _config(args: argparse.Namespace, topology: bool = True) -> CompressorConfig:
    extra = {} if args.threads is None else {"threads": args.threads}
    if args.rel_eb is not None:
        eps_value, mode = args.rel_eb, "range-relative"
    else:
        eps_value, mode = args.eb, "absolute"
    return CompressorConfig(
        eps_value=eps_value,
        eps_mode=mode,
        block_size=args.block,
        topology=topology,
        lipschitz_hint=getattr(args, "lipschitz", None),
        **extra,
    )


def cmd_compress(args: argparse.Namespace) -> int:
    field = load_raw(args.input, *args.dims)
    with RunContext(operation="compress") as ctx:
        stream = compress(field, _config(args, topology=not args.no_topology))
    output = args.output or Path(args.input).with_suffix(SUFFIX)
    write_stream(stream, output)
    _emit_json(
        {
            **stream_stats(stream),
            "eps": stream.eps,
            "output": str(output),
            "timings_ms": ctx.summary()["timings_ms"],
        }
    )
    return EXIT_OK


def cmd_decompress(args: argparse.Namespace) -> int:
    stream = read_stream(args.input)
    with RunContext(operation="decompress") as ctx:
        result = anyio.run(adecompress_detailed, stream, args.threads)
    store_raw(result.field, args.output)
    summary = ctx.summary()
    _emit_json(
        {
            "nx": stream.nx,
            "ny": stream.ny,
            "topology": stream.topology,
            "correction_stats": result.correction_stats(),
            "timings_ms": summary["timings_ms"],
        }
    )
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    stream = read_stream(args.stream) if args.stream else None
    eps = args.eb if args.eb is not None else stream.eps if stream else None
    if eps is None:
        raise UsageError("verify: --eb is required unless --stream is given")
    original = load_raw(args.original, *args.dims)
    reconstructed = load_raw(args.reconstructed, *args.dims)
    report = verify(original, reconstructed, eps, args.lipschitz, stream=stream)
    passed = report.passed(strict=args.strict)
    if args.format == "csv":
        _emit_csv([{**report.to_row(), "passed": passed}])
    else:
        _emit_json({**report.to_dict(), "passed": passed})
    if not passed:
        logger.warning(
            "verification failed: fp=%d ft=%d max error %g",
            report.fp, report.ft, report.max_abs_error,
        )
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    synthetic = generate_synthetic(args.kind, *args.dims, seed=args.seed, params=args.params)
    store_raw(synthetic.field, args.output)
    sidecar = Path(f"{args.output}.json")
    text = json.dumps(synthetic.sidecar(), indent=2, sort_keys=True) + "\n"
    _io.write_bytes(sidecar, text.encode())
    _emit_json({**synthetic.sidecar(), "output": str(args.output), "sidecar": str(sidecar)})
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    stream = read_stream(args.input)
    payload = {"header": header_info(stream), **stream_stats(stream)}
    if stream.topology:
        counts = unpack_map(stream.critical_points, stream.nx, stream.ny).counts()
        payload["critical_points"] = {cls.label: n for cls, n in counts.items()}
    _emit_json(payload)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    field = load_raw(args.input, *args.dims)
    report = evaluate(field, _config(args))
    if args.format == "csv":
        _emit_csv(report.rows())
    else:
        _emit_json(report.to_dict())
    return EXIT_OK


def _add_bound(parser: argparse.ArgumentParser, required: bool = True) -> None:
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument("--eb", type=_positive, help="absolute error bound")
    group.add_argument("--rel-eb", type=_positive, help="error bound relative to the value range")


def _add_dims(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dims", nargs=2, type=_count(1), metavar=("NX", "NY"), required=True)


def _add_threads(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=_count(1),
        default=None,
        help="worker threads (default: $TOPOKEEP_THREADS or all cores)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topokeep", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = commands.add_parser("compress", help="compress a raw binary32 field")
    p.add_argument("input")
    _add_dims(p)
    _add_bound(p)
    p.add_argument("--block", type=_count(2), default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--no-topology", action="store_true", help="plain error-bounded mode")
    _add_threads(p)
    p.add_argument(
        "-o", "--output", default=None, help=f"default: the input with a {SUFFIX} suffix"
    )
    p.set_defaults(func=cmd_compress)

    p = commands.add_parser("decompress", help="decompress a .tszp stream to raw binary32")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_decompress)

    p = commands.add_parser("verify", help="compare a reconstruction against its original")
    p.add_argument("original")
    p.add_argument("reconstructed")
    _add_dims(p)
    p.add_argument("--eb", type=_positive, default=None)
    p.add_argument("--lipschitz", type=_non_negative, default=None)
    p.add_argument("--stream", default=None, help="compressed stream, for ratio and bit rate")
    p.add_argument("--strict", action="store_true", help="require max error <= eb instead of 2*eb")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_verify)

    p = commands.add_parser("generate", help="write a synthetic field and its sidecar")
    p.add_argument("kind", choices=SYNTHETIC_KINDS)
    _add_dims(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", type=float, nargs="*", default=[])
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = commands.add_parser("inspect", help="print header fields and section sizes")
    p.add_argument("input")
    p.set_defaults(func=cmd_inspect)

    p = commands.add_parser("evaluate", help="compare plain and topology-aware modes on one field")
    p.add_argument("input")
    _add_dims(p)
    _add_bound(p)
    p.add_argument("--block", type=_count(2), default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--lipschitz", type=_non_negative, default=None)
    _add_threads(p)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: t.Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_ERROR

    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_ERROR
    except (TopokeepError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
