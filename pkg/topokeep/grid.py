import logging
import math
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _io
from .errors import DimensionError, ValidationError

logger = logging.getLogger(__name__)

RAW_DTYPE = np.dtype("<f4")

SyntheticKind = t.Literal["gaussian-mixture", "sinusoid", "ramp", "random-uniform"]
SYNTHETIC_KINDS: tuple[str, ...] = t.get_args(SyntheticKind)


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    """An immutable ``ny`` x ``nx`` grid of finite binary32 samples."""

    nx: int
    ny: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise DimensionError(f"field dimensions must be >= 1, got {self.nx}x{self.ny}")
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.size != self.nx * self.ny:
            raise DimensionError(
                f"expected {self.nx * self.ny} samples for {self.nx}x{self.ny}, got {values.size}"
            )
        values = values.reshape(self.ny, self.nx)
        finite = np.isfinite(values)
        if not finite.all():
            index = int(np.flatnonzero(~finite.ravel())[0])
            raise ValidationError(f"non-finite sample at index {index}", index=index)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ScalarField2D":
        array = np.asarray(array)
        if array.ndim != 2:
            raise DimensionError(f"expected a 2D array, got shape {array.shape}")
        with np.errstate(over="ignore"):
            values = array.astype(np.float32)
        return cls(nx=array.shape[1], ny=array.shape[0], values=values)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def nbytes(self) -> int:
        return self.size * RAW_DTYPE.itemsize

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def value_range(self) -> float:
        return float(self.values.max()) - float(self.values.min())

    def identical(self, other: "ScalarField2D") -> bool:
        """Bit-for-bit equality, so ``-0.0`` and ``0.0`` differ."""
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
        )


# little-endian binary32, row-major, no header
def load_raw(path: str | Path, nx: int, ny: int) -> ScalarField2D:
    if nx < 1 or ny < 1:
        raise DimensionError(f"field dimensions must be >= 1, got {nx}x{ny}")
    data = _io.read_bytes(path)
    expected = nx * ny * RAW_DTYPE.itemsize
    if len(data) != expected:
        raise DimensionError(
            f"{path}: {len(data)} bytes does not match {nx}x{ny} binary32 ({expected} bytes)"
        )
    values = np.frombuffer(data, dtype=RAW_DTYPE).reshape(ny, nx)
    return ScalarField2D(nx=nx, ny=ny, values=values)


def store_raw(field: ScalarField2D, path: str | Path) -> None:
    _io.write_bytes(path, field.values.astype(RAW_DTYPE).tobytes())


@dataclass(frozen=True, eq=False)
class SyntheticField:
    field: ScalarField2D
    kind: str
    seed: int
    params: tuple[float, ...]
    lipschitz: float | None

    def sidecar(self) -> dict[str, t.Any]:
        return {
            "kind": self.kind,
            "nx": self.field.nx,
            "ny": self.field.ny,
            "seed": self.seed,
            "params": list(self.params),
            "lipschitz": self.lipschitz,
        }


def _with_defaults(kind: str, params: t.Sequence[float], defaults: t.Sequence[float]):
    if len(params) > len(defaults):
        raise ValidationError(
            f"{kind} takes at most {len(defaults)} params, got {len(params)}"
        )
    merged = [float(p) for p in params] + [float(d) for d in defaults[len(params):]]
    if not all(math.isfinite(p) for p in merged):
        raise ValidationError(f"{kind} params must be finite, got {merged}")
    return merged


def _gaussian_mixture(x, y, rng, params):
    count, amplitude, sigma_min, sigma_max = _with_defaults(
        "gaussian-mixture", params, (4, 1.0, 2.0, 6.0)
    )
    if count < 1 or count != int(count):
        raise ValidationError(f"gaussian-mixture needs a positive integer count, got {count}")
    if amplitude < 0 or sigma_min <= 0 or sigma_max < sigma_min:
        raise ValidationError(
            "gaussian-mixture needs amplitude >= 0 and 0 < sigma_min <= sigma_max"
        )
    count = int(count)
    ny, nx = x.shape
    cx = rng.uniform(0.0, nx, count)
    cy = rng.uniform(0.0, ny, count)
    amps = rng.uniform(-amplitude, amplitude, count)
    sigmas = rng.uniform(sigma_min, sigma_max, count)

    values = np.zeros_like(x)
    for a, s, px, py in zip(amps, sigmas, cx, cy):
        values += a * np.exp(-((x - px) ** 2 + (y - py) ** 2) / (2.0 * s * s))
    # max |grad| of a*exp(-r^2/2s^2) is |a| / (s * sqrt(e))
    lipschitz = float(np.sum(np.abs(amps) / (sigmas * math.sqrt(math.e))))
    return values, lipschitz


def _sinusoid(x, y, rng, params):
    (amplitude,) = _with_defaults("sinusoid", params, (1.0,))
    ny, nx = x.shape
    values = amplitude * np.sin(2.0 * np.pi * x / nx) * np.sin(2.0 * np.pi * y / ny)
    lipschitz = 2.0 * math.pi * abs(amplitude) * max(1.0 / nx, 1.0 / ny) * math.sqrt(2.0)
    return values, lipschitz


def _ramp(x, y, rng, params):
    slope_x, slope_y, offset = _with_defaults("ramp", params, (1.0, 0.0, 0.0))
    values = offset + slope_x * x + slope_y * y
    return values, math.hypot(slope_x, slope_y)


def _random_uniform(x, y, rng, params):
    low, high = _with_defaults("random-uniform", params, (-1.0, 1.0))
    if high < low:
        raise ValidationError(f"random-uniform needs low <= high, got {low} > {high}")
    return rng.uniform(low, high, x.shape), None


_GENERATORS = {
    "gaussian-mixture": _gaussian_mixture,
    "sinusoid": _sinusoid,
    "ramp": _ramp,
    "random-uniform": _random_uniform,
}


def generate_synthetic(
    kind: SyntheticKind,
    nx: int,
    ny: int,
    seed: int = 0,
    params: t.Sequence[float] = (),
) -> SyntheticField:
    try:
        generator = _GENERATORS[kind]
    except KeyError:
        raise ValidationError(
            f"unknown synthetic kind {kind!r}; expected one of {', '.join(SYNTHETIC_KINDS)}"
        ) from None
    if nx < 1 or ny < 1:
        raise DimensionError(f"field dimensions must be >= 1, got {nx}x{ny}")

    rng = np.random.default_rng(seed & 0xFFFF_FFFF_FFFF_FFFF)
    x, y = np.meshgrid(np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64))
    values, lipschitz = generator(x, y, rng, params)
    try:
        field = ScalarField2D.from_array(values)
    except ValidationError as e:
        raise ValidationError(f"{kind} params overflow binary32: {e}", index=e.index) from e

    logger.debug("generated %s %dx%d seed=%d lipschitz=%s", kind, nx, ny, seed, lipschitz)
    return SyntheticField(
        field=field,
        kind=kind,
        seed=seed,
        params=tuple(float(p) for p in params),
        lipschitz=lipschitz,
    )
