import logging
import typing as t
from dataclasses import dataclass, field

from .errors import ConfigError
from .pool import default_threads

if t.TYPE_CHECKING:
    from .grid import ScalarField2D

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 32
# largest RBF radius (k_size 7); used by the Lipschitz-relaxed bound
MAX_RBF_RADIUS = 3
# grid spacing, in grid units
GRID_SPACING = 1.0


EpsMode = t.Literal["absolute", "range-relative"]


@dataclass(frozen=True)
class CompressorConfig:
    eps_value: float
    eps_mode: EpsMode = "absolute"
    block_size: int = DEFAULT_BLOCK_SIZE
    topology: bool = True
    threads: int = field(default_factory=default_threads)
    lipschitz_hint: float | None = None

    def __post_init__(self):
        if not (self.eps_value > 0) or self.eps_value == float("inf"):
            raise ConfigError(f"eps_value must be a positive finite number, got {self.eps_value}")
        if self.eps_mode not in ("absolute", "range-relative"):
            raise ConfigError(f"unknown eps_mode {self.eps_mode!r}")
        if self.block_size < 2:
            raise ConfigError(f"block_size must be >= 2, got {self.block_size}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.lipschitz_hint is not None and not (self.lipschitz_hint >= 0):
            raise ConfigError(f"lipschitz_hint must be >= 0, got {self.lipschitz_hint}")

    def effective_eps(self, field: "ScalarField2D") -> float:
        if self.eps_mode == "absolute":
            return float(self.eps_value)

        value_range = field.value_range()
        if value_range == 0.0:
            logger.warning(
                "range-relative bound on a constant field; using eps_value=%g as absolute",
                self.eps_value,
            )
            return float(self.eps_value)
        return float(self.eps_value) * value_range
