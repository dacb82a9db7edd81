from enum import Enum, auto


class AutoName(Enum):
    @staticmethod
    def _generate_next_value_(name, start, count, last_values):
        return name


class KebabName(str, Enum):
    @staticmethod
    def _generate_next_value_(name, start, count, last_values):
        return name.lower().replace("_", "-")

    def __str__(self) -> str:
        return self.value


class RunState(AutoName):
    PENDING = auto()
    RUNNING = auto()
    COMPLETED = auto()
    FAILED = auto()


class Stage(KebabName):
    CRITICAL_POINTS = auto()
    RANKS = auto()
    QUANTIZE = auto()
    ENCODE = auto()
    DECODE = auto()
    DEQUANTIZE = auto()
    METADATA = auto()
    EXTREMA_STENCIL = auto()
    ORDER_RESTORE = auto()
    RBF_SADDLE = auto()


# the subset of stages that move reconstructed values
CORRECTION_STAGES = (Stage.EXTREMA_STENCIL, Stage.ORDER_RESTORE, Stage.RBF_SADDLE)


class RevertReason(KebabName):
    WOULD_CREATE_FP = auto()
    WOULD_CREATE_FT = auto()
    WOULD_CREATE_FN = auto()
    EXCEEDS_TOLERANCE = auto()
    NEIGHBORS_COLLAPSED = auto()
    NO_SIGN_CHANGE = auto()
