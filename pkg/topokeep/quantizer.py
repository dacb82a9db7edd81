import math

import numpy as np

from .errors import QuantizationOverflowError, ValidationError

INDEX_MIN = -(2**31) + 1
INDEX_MAX = 2**31 - 1


def _check_eps(eps: float) -> None:
    if not (eps > 0) or not math.isfinite(eps):
        raise ValidationError(f"error bound must be positive and finite, got {eps}")


# bin q covers [(2q - 2) * eps, 2q * eps) and decodes to its center q * 2 * eps - eps
def quantize(a: float, eps: float) -> int:
    _check_eps(eps)
    if not math.isfinite(a):
        raise ValidationError(f"cannot quantize non-finite value {a}")
    q = math.floor(float(a) / (2.0 * eps)) + 1
    if not INDEX_MIN <= q <= INDEX_MAX:
        raise QuantizationOverflowError(
            f"bin index {q} for {a} overflows 32 bits; eps={eps} is too small for the data"
        )
    return q


def dequantize(q: int, eps: float) -> float:
    _check_eps(eps)
    return q * (2.0 * eps) - eps


def quantize_array(values: np.ndarray, eps: float) -> np.ndarray:
    _check_eps(eps)
    bins = np.floor(np.asarray(values, dtype=np.float64) / (2.0 * eps)) + 1.0
    if bins.size:
        lo, hi = bins.min(), bins.max()
        if lo < INDEX_MIN or hi > INDEX_MAX:
            raise QuantizationOverflowError(
                f"bin indices span [{lo:.0f}, {hi:.0f}], outside 32 bits; "
                f"eps={eps} is too small for the data range"
            )
    return bins.astype(np.int32)


def dequantize_array(bins: np.ndarray, eps: float) -> np.ndarray:
    _check_eps(eps)
    return np.asarray(bins, dtype=np.float64) * (2.0 * eps) - eps


def reconstruct(bins: np.ndarray, eps: float) -> np.ndarray:
    """Bin centers materialized as binary32 samples."""
    return dequantize_array(bins, eps).astype(np.float32)
