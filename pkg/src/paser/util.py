import os
from enum import StrEnum

import numpy as np


class EnvKey(StrEnum):
    """Environment Keys"""

    # Kernel precision used by graphs built without an explicit dtype
    FLOAT_MODE = "PASER_FLOAT_MODE"


class FloatMode(StrEnum):
    F32 = "f32"
    F64 = "f64"


def get_env(key: EnvKey, default: str) -> str:
    """Retrieves the provided environment variable, falling back to a default."""
    return os.getenv(key.value, default)


def float_dtype() -> np.dtype:
    """Resolve the floating point dtype selected by PASER_FLOAT_MODE.

    Raises:
        ValueError: If the variable holds anything other than f32 or f64
    """
    raw = get_env(EnvKey.FLOAT_MODE, FloatMode.F32).strip().lower()
    try:
        mode = FloatMode(raw)
    except ValueError as e:
        raise ValueError(
            f"Environment variable '{EnvKey.FLOAT_MODE.value}' must be f32 or f64, "
            f"got '{raw}'"
        ) from e
    return np.dtype(np.float64 if mode is FloatMode.F64 else np.float32)
