"""Q7.8 signed 16-bit fixed-point emulation (1 sign, 7 integer, 8 fraction bits)."""

import numpy as np

FRACTION_BITS = 8
RESOLUTION = 2.0**-FRACTION_BITS
Q_MIN = -32768
Q_MAX = 32767
RANGE = (Q_MIN * RESOLUTION, Q_MAX * RESOLUTION)


def quantize_q7_8(x):
    """Round to the nearest multiple of 2**-8 (ties to even) and saturate.

    The dtype of floating inputs is preserved; Q7.8 values are exact in
    float32.
    """
    arr = np.asarray(x)
    dtype = arr.dtype if arr.dtype.kind == "f" else np.float64
    q = np.clip(np.rint(arr.astype(np.float64) * 256.0), Q_MIN, Q_MAX) / 256.0
    return q.astype(dtype)
