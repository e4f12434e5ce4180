"""Q4.12 saturating fixed-point arithmetic.

All datapath values are 16-bit two's-complement words interpreted as
raw / 2**12 (4 integer bits including sign, 12 fractional bits).
Products of two such words are held exactly in a 32-bit accumulator at
scale 2**-24; accumulator additions saturate at the 32-bit bounds, and
the final reduction back to 16 bits rounds to nearest with ties away
from zero before saturating again.

Scalar operations work on plain Python ints carrying the raw values;
the ``*_array`` helpers operate on numpy arrays (int16 raw words in,
int16 out). Saturating operations optionally take a :class:`SatCounter`
so callers can observe clipping events.
"""

from __future__ import annotations

import math

import numpy as np

FRAC_BITS = 12
SCALE = 1 << FRAC_BITS  # 4096

FXP_MIN = -(1 << 15)
FXP_MAX = (1 << 15) - 1

ACC_FRAC_BITS = 24  # scale of a product of two Q4.12 words
ACC_MIN = -(1 << 31)
ACC_MAX = (1 << 31) - 1

REDUCE_SHIFT = ACC_FRAC_BITS - FRAC_BITS  # 12
_REDUCE_HALF = 1 << (REDUCE_SHIFT - 1)  # rounding offset, 2048

FXP_ONE = SCALE  # raw pattern of +1.0


class SatCounter:
    """Mutable counter of saturation (clipping) events."""

    __slots__ = ("events",)

    def __init__(self, events: int = 0):
        self.events = events

    def __repr__(self):
        return f"SatCounter(events={self.events})"


def encode(value: float) -> int:
    """Quantize a real value to the nearest Q4.12 raw word.

    Ties round away from zero; values outside [-8.0, 8.0 - 2**-12]
    saturate to the nearest bound. Non-finite input raises ValueError.
    """
    if not math.isfinite(value):
        raise ValueError(f"cannot encode non-finite value {value!r}")
    t = value * SCALE  # exact: power-of-two scale
    r = math.floor(t + 0.5) if t >= 0.0 else math.ceil(t - 0.5)
    if r > FXP_MAX:
        return FXP_MAX
    if r < FXP_MIN:
        return FXP_MIN
    return int(r)


def decode(raw: int) -> float:
    """Real value of a Q4.12 raw word (exact in double precision)."""
    return raw / SCALE


def mul(a: int, b: int) -> int:
    """Exact product of two Q4.12 words at accumulator scale 2**-24.

    The widest case (-8.0 * -8.0) fits in 31 bits, so this never
    saturates.
    """
    return a * b


def acc_add(a: int, b: int, counter: SatCounter | None = None) -> int:
    """Saturating 32-bit accumulator addition."""
    s = a + b
    if s > ACC_MAX:
        if counter is not None:
            counter.events += 1
        return ACC_MAX
    if s < ACC_MIN:
        if counter is not None:
            counter.events += 1
        return ACC_MIN
    return s


def reduce_acc(acc: int, counter: SatCounter | None = None) -> int:
    """Reduce an accumulator word to Q4.12.

    Rescales from 2**-24 to 2**-12 rounding to nearest (ties away from
    zero), then saturates to the 16-bit range.
    """
    if acc >= 0:
        r = (acc + _REDUCE_HALF) >> REDUCE_SHIFT
    else:
        r = -((-acc + _REDUCE_HALF) >> REDUCE_SHIFT)
    if r > FXP_MAX:
        if counter is not None:
            counter.events += 1
        return FXP_MAX
    if r < FXP_MIN:
        if counter is not None:
            counter.events += 1
        return FXP_MIN
    return r


def tree_sum8(products: "list[int]", counter: SatCounter | None = None) -> int:
    """Balanced adder tree over 8 accumulator words.

    Evaluation order is fixed as (0+1),(2+3),(4+5),(6+7) then pairwise;
    saturation makes the order observable, so it is part of the
    contract.
    """
    s0 = acc_add(products[0], products[1], counter)
    s1 = acc_add(products[2], products[3], counter)
    s2 = acc_add(products[4], products[5], counter)
    s3 = acc_add(products[6], products[7], counter)
    return acc_add(acc_add(s0, s1, counter), acc_add(s2, s3, counter), counter)


def encode_array(values) -> np.ndarray:
    """Vectorized :func:`encode`; returns int16 raw words."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot encode non-finite values")
    t = arr * SCALE
    r = np.where(t >= 0.0, np.floor(t + 0.5), np.ceil(t - 0.5))
    return np.clip(r, FXP_MIN, FXP_MAX).astype(np.int16)


def decode_array(raw) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / SCALE


def reduce_acc_array(acc, counter: SatCounter | None = None) -> np.ndarray:
    """Vectorized :func:`reduce_acc` on int64 accumulator words."""
    acc = np.asarray(acc, dtype=np.int64)
    r = np.where(acc >= 0, (acc + _REDUCE_HALF) >> REDUCE_SHIFT,
                 -((-acc + _REDUCE_HALF) >> REDUCE_SHIFT))
    if counter is not None:
        counter.events += int(np.count_nonzero((r > FXP_MAX) | (r < FXP_MIN)))
    return np.clip(r, FXP_MIN, FXP_MAX).astype(np.int16)


def weight_update_array(weights, grads, lr_raw: int,
                        counter: SatCounter | None = None) -> np.ndarray:
    """w <- w - lr*g on raw int16 arrays, saturating at both stages.

    The step lr*g is an exact product reduced back to Q4.12; the
    subtraction saturates at the 16-bit bounds. With lr == 1.0 the
    update is exactly w - g.
    """
    w = np.asarray(weights, dtype=np.int64)
    g = np.asarray(grads, dtype=np.int64)
    step = reduce_acc_array(g * int(lr_raw), counter).astype(np.int64)
    out = w - step
    if counter is not None:
        counter.events += int(np.count_nonzero((out > FXP_MAX) | (out < FXP_MIN)))
    return np.clip(out, FXP_MIN, FXP_MAX).astype(np.int16)
