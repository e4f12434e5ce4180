"""Channel-major tensor containers mirroring the accelerator's SRAM layout.

Feature maps are stored as a flat int16 array holding channel 0's
row-major plane first, then channel 1, and so on — the same byte order
the on-chip feature memories use, so flat indices double as SRAM
addresses. Kernels are stored (out, in, row, col).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fxp
from .errors import ConfigError

CHANNEL_GROUP = 8  # features per 128-bit port read


def feature_address(ch: int, row: int, col: int, rows: int, cols: int) -> int:
    """Flat storage index of feature (ch, row, col) in a rows x cols plane."""
    if row < 0 or row >= rows or col < 0 or col >= cols or ch < 0:
        raise IndexError(f"feature index ({ch},{row},{col}) out of bounds")
    return ch * rows * cols + row * cols + col


class FeatureMap:
    """Multi-channel 2D feature tensor of Q4.12 raw words."""

    __slots__ = ("channels", "rows", "cols", "data")

    def __init__(self, channels: int, rows: int, cols: int, data=None):
        if channels < 1 or rows < 1 or cols < 1:
            raise ConfigError("feature map dimensions must be >= 1")
        self.channels = channels
        self.rows = rows
        self.cols = cols
        n = channels * rows * cols
        if data is None:
            self.data = np.zeros(n, dtype=np.int16)
        else:
            data = np.asarray(data, dtype=np.int16).reshape(-1)
            if data.size != n:
                raise ConfigError(
                    f"feature data has {data.size} values, expected {n}")
            self.data = data

    @classmethod
    def from_real(cls, values) -> "FeatureMap":
        """Quantize a float (channels, rows, cols) array."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 3:
            raise ConfigError("expected a (channels, rows, cols) array")
        return cls(*arr.shape, data=fxp.encode_array(arr).reshape(-1))

    def to_real(self) -> np.ndarray:
        return fxp.decode_array(self.data).reshape(self.channels, self.rows, self.cols)

    def view3d(self) -> np.ndarray:
        """(channels, rows, cols) view sharing storage."""
        return self.data.reshape(self.channels, self.rows, self.cols)

    def at(self, ch: int, row: int, col: int) -> int:
        if ch >= self.channels:
            raise IndexError(f"channel {ch} out of bounds")
        return int(self.data[feature_address(ch, row, col, self.rows, self.cols)])

    @property
    def nbytes(self) -> int:
        return self.data.size * 2

    def copy(self) -> "FeatureMap":
        return FeatureMap(self.channels, self.rows, self.cols, self.data.copy())

    def __repr__(self):
        return f"FeatureMap({self.channels}x{self.rows}x{self.cols})"


class KernelTensor:
    """4D conv kernel / dense weight matrix of Q4.12 raw words.

    Dense weights reuse this container with (out_channels=n outputs,
    in_channels x k_rows x k_cols = flattened input length), so that
    the dense dataflow shares the conv address arithmetic.
    """

    __slots__ = ("out_channels", "in_channels", "k_rows", "k_cols", "data")

    def __init__(self, out_channels: int, in_channels: int, k_rows: int,
                 k_cols: int, data=None):
        if min(out_channels, in_channels, k_rows, k_cols) < 1:
            raise ConfigError("kernel dimensions must be >= 1")
        self.out_channels = out_channels
        self.in_channels = in_channels
        self.k_rows = k_rows
        self.k_cols = k_cols
        n = out_channels * in_channels * k_rows * k_cols
        if data is None:
            self.data = np.zeros(n, dtype=np.int16)
        else:
            data = np.asarray(data, dtype=np.int16).reshape(-1)
            if data.size != n:
                raise ConfigError(
                    f"kernel data has {data.size} values, expected {n}")
            self.data = data

    @classmethod
    def from_real(cls, values) -> "KernelTensor":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 4:
            raise ConfigError("expected a (out, in, k_rows, k_cols) array")
        return cls(*arr.shape, data=fxp.encode_array(arr).reshape(-1))

    def to_real(self) -> np.ndarray:
        return fxp.decode_array(self.data).reshape(
            self.out_channels, self.in_channels, self.k_rows, self.k_cols)

    def view4d(self) -> np.ndarray:
        return self.data.reshape(self.out_channels, self.in_channels,
                                 self.k_rows, self.k_cols)

    def as_matrix(self) -> np.ndarray:
        """(out_channels, in*k_rows*k_cols) view for the dense dataflow."""
        return self.data.reshape(self.out_channels, -1)

    @property
    def nbytes(self) -> int:
        return self.data.size * 2

    def copy(self) -> "KernelTensor":
        return KernelTensor(self.out_channels, self.in_channels,
                            self.k_rows, self.k_cols, self.data.copy())

    def __repr__(self):
        return (f"KernelTensor({self.out_channels}x{self.in_channels}"
                f"x{self.k_rows}x{self.k_cols})")


@dataclass(frozen=True)
class ConvLayerSpec:
    """Shape and sliding-window parameters of one conv layer."""

    in_channels: int
    out_channels: int
    rows: int
    cols: int
    stride: int = 1
    pad: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.pad < 0:
            raise ConfigError("pad must be >= 0")
        if min(self.in_channels, self.out_channels, self.rows, self.cols) < 1:
            raise ConfigError("layer dimensions must be >= 1")


def pad_channels(fm: FeatureMap, multiple: int = CHANNEL_GROUP) -> FeatureMap:
    """Append zero-valued channels until the count is a multiple of 8.

    Returns the map unchanged when already aligned, so every 128-bit
    port read is well defined without copying in the common case.
    """
    rem = fm.channels % multiple
    if rem == 0:
        return fm
    extra = multiple - rem
    padded = np.concatenate(
        [fm.data, np.zeros(extra * fm.rows * fm.cols, dtype=np.int16)])
    return FeatureMap(fm.channels + extra, fm.rows, fm.cols, padded)


def channel_group_read(fm: FeatureMap, group: int, row: int, col: int) -> np.ndarray:
    """One 128-bit port read: 8 consecutive channels at (row, col)."""
    lo = group * CHANNEL_GROUP
    if group < 0 or lo + CHANNEL_GROUP > fm.channels:
        raise IndexError(f"channel group {group} out of range")
    return fm.view3d()[lo:lo + CHANNEL_GROUP, row, col].copy()


def flatten(fm: FeatureMap) -> np.ndarray:
    """Channel-major flattening, identical to the storage byte order."""
    return fm.data.copy()
