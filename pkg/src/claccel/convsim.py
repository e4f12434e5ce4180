"""The three convolutional dataflows on the MAC array.

All passes visit output pixels in a snake pattern: the column counter
runs left-to-right, is held at the row end while the row advances, then
runs right-to-left, so 6 of the 9 sliding-window features are reused on
every step and only 3 fresh features (per 8-channel group) are fetched.

One output value is produced per cycle, giving
``out_rows * out_cols * out_channels * ceil(in_channels/8)`` cycles for
the forward pass; the backward passes are costed with the same formula
(which reproduces the reference design's measured 8,192-cycle passes
for the 32x32x8, 8-filter layer).

Value semantics are bit-exact Q4.12 (see :mod:`claccel.fxp`); the
number crunching itself is dispatched whole-pass to
:mod:`claccel.kernels`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels, memsys
from .errors import ConfigError
from .memsys import MemKind, MemorySystem
from .pu import PuArray
from .tensors import ConvLayerSpec, FeatureMap, KernelTensor, pad_channels

FIRST_WINDOW_FETCHES = 9
STEADY_FETCHES = 3


class Direction(enum.Enum):
    LEFT_TO_RIGHT = 1
    RIGHT_TO_LEFT = -1


@dataclass(frozen=True)
class SnakeCursor:
    """Position of the sliding window within one walk over the output.

    ``row == -1`` marks the parked state before the walk's first window.
    A walk covers one (output channel, input channel group) pair;
    ``out_channel_group`` counts completed walks.
    """

    row: int = -1
    col: int = 0
    direction: Direction = Direction.LEFT_TO_RIGHT
    out_channel_group: int = 0


def snake_step(cursor: SnakeCursor, spec: ConvLayerSpec):
    """Advance the snake by one output pixel.

    Returns (next_cursor, fresh_fetches): 9 fetches entering the first
    window, 3 at steady state, 3 at a row turn (6 of 9 reused). At the
    end of the matrix the cursor parks before the next walk and no
    fetch is issued.
    """
    if cursor.row < 0:
        return SnakeCursor(0, 0, Direction.LEFT_TO_RIGHT,
                           cursor.out_channel_group), FIRST_WINDOW_FETCHES
    nxt = cursor.col + cursor.direction.value
    if 0 <= nxt < spec.cols:
        return SnakeCursor(cursor.row, nxt, cursor.direction,
                           cursor.out_channel_group), STEADY_FETCHES
    if cursor.row + 1 >= spec.rows:
        return SnakeCursor(-1, 0, Direction.LEFT_TO_RIGHT,
                           cursor.out_channel_group + 1), 0
    flipped = (Direction.RIGHT_TO_LEFT
               if cursor.direction is Direction.LEFT_TO_RIGHT
               else Direction.LEFT_TO_RIGHT)
    return SnakeCursor(cursor.row + 1, cursor.col, flipped,
                       cursor.out_channel_group), STEADY_FETCHES


def snake_order(rows: int, cols: int) -> np.ndarray:
    """Flat output-pixel indices in snake visit order."""
    grid = np.arange(rows * cols, dtype=np.int64).reshape(rows, cols)
    grid[1::2] = grid[1::2, ::-1]
    return grid.reshape(-1)


def walk_fetch_total(rows: int, cols: int) -> int:
    """Fresh window fetches over one full walk: 9 + 3*(rows*cols - 1)."""
    return FIRST_WINDOW_FETCHES + STEADY_FETCHES * (rows * cols - 1)


@dataclass
class ConvCycleModel:
    """Per-device counters for the three conv pass kinds."""

    cycles_forward: int = 0
    cycles_kgrad: int = 0
    cycles_gprop: int = 0
    mem_fetches: int = 0


def _check_hardware_window(spec: ConvLayerSpec) -> None:
    if spec.stride != 1:
        raise ConfigError(
            "the hardware dataflow supports stride 1 only; strided shapes "
            "are available in the reference (oracle) implementations")
    if spec.pad != 1:
        raise ConfigError("the hardware dataflow uses fixed 'same' padding (pad=1)")


def _account_window_pass(mem: MemorySystem, rows: int, cols: int, walks: int,
                         feature_kind: MemKind, out_kind: MemKind,
                         cycles: int, extra_read_kind: MemKind | None = None):
    """Memory traffic of one snake pass, aggregated in O(1).

    Per walk the start window (9 fetches) is prefetched over 3 slots of
    3 transactions, then every steady step fetches 3 features of 8
    channels; the kernel words for the walk are loaded once.
    """
    feat = mem[feature_kind]
    slots = walks * (3 + rows * cols - 1)
    memsys.account_streamed(feat, slots, STEADY_FETCHES * 8)
    memsys.account_streamed(mem[MemKind.KERNEL], walks, 72)
    if extra_read_kind is not None:
        memsys.account_streamed(mem[extra_read_kind], cycles, 1)
    memsys.account_streamed(mem[out_kind], cycles, 1, is_write=True)


def _forward_dataflow(features: FeatureMap, kern: KernelTensor,
                      spec: ConvLayerSpec, pu: PuArray,
                      mem: MemorySystem | None,
                      feature_kind: MemKind, out_kind: MemKind):
    fm = pad_channels(features)
    if kern.k_rows != 3 or kern.k_cols != 3:
        raise ConfigError("the MAC array computes 3x3 windows only")
    if kern.in_channels != fm.channels:
        raise ConfigError(
            f"kernel expects {kern.in_channels} input channels, "
            f"feature map has {fm.channels} (after padding)")
    if (fm.rows, fm.cols) != (spec.rows, spec.cols):
        raise ConfigError(
            f"feature map is {fm.rows}x{fm.cols}, layer expects "
            f"{spec.rows}x{spec.cols}")
    groups = fm.channels // 8
    vpad = np.pad(fm.view3d(), ((0, 0), (1, 1), (1, 1)))
    out = np.empty((kern.out_channels, fm.rows, fm.cols), dtype=np.int16)
    events = kernels.conv_forward_raw(np.ascontiguousarray(vpad),
                                      kern.view4d(), out)
    pu.add_kernel_events(events)
    cycles = fm.rows * fm.cols * kern.out_channels * groups
    walks = kern.out_channels * groups
    if mem is not None:
        _account_window_pass(mem, fm.rows, fm.cols, walks,
                             feature_kind, out_kind, cycles)
    zmap = FeatureMap(kern.out_channels, fm.rows, fm.cols, out.reshape(-1))
    return zmap, cycles, walks


def conv_forward(features: FeatureMap, kern: KernelTensor,
                 spec: ConvLayerSpec, pu: PuArray,
                 mem: MemorySystem | None = None,
                 stats: ConvCycleModel | None = None):
    """Forward convolution; returns (output map, cycles)."""
    _check_hardware_window(spec)
    if kern.out_channels != spec.out_channels:
        raise ConfigError(
            f"kernel has {kern.out_channels} filters, layer expects "
            f"{spec.out_channels}")
    zmap, cycles, walks = _forward_dataflow(
        features, kern, spec, pu, mem,
        MemKind.PARTIAL_FEATURE, MemKind.PARTIAL_FEATURE)
    if stats is not None:
        stats.cycles_forward += cycles
        stats.mem_fetches += walks * walk_fetch_total(spec.rows, spec.cols)
    return zmap, cycles


def conv_gradient_propagation(out_grad: FeatureMap, kern: KernelTensor,
                              spec: ConvLayerSpec, pu: PuArray,
                              mem: MemorySystem | None = None,
                              stats: ConvCycleModel | None = None):
    """Propagate the output gradient to the layer input.

    Runs the forward snake dataflow on the gradient with the kernel
    swapped in its in/out channel axes and spatially flipped, which is
    the adjoint of the same-padded forward pass. Bit-for-bit equal to
    ``conv_forward`` on that transformed kernel.
    """
    _check_hardware_window(spec)
    if out_grad.channels != spec.out_channels:
        raise ConfigError(
            f"gradient has {out_grad.channels} channels, layer expects "
            f"{spec.out_channels}")
    gpad = pad_channels(out_grad)
    k4 = kern.view4d()
    swapped = np.ascontiguousarray(
        k4.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    if swapped.shape[1] < gpad.channels:
        extra = gpad.channels - swapped.shape[1]
        swapped = np.concatenate(
            [swapped, np.zeros((swapped.shape[0], extra, 3, 3), np.int16)],
            axis=1)
    kt = KernelTensor(swapped.shape[0], swapped.shape[1], 3, 3,
                      swapped.reshape(-1))
    gspec = ConvLayerSpec(gpad.channels, kt.out_channels,
                          spec.rows, spec.cols, spec.stride, spec.pad)
    if mem is not None:
        feature_kind, out_kind = mem.pingpong.read_side, mem.pingpong.write_side
    else:
        feature_kind = out_kind = MemKind.PARTIAL_FEATURE
    dv, cycles, walks = _forward_dataflow(
        gpad, kt, gspec, pu, mem, feature_kind, out_kind)
    if stats is not None:
        stats.cycles_gprop += cycles
        stats.mem_fetches += walks * walk_fetch_total(spec.rows, spec.cols)
    return dv, cycles


def conv_kernel_gradient(out_grad: FeatureMap, features: FeatureMap,
                         spec: ConvLayerSpec, pu: PuArray,
                         mem: MemorySystem | None = None,
                         stats: ConvCycleModel | None = None):
    """Gradient of the kernel; returns (gradient tensor, cycles).

    The stored forward input is zero-padded by one stripe on every
    border (two more rows and columns in total), aligning the nine
    shifted submatrices with the analytic gradient of the same-padded
    forward pass. MAC (k,l) accumulates tap (k,l), walking output
    pixels in snake order.
    """
    _check_hardware_window(spec)
    if out_grad.channels != spec.out_channels:
        raise ConfigError(
            f"gradient has {out_grad.channels} channels, layer expects "
            f"{spec.out_channels}")
    fm = pad_channels(features)
    if (out_grad.rows, out_grad.cols) != (fm.rows, fm.cols):
        raise ConfigError("gradient spatial size must match the layer output")
    groups = fm.channels // 8
    vpad = np.ascontiguousarray(np.pad(fm.view3d(), ((0, 0), (1, 1), (1, 1))))
    order = snake_order(fm.rows, fm.cols)
    dk = np.empty((out_grad.channels, fm.channels, 3, 3), dtype=np.int16)
    events = kernels.conv_kernel_grad_raw(out_grad.view3d(), vpad, order, dk)
    pu.add_kernel_events(events)
    cycles = fm.rows * fm.cols * out_grad.channels * groups
    walks = out_grad.channels * groups
    if mem is not None:
        _account_window_pass(mem, fm.rows, fm.cols, walks,
                             MemKind.PARTIAL_FEATURE, MemKind.KERNEL, cycles,
                             extra_read_kind=mem.pingpong.read_side)
    if stats is not None:
        stats.cycles_kgrad += cycles
        stats.mem_fetches += walks * walk_fetch_total(fm.rows, fm.cols)
    return KernelTensor(out_grad.channels, fm.channels, 3, 3,
                        dk.reshape(-1)), cycles
