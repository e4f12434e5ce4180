"""The three dense-layer dataflows on the shared MAC array.

The dense layer reuses the conv addressing: its weights are stored as a
4D tensor whose (in_channels, k_rows, k_cols) axes mirror the incoming
feature map, so the flattened input streams in storage order. Per
forward cycle 64 products (8 port reads of 8 values) are summed through
8 MAC trees and folded into the partial-sum register. The output count
is a runtime parameter — under continual learning it grows with the
class count.

Two cycle models are provided. ``calibrated`` (default) reproduces the
reference design's measured pass latencies (1,280 / 1,821 / 1,280 for
forward / weight gradient / gradient propagation on the 32x32x8 -> 10
shape). ``formula`` derives the counts from the dataflow descriptions
instead — it swaps the two backward numbers (the gradient propagation
iterates ceil(n/8) register steps on each of 9 MACs, the weight
gradient streams 64 inputs per cycle). Which model is active is
recorded in every report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, memsys
from .errors import ConfigError
from .memsys import MemKind, MemorySystem
from .pu import PuArray
from .tensors import FeatureMap, KernelTensor, flatten

CYCLE_MODELS = ("calibrated", "formula")


@dataclass(frozen=True)
class DenseLayerSpec:
    in_features: int
    out_features: int

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ConfigError("dense dimensions must be >= 1")


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _streamed_cycles(m: int, n: int) -> int:
    # 64 inputs per cycle, repeated for each of the n outputs.
    return _ceil_div(m, 64) * n


def _mac_iterative_cycles(m: int, n: int) -> int:
    # Each MAC owns one output feature and walks ceil(n/8) register
    # steps; the m features are spread over the 9 MACs.
    return _ceil_div(m * _ceil_div(n, 8), 9)


def dense_cycles(pass_kind: str, in_features: int, out_features: int,
                 cycle_model: str = "calibrated") -> int:
    """Cycle count of one dense pass under the selected model."""
    if cycle_model not in CYCLE_MODELS:
        raise ConfigError(f"unknown cycle model {cycle_model!r}")
    if pass_kind == "forward":
        return _streamed_cycles(in_features, out_features)
    if pass_kind == "gprop":
        if cycle_model == "calibrated":
            return _streamed_cycles(in_features, out_features)
        return _mac_iterative_cycles(in_features, out_features)
    if pass_kind == "wgrad":
        if cycle_model == "calibrated":
            return _mac_iterative_cycles(in_features, out_features)
        return _streamed_cycles(in_features, out_features)
    raise ConfigError(f"unknown dense pass {pass_kind!r}")


def _pad_to(arr: np.ndarray, size: int) -> np.ndarray:
    if arr.shape[0] == size:
        return arr
    out = np.zeros(size, dtype=np.int16)
    out[:arr.shape[0]] = arr
    return out


def _check_shapes(spec: DenseLayerSpec, weights: KernelTensor):
    wm = weights.as_matrix()
    if wm.shape != (spec.out_features, spec.in_features):
        raise ConfigError(
            f"weight matrix is {wm.shape}, layer expects "
            f"({spec.out_features}, {spec.in_features})")
    return wm


def dense_forward(features: FeatureMap, weights: KernelTensor,
                  spec: DenseLayerSpec, pu: PuArray,
                  mem: MemorySystem | None = None,
                  cycle_model: str = "calibrated"):
    """Dense forward pass; returns (output vector, cycles)."""
    ifeat = flatten(features)
    if ifeat.size != spec.in_features:
        raise ConfigError(
            f"flattened input has {ifeat.size} features, layer expects "
            f"{spec.in_features}")
    wm = _check_shapes(spec, weights)
    m64 = _ceil_div(spec.in_features, 64) * 64
    ipad = _pad_to(ifeat, m64)
    if m64 != spec.in_features:
        wpad = np.zeros((spec.out_features, m64), dtype=np.int16)
        wpad[:, :spec.in_features] = wm
    else:
        wpad = np.ascontiguousarray(wm)
    out = np.empty(spec.out_features, dtype=np.int16)
    events = kernels.dense_forward_raw(ipad, wpad, out)
    pu.add_kernel_events(events)
    cycles = dense_cycles("forward", spec.in_features, spec.out_features,
                          cycle_model)
    if mem is not None:
        memsys.account_streamed(mem[MemKind.PARTIAL_FEATURE], cycles, 64)
        memsys.account_streamed(mem[MemKind.KERNEL], cycles, 64)
        memsys.account_access(mem[MemKind.PARTIAL_FEATURE],
                              spec.out_features, is_write=True)
    return out, cycles


def dense_gradient_propagation(out_grad: np.ndarray, weights: KernelTensor,
                               spec: DenseLayerSpec, pu: PuArray,
                               mem: MemorySystem | None = None,
                               cycle_model: str = "calibrated"):
    """Gradient w.r.t. the flattened input; returns (vector, cycles)."""
    dy = np.asarray(out_grad, dtype=np.int16)
    if dy.size != spec.out_features:
        raise ConfigError(
            f"gradient has {dy.size} entries, layer expects "
            f"{spec.out_features}")
    wm = _check_shapes(spec, weights)
    n8 = _ceil_div(spec.out_features, 8) * 8
    dypad = _pad_to(dy, n8)
    if n8 != spec.out_features:
        wpad = np.zeros((n8, spec.in_features), dtype=np.int16)
        wpad[:spec.out_features] = wm
    else:
        wpad = np.ascontiguousarray(wm)
    out = np.empty(spec.in_features, dtype=np.int16)
    events = kernels.dense_input_grad_raw(dypad, wpad, out)
    pu.add_kernel_events(events)
    cycles = dense_cycles("gprop", spec.in_features, spec.out_features,
                          cycle_model)
    if mem is not None:
        memsys.account_streamed(mem[mem.pingpong.read_side], cycles, 8)
        memsys.account_streamed(mem[MemKind.KERNEL], cycles, 72)
        memsys.account_streamed(mem[mem.pingpong.write_side],
                                _ceil_div(spec.in_features, 8), 8,
                                is_write=True)
    return out, cycles


def dense_weight_gradient(features: FeatureMap, out_grad: np.ndarray,
                          spec: DenseLayerSpec, pu: PuArray,
                          mem: MemorySystem | None = None,
                          cycle_model: str = "calibrated"):
    """Weight gradient; returns (tensor shaped like the weights, cycles).

    Every entry is a single product reduced to Q4.12 — bitwise equal to
    the two-input scalar path.
    """
    ifeat = flatten(features)
    if ifeat.size != spec.in_features:
        raise ConfigError(
            f"flattened input has {ifeat.size} features, layer expects "
            f"{spec.in_features}")
    dy = np.asarray(out_grad, dtype=np.int16)
    if dy.size != spec.out_features:
        raise ConfigError(
            f"gradient has {dy.size} entries, layer expects "
            f"{spec.out_features}")
    out = np.empty((spec.out_features, spec.in_features), dtype=np.int16)
    events = kernels.dense_weight_grad_raw(ifeat, dy, out)
    pu.add_kernel_events(events)
    cycles = dense_cycles("wgrad", spec.in_features, spec.out_features,
                          cycle_model)
    if mem is not None:
        memsys.account_streamed(mem[MemKind.PARTIAL_FEATURE], cycles, 64)
        memsys.account_streamed(mem[mem.pingpong.read_side], cycles, 1)
        memsys.account_streamed(mem[MemKind.KERNEL], cycles, 64,
                                is_write=True)
    dw = KernelTensor(spec.out_features, features.channels,
                      features.rows, features.cols, out.reshape(-1))
    return dw, cycles
