"""Continual-learning training controller.

Drives the forward -> loss -> backward -> update schedule of a
conv+ReLU stack with a dense head on one simulated device, replaying
the class-balanced buffer after every task. Training uses plain SGD
with batch size 1; the weight update w <- w - lr*g happens in Q4.12 with
saturation, so the default learning rate of 1.0 subtracts the gradient
exactly.

The loss head is a simulator boundary: it is computed in float (MSE
against a one-hot target by default, softmax cross-entropy optionally)
and its gradient re-enters the fixed-point datapath through encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fxp
from .convsim import (ConvCycleModel, conv_forward, conv_gradient_propagation,
                      conv_kernel_gradient)
from .densesim import DenseLayerSpec, dense_forward, dense_gradient_propagation, \
    dense_weight_gradient
from .errors import ConfigError
from .memsys import MemorySystem
from .pu import PuArray
from .replay import ReplayBuffer, Task
from .report import CycleReport
from .tensors import ConvLayerSpec, FeatureMap, KernelTensor, pad_channels

CHANNEL_ALIGN = 8


def _ceil8(n: int) -> int:
    return -(-n // CHANNEL_ALIGN) * CHANNEL_ALIGN


# ---------------------------------------------------------------------------
# activation and loss
# ---------------------------------------------------------------------------


def relu_forward(fm: FeatureMap) -> FeatureMap:
    return FeatureMap(fm.channels, fm.rows, fm.cols,
                      np.maximum(fm.data, 0))


def relu_backward(grad: FeatureMap, x_forward: FeatureMap) -> FeatureMap:
    """Mask the gradient where the forward value was <= 0."""
    if grad.data.size != x_forward.data.size:
        raise ConfigError("gradient and forward map shapes differ")
    masked = np.where(x_forward.data > 0, grad.data, np.int16(0))
    return FeatureMap(grad.channels, grad.rows, grad.cols, masked)


def loss_and_gradient(y_raw: np.ndarray, label: int, kind: str = "mse"):
    """Loss value (float) and its gradient re-encoded to Q4.12.

    MSE: J = mean((y - onehot)^2), dY = 2*(y - onehot)/n.
    CE:  J = -log softmax(y)[label], dY = softmax(y) - onehot.
    """
    y = fxp.decode_array(y_raw)
    n = y.size
    if label < 0 or label >= n:
        raise ConfigError(f"label {label} outside the {n} current classes")
    target = np.zeros(n)
    target[label] = 1.0
    if kind == "mse":
        j = float(np.mean((y - target) ** 2))
        dy = 2.0 * (y - target) / n
    elif kind == "ce":
        z = y - y.max()
        p = np.exp(z) / np.exp(z).sum()
        j = float(-np.log(p[label]))
        dy = p - target
    else:
        raise ConfigError(f"unknown loss {kind!r}")
    return j, fxp.encode_array(dy)


# ---------------------------------------------------------------------------
# model and device
# ---------------------------------------------------------------------------


class Model:
    """Conv+ReLU stack with a dense head whose output count grows."""

    def __init__(self, rows: int, cols: int, in_channels: int,
                 conv_filters, rng: np.random.Generator,
                 init_range: float = 0.5):
        self.rows = rows
        self.cols = cols
        self.in_channels = in_channels
        self.conv_specs: list[ConvLayerSpec] = []
        self.conv_kernels: list[KernelTensor] = []
        ch = in_channels
        for f in conv_filters:
            chp = _ceil8(ch)
            self.conv_specs.append(ConvLayerSpec(chp, f, rows, cols))
            self.conv_kernels.append(KernelTensor.from_real(
                rng.uniform(-init_range, init_range, (f, chp, 3, 3))))
            ch = f
        self.dense_channels = _ceil8(ch)
        self.dense_in_features = self.dense_channels * rows * cols
        self.dense: KernelTensor | None = None
        self.n_classes = 0

    def grow_classes(self, new_total: int) -> None:
        """Extend the dense head with zero-initialized class rows."""
        if new_total < self.n_classes:
            raise ConfigError("class count cannot shrink")
        if new_total == self.n_classes:
            return
        fresh = np.zeros(
            (new_total - self.n_classes) * self.dense_in_features, np.int16)
        if self.dense is None:
            data = fresh
        else:
            data = np.concatenate([self.dense.data, fresh])
        self.dense = KernelTensor(new_total, self.dense_channels,
                                  self.rows, self.cols, data)
        self.n_classes = new_total

    def dense_spec(self) -> DenseLayerSpec:
        if self.dense is None:
            raise ConfigError("model has no classes yet")
        return DenseLayerSpec(self.dense_in_features, self.n_classes)

    def weight_tensors(self) -> list[tuple[str, KernelTensor]]:
        named = [(f"conv{i}", k) for i, k in enumerate(self.conv_kernels)]
        if self.dense is not None:
            named.append(("dense", self.dense))
        return named


@dataclass
class DeviceConfig:
    clock_period_ns: float = 3.87
    cycle_model: str = "calibrated"
    feature_banks: int = 8
    kernel_banks: int = 64
    gradient_banks: int = 8
    training_data_bytes: int = 6_144_000
    partial_feature_bytes: int | None = None
    kernel_bytes: int | None = None
    gradient_bytes: int | None = None

    def __post_init__(self):
        if self.clock_period_ns <= 0:
            raise ConfigError("clock period must be positive")


class Device:
    """One simulated accelerator: MAC array, memories, counters, report."""

    def __init__(self, config: DeviceConfig, model: Model, max_classes: int):
        self.config = config
        plane = model.rows * model.cols * 2
        # Partial-feature memory must retain every weighted layer's input
        # at backward time; kernel memory holds all weights at the final
        # class count. Explicit capacities override the auto-sizing.
        pf_needed = sum(s.in_channels * plane for s in model.conv_specs)
        pf_needed += model.dense_channels * plane
        kern_needed = sum(k.nbytes for k in model.conv_kernels)
        kern_needed += model.dense_in_features * max(max_classes, 1) * 2
        grad_needed = max(
            [s.in_channels * plane for s in model.conv_specs]
            + [model.dense_channels * plane])
        self.pu = PuArray()
        self.mem = MemorySystem.build(
            training_data_bytes=config.training_data_bytes,
            partial_feature_bytes=config.partial_feature_bytes or pf_needed,
            kernel_bytes=config.kernel_bytes or kern_needed,
            gradient_bytes=config.gradient_bytes or grad_needed,
            feature_banks=config.feature_banks,
            kernel_banks=config.kernel_banks,
            gradient_banks=config.gradient_banks)
        self.conv_stats = ConvCycleModel()
        self.report = CycleReport(config.clock_period_ns)
        self.update_counter = fxp.SatCounter()

    @property
    def cycle_model(self) -> str:
        return self.config.cycle_model


@dataclass
class TrainingState:
    model: Model
    lr_raw: int = fxp.FXP_ONE
    loss_kind: str = "mse"
    batch_size: int = 1
    weight_reset: str = "fine_tune"
    epoch: int = 0
    last_loss: float = 0.0

    def __post_init__(self):
        if self.batch_size != 1:
            raise ConfigError("only batch size 1 is supported")
        if self.weight_reset not in ("fine_tune", "reinit"):
            raise ConfigError(f"unknown weight_reset {self.weight_reset!r}")


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def _logged(device: Device, ctx, layer: str, pass_name: str, call):
    sat0 = device.pu.saturation_events
    stall0 = device.mem.total_stalls()
    out, cycles = call()
    if ctx is not None:
        task, epoch, sample = ctx
        device.report.add(task, epoch, sample, layer, pass_name, cycles,
                          device.mem.total_stalls() - stall0,
                          device.pu.saturation_events - sat0)
    return out, cycles


def forward_pass(model: Model, image: FeatureMap, pu: PuArray,
                 mem: MemorySystem | None = None,
                 stats: ConvCycleModel | None = None,
                 cycle_model: str = "calibrated", store: bool = False):
    """Run the forward schedule; returns (layer inputs, logits, pass list).

    ``store`` retains each weighted layer's input in the partial-feature
    memory for the backward pass.
    """
    x = pad_channels(image)
    acts = [x]
    passes = []
    if store and mem is not None:
        mem.store_partial_feature(0, x)
    for li, (spec, kern) in enumerate(zip(model.conv_specs, model.conv_kernels)):
        z, cycles = conv_forward(acts[-1], kern, spec, pu, mem, stats)
        passes.append((f"conv{li}", "forward", cycles))
        a = relu_forward(z)
        acts.append(a)
        if store and mem is not None:
            mem.store_partial_feature(li + 1, a)
    y, cycles = dense_forward(acts[-1], model.dense, model.dense_spec(), pu,
                              mem, cycle_model)
    passes.append(("dense", "forward", cycles))
    return acts, y, passes


def train_step(state: TrainingState, image: FeatureMap, label: int,
               device: Device, ctx=None) -> TrainingState:
    """One sample: forward, loss, backward through every layer, update."""
    model = state.model
    pu, mem = device.pu, device.mem
    n_conv = len(model.conv_specs)
    dspec = model.dense_spec()

    x = pad_channels(image)
    acts = [x]
    mem.store_partial_feature(0, x)
    for li in range(n_conv):
        spec, kern = model.conv_specs[li], model.conv_kernels[li]
        z, _ = _logged(device, ctx, f"conv{li}", "forward",
                       lambda: conv_forward(acts[-1], kern, spec, pu, mem,
                                            device.conv_stats))
        a = relu_forward(z)
        acts.append(a)
        mem.store_partial_feature(li + 1, a)
    y, _ = _logged(device, ctx, "dense", "forward",
                   lambda: dense_forward(acts[-1], model.dense, dspec, pu,
                                         mem, device.cycle_model))

    state.last_loss, dy = loss_and_gradient(y, label, state.loss_kind)

    dense_in = mem.load_partial_feature(n_conv)
    dw, _ = _logged(device, ctx, "dense", "wgrad",
                    lambda: dense_weight_gradient(dense_in, dy, dspec, pu,
                                                  mem, device.cycle_model))
    dx, _ = _logged(device, ctx, "dense", "gprop",
                    lambda: dense_gradient_propagation(dy, model.dense, dspec,
                                                       pu, mem,
                                                       device.cycle_model))
    mem.swap_gradients()

    grad = FeatureMap(model.dense_channels, model.rows, model.cols, dx)
    kernel_grads: list[KernelTensor | None] = [None] * n_conv
    for li in range(n_conv - 1, -1, -1):
        spec, kern = model.conv_specs[li], model.conv_kernels[li]
        layer_in = mem.load_partial_feature(li)
        # The stored post-activation map has the same positivity mask as
        # the pre-activation output.
        grad = relu_backward(grad, acts[li + 1])
        g = grad
        kernel_grads[li], _ = _logged(
            device, ctx, f"conv{li}", "kgrad",
            lambda: conv_kernel_gradient(g, layer_in, spec, pu, mem,
                                         device.conv_stats))
        grad, _ = _logged(
            device, ctx, f"conv{li}", "gprop",
            lambda: conv_gradient_propagation(g, kern, spec, pu, mem,
                                              device.conv_stats))
        mem.swap_gradients()

    for li in range(n_conv):
        kern = model.conv_kernels[li]
        kern.data = fxp.weight_update_array(
            kern.data, kernel_grads[li].data, state.lr_raw,
            device.update_counter)
    model.dense.data = fxp.weight_update_array(
        model.dense.data, dw.data, state.lr_raw, device.update_counter)
    return state


def run_task(state: TrainingState, buf: ReplayBuffer, task: Task,
             device: Device, epochs: int = 10, seed: int = 0,
             rng: np.random.Generator | None = None) -> TrainingState:
    """Offer a task's samples to the buffer, grow the head, retrain.

    Retraining replays the whole buffer for the configured epochs in a
    seeded shuffle; by default the weights are fine-tuned from their
    current values.
    """
    for image, label in task.samples:
        buf.insert(image, label)
    state.model.grow_classes(state.model.n_classes + len(task.classes))
    if state.weight_reset == "reinit" and rng is not None:
        for kern in state.model.conv_kernels:
            kern.data = fxp.encode_array(
                rng.uniform(-0.5, 0.5, kern.data.size)).reshape(-1)
        state.model.dense.data = np.zeros_like(state.model.dense.data)
    stored = buf.samples()
    for epoch in range(epochs):
        order = np.random.default_rng(
            [seed, task.index, epoch]).permutation(len(stored))
        for i, idx in enumerate(order):
            image, label = stored[idx]
            train_step(state, image, label, device,
                       ctx=(task.index, epoch, i))
        state.epoch += 1
    return state


def predict(state: TrainingState, image: FeatureMap,
            pu: PuArray | None = None) -> int:
    if pu is None:
        pu = PuArray()
    _, y, _ = forward_pass(state.model, image, pu)
    return int(np.argmax(fxp.decode_array(y)))


def evaluate(state: TrainingState, samples) -> dict:
    """Accuracy over (image, label) pairs, overall and per class.

    Runs on a scratch MAC array so evaluation does not disturb the
    device's training counters.
    """
    pu = PuArray()
    per_class_hits: dict[int, int] = {}
    per_class_n: dict[int, int] = {}
    hits = 0
    for image, label in samples:
        pred = predict(state, image, pu)
        per_class_n[label] = per_class_n.get(label, 0) + 1
        if pred == label:
            hits += 1
            per_class_hits[label] = per_class_hits.get(label, 0) + 1
    total = len(samples)
    per_class = {c: per_class_hits.get(c, 0) / n
                 for c, n in sorted(per_class_n.items())}
    return {"accuracy": hits / total if total else None,
            "per_class": per_class}
