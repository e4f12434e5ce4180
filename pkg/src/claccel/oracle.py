"""Double-precision reference semantics and gradient checking.

Everything here is ground truth for the hardware-path modules: direct
implementations of the conv/dense forward and backward sums (no layout
or reordering tricks), an exact-integer recomputation of the fixed-point
rules with unbounded Python ints, and central-difference gradient
checking for the float model. Performance is a non-goal.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import ConfigError

# ---------------------------------------------------------------------------
# float64 layer semantics
# ---------------------------------------------------------------------------


def conv_forward_ref(features: np.ndarray, kernels: np.ndarray,
                     stride: int = 1, pad: int = 1) -> np.ndarray:
    """Direct multi-channel convolution.

    features: (in_ch, rows, cols), kernels: (out_ch, in_ch, kr, kc).
    """
    ic, rows, cols = features.shape
    oc, kic, kr, kc = kernels.shape
    if kic != ic:
        raise ConfigError(f"kernel expects {kic} input channels, got {ic}")
    out_r = (rows + 2 * pad - kr) // stride + 1
    out_c = (cols + 2 * pad - kc) // stride + 1
    padded = np.pad(features, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((oc, out_r, out_c))
    for o in range(oc):
        for r in range(out_r):
            for c in range(out_c):
                window = padded[:, r * stride:r * stride + kr,
                                c * stride:c * stride + kc]
                out[o, r, c] = np.sum(window * kernels[o])
    return out


def conv_input_grad_ref(out_grad: np.ndarray, kernels: np.ndarray,
                        stride: int = 1, pad: int = 1,
                        input_shape=None) -> np.ndarray:
    """Gradient of the padded forward conv w.r.t. its input (the adjoint).

    Strided shapes can discard trailing rows/cols, so the original input
    spatial shape may be passed explicitly; the gradient there is zero.
    """
    oc, out_r, out_c = out_grad.shape
    _, ic, kr, kc = kernels.shape
    if input_shape is not None:
        rows, cols = input_shape
    else:
        rows = (out_r - 1) * stride + kr - 2 * pad
        cols = (out_c - 1) * stride + kc - 2 * pad
    dpad = np.zeros((ic, rows + 2 * pad, cols + 2 * pad))
    for o in range(oc):
        for r in range(out_r):
            for c in range(out_c):
                dpad[:, r * stride:r * stride + kr,
                     c * stride:c * stride + kc] += out_grad[o, r, c] * kernels[o]
    if pad:
        return dpad[:, pad:-pad, pad:-pad].copy()
    return dpad


def conv_kernel_grad_ref(out_grad: np.ndarray, features: np.ndarray,
                         stride: int = 1, pad: int = 1) -> np.ndarray:
    """Gradient of the padded forward conv w.r.t. the kernel, 3x3 taps."""
    oc, out_r, out_c = out_grad.shape
    ic, _, _ = features.shape
    kr = kc = 3
    padded = np.pad(features, ((0, 0), (pad, pad), (pad, pad)))
    dk = np.zeros((oc, ic, kr, kc))
    for o in range(oc):
        for r in range(out_r):
            for c in range(out_c):
                window = padded[:, r * stride:r * stride + kr,
                                c * stride:c * stride + kc]
                dk[o] += out_grad[o, r, c] * window
    return dk


def dense_forward_ref(features_flat: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """y = W @ I with weights shaped (out_features, in_features)."""
    return weights @ features_flat


def dense_input_grad_ref(out_grad: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return weights.T @ out_grad


def dense_weight_grad_ref(features_flat: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
    return np.outer(out_grad, features_flat)


# ---------------------------------------------------------------------------
# exact-integer fixed-point oracle
# ---------------------------------------------------------------------------

_ACC_MAX = (1 << 31) - 1
_ACC_MIN = -(1 << 31)
_FXP_MAX = (1 << 15) - 1
_FXP_MIN = -(1 << 15)


def exact_encode(value) -> int:
    """Nearest Q4.12 word via exact rational rounding, ties away from zero."""
    f = Fraction(value) * 4096
    n, d = f.numerator, f.denominator
    if n >= 0:
        r = (2 * n + d) // (2 * d)
    else:
        r = -((2 * (-n) + d) // (2 * d))
    return max(_FXP_MIN, min(_FXP_MAX, r))


def exact_sat_add(a: int, b: int) -> int:
    return max(_ACC_MIN, min(_ACC_MAX, a + b))


def exact_reduce(acc: int) -> int:
    half = Fraction(acc, 4096)
    n, d = half.numerator, half.denominator
    if n >= 0:
        r = (2 * n + d) // (2 * d)
    else:
        r = -((2 * (-n) + d) // (2 * d))
    return max(_FXP_MIN, min(_FXP_MAX, r))


def exact_tree_dot8(a_raws, b_raws) -> int:
    """The MAC's 8-lane product tree recomputed with unbounded ints."""
    p = [int(a_raws[i]) * int(b_raws[i]) for i in range(8)]
    s0 = exact_sat_add(p[0], p[1])
    s1 = exact_sat_add(p[2], p[3])
    s2 = exact_sat_add(p[4], p[5])
    s3 = exact_sat_add(p[6], p[7])
    return exact_sat_add(exact_sat_add(s0, s1), exact_sat_add(s2, s3))


# ---------------------------------------------------------------------------
# float model and finite differences
# ---------------------------------------------------------------------------


class ReferenceNet:
    """Float twin of the simulated model, for gradient checking.

    A stack of 3x3 same-padded conv layers with ReLU, followed by one
    dense layer, with an MSE or softmax cross-entropy head.
    """

    def __init__(self, conv_kernels, dense_weights, loss: str = "mse"):
        self.conv_kernels = [np.asarray(k, dtype=np.float64) for k in conv_kernels]
        self.dense_weights = np.asarray(dense_weights, dtype=np.float64)
        if loss not in ("mse", "ce"):
            raise ConfigError(f"unknown loss {loss!r}")
        self.loss = loss

    def forward(self, image: np.ndarray):
        acts = [np.asarray(image, dtype=np.float64)]
        for k in self.conv_kernels:
            z = conv_forward_ref(acts[-1], k)
            acts.append(np.maximum(z, 0.0))
        y = dense_forward_ref(acts[-1].reshape(-1), self.dense_weights)
        return acts, y

    def loss_value(self, y: np.ndarray, label: int) -> float:
        n = y.size
        if self.loss == "mse":
            t = np.zeros(n)
            t[label] = 1.0
            return float(np.mean((y - t) ** 2))
        z = y - y.max()
        logp = z - np.log(np.exp(z).sum())
        return float(-logp[label])

    def loss_grad(self, y: np.ndarray, label: int) -> np.ndarray:
        n = y.size
        t = np.zeros(n)
        t[label] = 1.0
        if self.loss == "mse":
            return 2.0 * (y - t) / n
        z = y - y.max()
        p = np.exp(z) / np.exp(z).sum()
        return p - t

    def gradients(self, image: np.ndarray, label: int):
        """Analytic gradients of the loss w.r.t. every weight tensor."""
        acts, y = self.forward(image)
        dy = self.loss_grad(y, label)
        dense_in = acts[-1].reshape(-1)
        d_dense = dense_weight_grad_ref(dense_in, dy)
        g = dense_input_grad_ref(dy, self.dense_weights).reshape(acts[-1].shape)
        conv_grads = [None] * len(self.conv_kernels)
        for li in range(len(self.conv_kernels) - 1, -1, -1):
            g = g * (acts[li + 1] > 0)
            conv_grads[li] = conv_kernel_grad_ref(g, acts[li])
            if li > 0:
                g = conv_input_grad_ref(g, self.conv_kernels[li])
        return conv_grads, d_dense

    def loss_at(self, image: np.ndarray, label: int) -> float:
        _, y = self.forward(image)
        return self.loss_value(y, label)


def finite_diff_check(net: ReferenceNet, image: np.ndarray, label: int,
                      eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    The denominator is floored at 1e-8 so zero-gradient points compare
    cleanly.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ConfigError("eps must lie in [1e-6, 1e-2]")
    conv_grads, dense_grad = net.gradients(image, label)
    worst = 0.0

    def probe(tensor, analytic):
        nonlocal worst
        flat = tensor.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            jp = net.loss_at(image, label)
            flat[i] = keep - eps
            jm = net.loss_at(image, label)
            flat[i] = keep
            num = (jp - jm) / (2 * eps)
            denom = max(abs(num), abs(aflat[i]), 1e-8)
            worst = max(worst, abs(num - aflat[i]) / denom)

    for k, gk in zip(net.conv_kernels, conv_grads):
        probe(k, gk)
    probe(net.dense_weights, dense_grad)
    return worst
