"""Pure-numpy implementation of the six dataflow inner loops.

Bit-exact mirror of the compiled extension in ``_kernels.pyx``; selected
at import time by :mod:`claccel.kernels` when the extension is missing
(or forced via CLACCEL_FORCE_PYTHON=1).

Saturating accumulation chains are vectorized with a prefix-sum trick:
products are summed exactly in int64 and the running prefix is checked
against the 32-bit accumulator bounds. Chains that never leave the
bounds are exact (zero clip events); the rare chains that do clip fall
back to a scalar walk that reproduces the hardware's step-by-step
saturation and event count.
"""

from __future__ import annotations

import numpy as np

ACC_MAX = (1 << 31) - 1
ACC_MIN = -(1 << 31)
FXP_MAX = (1 << 15) - 1
FXP_MIN = -(1 << 15)
_HALF = 1 << 11


def _sat_add(a, b):
    """Elementwise saturating 32-bit add on int64 arrays."""
    s = a + b
    hi = s > ACC_MAX
    lo = s < ACC_MIN
    ev = int(np.count_nonzero(hi)) + int(np.count_nonzero(lo))
    if ev:
        s = np.where(hi, ACC_MAX, np.where(lo, ACC_MIN, s))
    return s, ev


def _clip_acc(s):
    """Saturate exact int64 sums to the 32-bit accumulator range."""
    hi = s > ACC_MAX
    lo = s < ACC_MIN
    ev = int(np.count_nonzero(hi)) + int(np.count_nonzero(lo))
    if ev:
        s = np.where(hi, ACC_MAX, np.where(lo, ACC_MIN, s))
    return s, ev


def _tree8(prods, axis):
    """Balanced adder tree over 8 lanes: (0+1),(2+3),(4+5),(6+7), pairwise."""
    p = np.moveaxis(prods, axis, -1)
    ev = 0
    s01, e = _sat_add(p[..., 0], p[..., 1])
    ev += e
    s23, e = _sat_add(p[..., 2], p[..., 3])
    ev += e
    s45, e = _sat_add(p[..., 4], p[..., 5])
    ev += e
    s67, e = _sat_add(p[..., 6], p[..., 7])
    ev += e
    t0, e = _sat_add(s01, s23)
    ev += e
    t1, e = _sat_add(s45, s67)
    ev += e
    r, e = _sat_add(t0, t1)
    ev += e
    return r, ev


def _reduce(acc):
    """Round to nearest (ties away from zero), rescale 2**-24 -> 2**-12, saturate."""
    r = np.where(acc >= 0, (acc + _HALF) >> 12, -((-acc + _HALF) >> 12))
    hi = r > FXP_MAX
    lo = r < FXP_MIN
    ev = int(np.count_nonzero(hi)) + int(np.count_nonzero(lo))
    if ev:
        r = np.where(hi, FXP_MAX, np.where(lo, FXP_MIN, r))
    return r.astype(np.int16), ev


def _sat_chain(prods):
    """Scalar saturating accumulation chain (slow path when clips occur)."""
    acc = 0
    ev = 0
    for p in prods:
        s = acc + int(p)
        if s > ACC_MAX:
            s = ACC_MAX
            ev += 1
        elif s < ACC_MIN:
            s = ACC_MIN
            ev += 1
        acc = s
    return acc, ev


def _chain_axis(terms, axis):
    """Saturating accumulation chain along an axis, one clip check per step.

    Fast path: exact prefix sums that never leave the accumulator range.
    """
    t = np.moveaxis(terms, axis, -1)
    csum = np.cumsum(t, axis=-1)
    bad = (csum.max(axis=-1) > ACC_MAX) | (csum.min(axis=-1) < ACC_MIN)
    total = csum[..., -1].copy()
    ev = 0
    if np.any(bad):
        flat_terms = t.reshape(-1, t.shape[-1])
        flat_total = total.reshape(-1)
        for idx in np.nonzero(bad.reshape(-1))[0]:
            flat_total[idx], e = _sat_chain(flat_terms[idx])
            ev += e
    return total, ev


def conv_forward_raw(vpad, kern, out):
    """Forward convolution, 3x3, stride 1, spatially pre-padded input.

    vpad: int16 (ICp, R+2, C+2) with ICp a multiple of 8
    kern: int16 (OC, ICp, 3, 3)
    out:  int16 (OC, R, C), written in place
    Returns the saturation-event count.
    """
    icp = vpad.shape[0]
    rows = vpad.shape[1] - 2
    cols = vpad.shape[2] - 2
    oc = kern.shape[0]
    groups = icp // 8
    ev = 0
    acc = np.zeros((oc, rows, cols), dtype=np.int64)
    for g in range(groups):
        lanes = slice(g * 8, g * 8 + 8)
        macs = np.empty((9, oc, rows, cols), dtype=np.int64)
        m = 0
        for k in range(3):
            for l in range(3):
                v = vpad[lanes, k:k + rows, l:l + cols].astype(np.int64)
                w = kern[:, lanes, k, l].astype(np.int64)
                prods = w[:, :, None, None] * v[None, :, :, :]
                macs[m], e = _tree8(prods, axis=1)
                ev += e
                m += 1
        gval, e = _clip_acc(macs.sum(axis=0))  # 9-operand final adder
        ev += e
        acc, e = _sat_add(acc, gval)
        ev += e
    z, e = _reduce(acc)
    ev += e
    out[...] = z
    return ev


def conv_kernel_grad_raw(gout, vpad, order, out):
    """Kernel-gradient pass: per-entry accumulation over output pixels.

    gout:  int16 (OC, R, C) incoming gradient
    vpad:  int16 (ICp, R+2, C+2) stored forward input, spatially padded
    order: int64 (R*C,) flat pixel visit order (snake traversal)
    out:   int16 (OC, ICp, 3, 3), written in place
    """
    oc, rows, cols = gout.shape
    icp = vpad.shape[0]
    ev = 0
    # Shifted input submatrices, one per kernel tap, in pixel visit order.
    shifted = np.empty((3, 3, icp, rows * cols), dtype=np.int64)
    for k in range(3):
        for l in range(3):
            shifted[k, l] = (
                vpad[:, k:k + rows, l:l + cols].reshape(icp, -1)[:, order]
            )
    for o in range(oc):
        gflat = gout[o].reshape(-1).astype(np.int64)[order]
        for k in range(3):
            for l in range(3):
                prods = shifted[k, l] * gflat[None, :]
                total, e = _chain_axis(prods, axis=1)
                ev += e
                red, e = _reduce(total)
                ev += e
                out[o, :, k, l] = red
    return ev


def dense_forward_raw(ifeat, wmat, out):
    """Dense forward: 64 products per cycle into the partial-sum register.

    ifeat: int16 (M64,) flattened input, zero-padded to a multiple of 64
    wmat:  int16 (N, M64) weights, columns padded to match
    out:   int16 (N,), written in place
    """
    m64 = ifeat.shape[0]
    n = wmat.shape[0]
    chunks = m64 // 64
    prods = wmat.astype(np.int64) * ifeat.astype(np.int64)[None, :]
    trees, ev = _tree8(prods.reshape(n, chunks, 8, 8), axis=3)
    # 8 MAC outputs plus the register feed the final adder: exact sum,
    # one clip per step.
    steps = trees.sum(axis=2)
    partial, e = _chain_axis(steps, axis=1)
    ev += e
    y, e = _reduce(partial)
    ev += e
    out[...] = y
    return ev


def dense_input_grad_raw(dypad, wpad, out):
    """Dense gradient propagation: one MAC per input feature.

    dypad: int16 (N8,) output gradient, zero-padded to a multiple of 8
    wpad:  int16 (N8, M) weights with zero rows for the padding
    out:   int16 (M,), written in place
    """
    n8 = dypad.shape[0]
    m = wpad.shape[1]
    chunks = n8 // 8
    prods = wpad.astype(np.int64) * dypad.astype(np.int64)[:, None]
    trees, ev = _tree8(prods.reshape(chunks, 8, m), axis=1)
    acc, e = _chain_axis(trees, axis=0)
    ev += e
    dx, e = _reduce(acc)
    ev += e
    out[...] = dx
    return ev


def dense_weight_grad_raw(ifeat, dy, out):
    """Dense weight gradient: each entry is a single rounded product."""
    prods = dy.astype(np.int64)[:, None] * ifeat.astype(np.int64)[None, :]
    dw, ev = _reduce(prods)
    out[...] = dw
    return ev
