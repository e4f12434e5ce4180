# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops of the six fixed-point dataflows.

Bit-exact mirror of ``claccel._kernels_py`` (same outputs, same
saturation-event counts); :mod:`claccel.kernels` selects whichever is
available at import.
"""

cdef long long ACC_MAX = (1 << 31) - 1
cdef long long ACC_MIN = -(1 << 31)
cdef long long FXP_MAX = (1 << 15) - 1
cdef long long FXP_MIN = -(1 << 15)
cdef long long HALF = 1 << 11


cdef inline long long sat32(long long v, long long* ev) noexcept nogil:
    if v > ACC_MAX:
        ev[0] += 1
        return ACC_MAX
    if v < ACC_MIN:
        ev[0] += 1
        return ACC_MIN
    return v


cdef inline long long reduce16(long long acc, long long* ev) noexcept nogil:
    cdef long long r
    if acc >= 0:
        r = (acc + HALF) >> 12
    else:
        r = -((-acc + HALF) >> 12)
    if r > FXP_MAX:
        ev[0] += 1
        return FXP_MAX
    if r < FXP_MIN:
        ev[0] += 1
        return FXP_MIN
    return r


cdef inline long long tree8(long long* p, long long* ev) noexcept nogil:
    # Balanced tree (0+1),(2+3),(4+5),(6+7) then pairwise; each node saturates.
    cdef long long s0 = sat32(p[0] + p[1], ev)
    cdef long long s1 = sat32(p[2] + p[3], ev)
    cdef long long s2 = sat32(p[4] + p[5], ev)
    cdef long long s3 = sat32(p[6] + p[7], ev)
    return sat32(sat32(s0 + s1, ev) + sat32(s2 + s3, ev), ev)


def conv_forward_raw(const short[:, :, ::1] vpad,
                     const short[:, :, :, ::1] kern,
                     short[:, :, ::1] out):
    """Forward convolution on a spatially pre-padded input; returns clip count."""
    cdef Py_ssize_t icp = vpad.shape[0]
    cdef Py_ssize_t rows = vpad.shape[1] - 2
    cdef Py_ssize_t cols = vpad.shape[2] - 2
    cdef Py_ssize_t noc = kern.shape[0]
    cdef Py_ssize_t groups = icp // 8
    cdef long long ev = 0
    cdef long long p[8]
    cdef long long macs[9]
    cdef long long acc, gsum
    cdef Py_ssize_t oc, r, c, g, k, l, i, m, base
    with nogil:
        for oc in range(noc):
            for r in range(rows):
                for c in range(cols):
                    acc = 0
                    for g in range(groups):
                        base = g * 8
                        m = 0
                        for k in range(3):
                            for l in range(3):
                                for i in range(8):
                                    p[i] = (<long long>vpad[base + i, r + k, c + l]
                                            * <long long>kern[oc, base + i, k, l])
                                macs[m] = tree8(p, &ev)
                                m += 1
                        gsum = (macs[0] + macs[1] + macs[2] + macs[3] + macs[4]
                                + macs[5] + macs[6] + macs[7] + macs[8])
                        gsum = sat32(gsum, &ev)  # 9-operand final adder
                        acc = sat32(acc + gsum, &ev)
                    out[oc, r, c] = <short>reduce16(acc, &ev)
    return ev


def conv_kernel_grad_raw(const short[:, :, ::1] gout,
                         const short[:, :, ::1] vpad,
                         const long long[::1] order,
                         short[:, :, :, ::1] out):
    """Kernel-gradient pass; per-entry chains follow the pixel visit order."""
    cdef Py_ssize_t noc = gout.shape[0]
    cdef Py_ssize_t rows = gout.shape[1]
    cdef Py_ssize_t cols = gout.shape[2]
    cdef Py_ssize_t icp = vpad.shape[0]
    cdef Py_ssize_t groups = icp // 8
    cdef Py_ssize_t npix = rows * cols
    cdef long long ev = 0
    cdef long long accs[72]  # [i*9 + k*3 + l] for the active channel group
    cdef long long gv
    cdef Py_ssize_t oc, g, t, k, l, i, r, c, base, idx
    with nogil:
        for oc in range(noc):
            for g in range(groups):
                base = g * 8
                for i in range(72):
                    accs[i] = 0
                for t in range(npix):
                    idx = order[t]
                    r = idx // cols
                    c = idx % cols
                    gv = <long long>gout[oc, r, c]
                    if gv == 0:
                        continue
                    for i in range(8):
                        for k in range(3):
                            for l in range(3):
                                accs[i * 9 + k * 3 + l] = sat32(
                                    accs[i * 9 + k * 3 + l]
                                    + gv * <long long>vpad[base + i, r + k, c + l],
                                    &ev)
                for i in range(8):
                    for k in range(3):
                        for l in range(3):
                            out[oc, base + i, k, l] = <short>reduce16(
                                accs[i * 9 + k * 3 + l], &ev)
    return ev


def dense_forward_raw(const short[::1] ifeat,
                      const short[:, ::1] wmat,
                      short[::1] out):
    """Dense forward: 64 products per cycle into the partial-sum register."""
    cdef Py_ssize_t m64 = ifeat.shape[0]
    cdef Py_ssize_t n = wmat.shape[0]
    cdef Py_ssize_t chunks = m64 // 64
    cdef long long ev = 0
    cdef long long p[8]
    cdef long long partial, step
    cdef Py_ssize_t j, t, m, i, base
    with nogil:
        for j in range(n):
            partial = 0
            for t in range(chunks):
                step = 0
                for m in range(8):
                    base = t * 64 + m * 8
                    for i in range(8):
                        p[i] = (<long long>ifeat[base + i]
                                * <long long>wmat[j, base + i])
                    step += tree8(p, &ev)
                # 8 MAC outputs plus the register: exact sum, one clip.
                partial = sat32(partial + step, &ev)
            out[j] = <short>reduce16(partial, &ev)
    return ev


def dense_input_grad_raw(const short[::1] dypad,
                         const short[:, ::1] wpad,
                         short[::1] out):
    """Dense gradient propagation: one accumulation chain per input feature."""
    cdef Py_ssize_t n8 = dypad.shape[0]
    cdef Py_ssize_t m = wpad.shape[1]
    cdef Py_ssize_t chunks = n8 // 8
    cdef long long ev = 0
    cdef long long p[8]
    cdef long long acc
    cdef Py_ssize_t i, t, k
    with nogil:
        for i in range(m):
            acc = 0
            for t in range(chunks):
                for k in range(8):
                    p[k] = (<long long>dypad[t * 8 + k]
                            * <long long>wpad[t * 8 + k, i])
                acc = sat32(acc + tree8(p, &ev), &ev)
            out[i] = <short>reduce16(acc, &ev)
    return ev


def dense_weight_grad_raw(const short[::1] ifeat,
                          const short[::1] dy,
                          short[:, ::1] out):
    """Dense weight gradient: each entry is a single rounded product."""
    cdef Py_ssize_t m = ifeat.shape[0]
    cdef Py_ssize_t n = dy.shape[0]
    cdef long long ev = 0
    cdef Py_ssize_t i, j
    with nogil:
        for j in range(n):
            for i in range(m):
                out[j, i] = <short>reduce16(
                    <long long>dy[j] * <long long>ifeat[i], &ev)
    return ev
