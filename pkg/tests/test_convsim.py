"""Conv dataflows: snake traversal, cycle counts, oracle equivalence."""

import numpy as np
import pytest

from claccel import oracle
from claccel.convsim import (Direction, SnakeCursor, conv_forward,
                             conv_gradient_propagation, conv_kernel_gradient,
                             snake_order, snake_step, walk_fetch_total)
from claccel.errors import ConfigError
from claccel.pu import PuArray
from claccel.tensors import ConvLayerSpec, FeatureMap, KernelTensor, pad_channels
from conftest import bounded_amplitude, random_feature_map, random_kernel


def identity_kernel(channels: int) -> KernelTensor:
    k = np.zeros((channels, channels, 3, 3))
    for i in range(channels):
        k[i, i, 1, 1] = 1.0
    return KernelTensor.from_real(k)


class TestSnake:
    def test_first_window_fetches_nine(self):
        spec = ConvLayerSpec(8, 8, 4, 4)
        nxt, fetches = snake_step(SnakeCursor(), spec)
        assert (nxt.row, nxt.col) == (0, 0)
        assert fetches == 9

    def test_mid_row_fetches_three(self):
        spec = ConvLayerSpec(8, 8, 4, 4)
        nxt, fetches = snake_step(SnakeCursor(0, 1), spec)
        assert (nxt.row, nxt.col) == (0, 2)
        assert fetches == 3

    def test_row_turn_holds_column(self):
        spec = ConvLayerSpec(8, 8, 4, 4)
        cur = SnakeCursor(0, 3, Direction.LEFT_TO_RIGHT)
        nxt, fetches = snake_step(cur, spec)
        assert (nxt.row, nxt.col) == (1, 3)
        assert nxt.direction is Direction.RIGHT_TO_LEFT
        assert fetches == 3  # 6 of 9 window entries reused

    def test_end_of_matrix_advances_group(self):
        spec = ConvLayerSpec(8, 8, 2, 2)
        cur = SnakeCursor(1, 0, Direction.RIGHT_TO_LEFT)
        nxt, fetches = snake_step(cur, spec)
        assert nxt.row == -1
        assert nxt.out_channel_group == 1
        assert fetches == 0

    @pytest.mark.parametrize("rows,cols", [(1, 1), (1, 5), (5, 1), (4, 7), (32, 32)])
    def test_walk_visits_every_pixel_once(self, rows, cols):
        spec = ConvLayerSpec(8, 8, rows, cols)
        cur = SnakeCursor()
        seen = []
        total = 0
        for _ in range(rows * cols):
            cur, fetches = snake_step(cur, spec)
            seen.append((cur.row, cur.col))
            total += fetches
        assert len(set(seen)) == rows * cols
        assert total == walk_fetch_total(rows, cols)
        # matches the flat visit order used by the kernels
        flat = [r * cols + c for r, c in seen]
        assert flat == list(snake_order(rows, cols))

    def test_reference_fetch_total(self):
        assert walk_fetch_total(32, 32) == 9 + 3 * (1024 - 1) == 3078


class TestConvForward:
    def test_identity_kernel(self, rng):
        fm = random_feature_map(rng, 8, 6, 6, 0.9)
        z, _ = conv_forward(fm, identity_kernel(8), ConvLayerSpec(8, 8, 6, 6),
                            PuArray())
        assert np.array_equal(z.data, fm.data)

    def test_zero_kernel(self, rng):
        fm = random_feature_map(rng, 8, 5, 5, 0.9)
        kt = KernelTensor(8, 8, 3, 3)
        z, _ = conv_forward(fm, kt, ConvLayerSpec(8, 8, 5, 5), PuArray())
        assert not z.data.any()

    def test_reference_cycle_count(self, rng):
        fm = random_feature_map(rng, 8, 32, 32, 0.2)
        kt = random_kernel(rng, 8, 8, 3, 3, 0.2)
        _, cycles = conv_forward(fm, kt, ConvLayerSpec(8, 8, 32, 32), PuArray())
        assert cycles == 8192

    def test_matches_oracle_random(self, rng):
        pu = PuArray()
        for _ in range(40):
            ic = int(rng.integers(1, 17))
            oc = int(rng.integers(1, 17))
            rows, cols = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            icp = -(-ic // 8) * 8
            amp = bounded_amplitude(9 * icp)
            fm = random_feature_map(rng, ic, rows, cols, amp)
            kt = random_kernel(rng, oc, icp, 3, 3, amp)
            z, _ = conv_forward(fm, kt, ConvLayerSpec(icp, oc, rows, cols), pu)
            ref = oracle.conv_forward_ref(pad_channels(fm).to_real(),
                                          kt.to_real())
            assert np.max(np.abs(z.to_real() - ref)) <= 9 * icp * 2.0 ** -13
        assert pu.saturation_events == 0

    def test_stride_rejected(self, rng):
        fm = random_feature_map(rng, 8, 4, 4, 0.5)
        kt = random_kernel(rng, 8, 8, 3, 3, 0.5)
        with pytest.raises(ConfigError):
            conv_forward(fm, kt, ConvLayerSpec(8, 8, 4, 4, stride=2), PuArray())

    def test_shape_mismatch_rejected(self, rng):
        fm = random_feature_map(rng, 8, 4, 4, 0.5)
        kt = random_kernel(rng, 8, 16, 3, 3, 0.5)
        with pytest.raises(ConfigError):
            conv_forward(fm, kt, ConvLayerSpec(8, 8, 4, 4), PuArray())


class TestGradientPropagation:
    def test_zero_gradient(self, rng):
        g = FeatureMap(8, 4, 4)
        kt = random_kernel(rng, 8, 8, 3, 3, 0.5)
        dv, _ = conv_gradient_propagation(g, kt, ConvLayerSpec(8, 8, 4, 4),
                                          PuArray())
        assert not dv.data.any()

    def test_identity_kernel_passes_through(self, rng):
        g = random_feature_map(rng, 8, 5, 5, 0.9)
        dv, _ = conv_gradient_propagation(g, identity_kernel(8),
                                          ConvLayerSpec(8, 8, 5, 5), PuArray())
        assert np.array_equal(dv.data, g.data)

    def test_reference_cycle_count(self, rng):
        g = random_feature_map(rng, 8, 32, 32, 0.2)
        kt = random_kernel(rng, 8, 8, 3, 3, 0.2)
        _, cycles = conv_gradient_propagation(g, kt, ConvLayerSpec(8, 8, 32, 32),
                                              PuArray())
        assert cycles == 8192

    def test_matches_oracle(self, rng):
        pu = PuArray()
        for _ in range(25):
            oc, ic = int(rng.integers(1, 17)), 8 * int(rng.integers(1, 3))
            rows, cols = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            ocp = -(-oc // 8) * 8
            amp = bounded_amplitude(9 * ocp)
            g = random_feature_map(rng, oc, rows, cols, amp)
            kt = random_kernel(rng, oc, ic, 3, 3, amp)
            dv, _ = conv_gradient_propagation(
                g, kt, ConvLayerSpec(ic, oc, rows, cols), pu)
            ref = oracle.conv_input_grad_ref(g.to_real(), kt.to_real())
            assert np.max(np.abs(dv.to_real() - ref)) <= 9 * ocp * 2.0 ** -13
        assert pu.saturation_events == 0

    def test_bitwise_equals_forward_on_swapped_kernel(self, rng):
        g = random_feature_map(rng, 8, 6, 6, 0.8)
        kt = random_kernel(rng, 8, 8, 3, 3, 0.8)
        spec = ConvLayerSpec(8, 8, 6, 6)
        dv, _ = conv_gradient_propagation(g, kt, spec, PuArray())
        swapped = np.ascontiguousarray(
            kt.view4d().transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        kt_sw = KernelTensor(8, 8, 3, 3, swapped.reshape(-1))
        z, _ = conv_forward(g, kt_sw, spec, PuArray())
        assert np.array_equal(dv.data, z.data)


class TestKernelGradient:
    def test_zero_gradient(self, rng):
        g = FeatureMap(8, 4, 4)
        fm = random_feature_map(rng, 8, 4, 4, 0.9)
        dk, _ = conv_kernel_gradient(g, fm, ConvLayerSpec(8, 8, 4, 4), PuArray())
        assert not dk.data.any()

    def test_zero_features(self, rng):
        g = random_feature_map(rng, 8, 4, 4, 0.9)
        fm = FeatureMap(8, 4, 4)
        dk, _ = conv_kernel_gradient(g, fm, ConvLayerSpec(8, 8, 4, 4), PuArray())
        assert not dk.data.any()

    def test_reference_cycle_count(self, rng):
        g = random_feature_map(rng, 8, 32, 32, 0.1)
        fm = random_feature_map(rng, 8, 32, 32, 0.1)
        _, cycles = conv_kernel_gradient(g, fm, ConvLayerSpec(8, 8, 32, 32),
                                         PuArray())
        assert cycles == 8192

    def test_matches_oracle(self, rng):
        pu = PuArray()
        for _ in range(25):
            oc, ic = int(rng.integers(1, 12)), int(rng.integers(1, 17))
            rows, cols = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            icp = -(-ic // 8) * 8
            amp = bounded_amplitude(rows * cols)
            g = random_feature_map(rng, oc, rows, cols, amp)
            fm = random_feature_map(rng, ic, rows, cols, amp)
            dk, _ = conv_kernel_gradient(
                g, fm, ConvLayerSpec(icp, oc, rows, cols), pu)
            ref = oracle.conv_kernel_grad_ref(g.to_real(),
                                              pad_channels(fm).to_real())
            assert np.max(np.abs(dk.to_real() - ref)) \
                <= rows * cols * 2.0 ** -13
        assert pu.saturation_events == 0

    def test_matches_finite_differences(self, rng):
        # central differences of J(K) = <conv(V, K), G> on the float oracle
        rows = cols = 5
        amp = bounded_amplitude(rows * cols)
        g = random_feature_map(rng, 8, rows, cols, amp)
        fm = random_feature_map(rng, 8, rows, cols, amp)
        dk, _ = conv_kernel_gradient(g, fm, ConvLayerSpec(8, 8, rows, cols),
                                     PuArray())
        kf = np.zeros((8, 8, 3, 3))
        gf, vf = g.to_real(), fm.to_real()
        eps = 1e-4
        for _ in range(20):
            o, i = rng.integers(0, 8), rng.integers(0, 8)
            a, b = rng.integers(0, 3), rng.integers(0, 3)
            kf[o, i, a, b] = eps
            jp = float(np.sum(oracle.conv_forward_ref(vf, kf) * gf))
            kf[o, i, a, b] = -eps
            jm = float(np.sum(oracle.conv_forward_ref(vf, kf) * gf))
            kf[o, i, a, b] = 0.0
            fd = (jp - jm) / (2 * eps)
            assert abs(dk.to_real()[o, i, a, b] - fd) <= 2.0 ** -12
