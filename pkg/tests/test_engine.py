"""Training controller: activations, loss head, schedule, determinism."""

import numpy as np
import pytest

from claccel import fxp, oracle
from claccel.engine import (Device, DeviceConfig, Model, TrainingState,
                            loss_and_gradient, relu_backward, relu_forward,
                            train_step)
from claccel.errors import ConfigError
from claccel.replay import ReplayBuffer, Task
from claccel.tensors import FeatureMap, pad_channels
from claccel.engine import run_task


def make_state(rng, rows=6, cols=6, channels=3, filters=(8, 8), classes=2,
               lr=1.0, init_range=0.3, dense_init=None):
    model = Model(rows, cols, channels, list(filters), rng, init_range)
    model.grow_classes(classes)
    if dense_init is not None:
        model.dense.data = fxp.encode_array(
            rng.uniform(-dense_init, dense_init, model.dense.data.size)
        ).reshape(-1)
    device = Device(DeviceConfig(), model, max_classes=classes)
    state = TrainingState(model, lr_raw=fxp.encode(lr))
    return state, device


class TestRelu:
    def test_all_negative(self, rng):
        x = FeatureMap.from_real(rng.uniform(-1, -0.1, (2, 3, 3)))
        fwd = relu_forward(x)
        assert not fwd.data.any()
        g = FeatureMap.from_real(rng.uniform(-1, 1, (2, 3, 3)))
        assert not relu_backward(g, x).data.any()

    def test_all_positive_identity(self, rng):
        x = FeatureMap.from_real(rng.uniform(0.1, 1, (2, 3, 3)))
        g = FeatureMap.from_real(rng.uniform(-1, 1, (2, 3, 3)))
        assert np.array_equal(relu_forward(x).data, x.data)
        assert np.array_equal(relu_backward(g, x).data, g.data)

    def test_mask_equality(self, rng):
        x = FeatureMap.from_real(rng.uniform(-1, 1, (2, 4, 4)))
        ones = FeatureMap(2, 4, 4, np.ones(32, dtype=np.int16))
        got = relu_backward(ones, x)
        assert np.array_equal(got.data, (x.data > 0).astype(np.int16))


class TestLoss:
    def test_perfect_prediction(self):
        y = fxp.encode_array([0.0, 1.0, 0.0])
        j, dy = loss_and_gradient(y, 1, "mse")
        assert j == 0.0
        assert not dy.any()

    def test_mse_normalization(self):
        # two classes, y = 0, label 0: dY = (2/n)(y - t) = (-1, 0)
        j, dy = loss_and_gradient(np.zeros(2, np.int16), 0, "mse")
        assert j == 0.5
        assert list(dy) == [fxp.encode(-1.0), 0]

    def test_mse_matches_finite_difference(self, rng):
        yv = rng.uniform(-1, 1, 5)
        y = fxp.encode_array(yv)
        _, dy = loss_and_gradient(y, 2, "mse")
        yd = fxp.decode_array(y)
        eps = 1e-6
        for i in range(5):
            t = np.zeros(5)
            t[2] = 1.0
            jp = np.mean((yd + eps * np.eye(5)[i] - t) ** 2)
            jm = np.mean((yd - eps * np.eye(5)[i] - t) ** 2)
            fd = (jp - jm) / (2 * eps)
            assert abs(fxp.decode(int(dy[i])) - fd) < 1e-3

    def test_softmax_uniform(self):
        y = np.zeros(4, np.int16)
        j, dy = loss_and_gradient(y, 3, "ce")
        expect = fxp.encode_array(np.full(4, 0.25) - np.eye(4)[3])
        assert np.array_equal(dy, expect)
        assert abs(j - np.log(4)) < 1e-9

    def test_label_out_of_range(self):
        with pytest.raises(ConfigError):
            loss_and_gradient(np.zeros(2, np.int16), 2, "mse")


class TestTrainStep:
    def test_zero_input_zero_weights_is_noop(self, rng):
        state, device = make_state(rng, init_range=0.0)
        before = [k.data.copy() for k in state.model.conv_kernels]
        before.append(state.model.dense.data.copy())
        train_step(state, FeatureMap(3, 6, 6), 0, device)
        after = [k.data for k in state.model.conv_kernels]
        after.append(state.model.dense.data)
        for b, a in zip(before, after):
            assert np.array_equal(b, a)

    def test_dense_only_hand_computed(self, rng):
        # 1x1 spatial, 2 real channels, zero-init dense, lr = 1, MSE:
        # y = 0, dY = (-1, 0), dW[0] = I * -1, update W[0] = I.
        state, device = make_state(rng, rows=1, cols=1, channels=2,
                                   filters=(), classes=2)
        img = FeatureMap.from_real(np.array([0.5, 0.25]).reshape(2, 1, 1))
        train_step(state, img, 0, device)
        w = state.model.dense.as_matrix()
        padded = pad_channels(img)
        assert np.array_equal(w[0], padded.data)
        assert not w[1].any()
        assert state.last_loss == 0.5

    def test_partial_features_consumed(self, rng):
        state, device = make_state(rng)
        train_step(state, FeatureMap.from_real(rng.uniform(0, 1, (3, 6, 6))),
                   1, device)
        assert device.mem.partial_feature_bytes_in_use() == 0

    def test_gradients_track_float_oracle(self, rng):
        # cosine similarity of the whole-step weight delta vs float grads
        state, device = make_state(rng, lr=0.0625, init_range=0.25,
                                   dense_init=0.2)
        img = FeatureMap.from_real(rng.uniform(0, 1, (3, 6, 6)))
        net = oracle.ReferenceNet(
            [k.to_real() for k in state.model.conv_kernels],
            state.model.dense.to_real().reshape(2, -1))
        conv_g, dense_g = net.gradients(pad_channels(img).to_real(), 1)
        before = [k.to_real() for k in state.model.conv_kernels]
        before_dense = state.model.dense.to_real().reshape(2, -1)
        train_step(state, img, 1, device)
        lr = 0.0625

        def cosine(delta, grad):
            d, g = delta.reshape(-1), -lr * grad.reshape(-1)
            return float(d @ g / (np.linalg.norm(d) * np.linalg.norm(g)))

        for li in range(2):
            delta = state.model.conv_kernels[li].to_real() - before[li]
            assert cosine(delta, conv_g[li]) > 0.99
        delta = state.model.dense.to_real().reshape(2, -1) - before_dense
        assert cosine(delta, dense_g) > 0.99

    def test_per_step_pass_schedule_logged(self, rng):
        state, device = make_state(rng)
        img = FeatureMap.from_real(rng.uniform(0, 1, (3, 6, 6)))
        train_step(state, img, 0, device, ctx=(0, 0, 0))
        got = [(r.layer, r.pass_name) for r in device.report.records]
        assert got == [
            ("conv0", "forward"), ("conv1", "forward"), ("dense", "forward"),
            ("dense", "wgrad"), ("dense", "gprop"),
            ("conv1", "kgrad"), ("conv1", "gprop"),
            ("conv0", "kgrad"), ("conv0", "gprop"),
        ]


class TestRunTask:
    def test_empty_task_only_grows_classes(self, rng):
        state, device = make_state(rng, classes=0)
        state.model.grow_classes(0)
        buf = ReplayBuffer()
        task = Task(index=0, classes=[0, 1], samples=[])
        run_task(state, buf, task, device, epochs=3, seed=0)
        assert state.model.n_classes == 2
        assert not state.model.dense.data.any()
        assert len(device.report.records) == 0

    def test_class_count_monotone(self, rng):
        state, device = make_state(rng, rows=4, cols=4, classes=0)
        buf = ReplayBuffer()
        img = FeatureMap.from_real(rng.uniform(0, 1, (3, 4, 4)))
        for t in range(3):
            task = Task(index=t, classes=[2 * t, 2 * t + 1],
                        samples=[(img.copy(), 2 * t)])
            run_task(state, buf, task, device, epochs=1, seed=0)
            assert state.model.n_classes == 2 * (t + 1)

    def test_growth_preserves_old_logits(self, rng):
        from claccel.engine import forward_pass
        from claccel.pu import PuArray
        state, device = make_state(rng, classes=2, dense_init=0.3)
        img = FeatureMap.from_real(rng.uniform(0, 1, (3, 6, 6)))
        _, y_before, _ = forward_pass(state.model, img, PuArray())
        state.model.grow_classes(4)
        _, y_after, _ = forward_pass(state.model, img, PuArray())
        assert np.array_equal(y_after[:2], y_before)
        assert not y_after[2:].any()

    def test_bitwise_deterministic(self, rng):
        def run(seed):
            r = np.random.default_rng(seed)
            state, device = make_state(r, rows=4, cols=4, classes=0, lr=0.125)
            buf = ReplayBuffer()
            data = np.random.default_rng(99).uniform(0, 1, (6, 3, 4, 4))
            samples = [(FeatureMap.from_real(data[i]), i % 2)
                       for i in range(6)]
            task = Task(index=0, classes=[0, 1], samples=samples)
            run_task(state, buf, task, device, epochs=2, seed=seed)
            return [k.data.copy() for k in state.model.conv_kernels] + \
                [state.model.dense.data.copy()]

        a, b = run(7), run(7)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
