import numpy as np
import pytest

from claccel import fxp
from claccel.tensors import FeatureMap, KernelTensor


def bounded_amplitude(n_acc: int) -> float:
    """Amplitude a with n_acc * a^2 < 7.5, so no stage can saturate."""
    return min(1.0, np.sqrt(7.5 / n_acc))


def random_feature_map(rng, channels, rows, cols, amplitude) -> FeatureMap:
    return FeatureMap.from_real(
        rng.uniform(-amplitude, amplitude, (channels, rows, cols)))


def random_kernel(rng, out_ch, in_ch, kr, kc, amplitude) -> KernelTensor:
    return KernelTensor.from_real(
        rng.uniform(-amplitude, amplitude, (out_ch, in_ch, kr, kc)))


def random_raw_vector(rng, n, lim=32767) -> np.ndarray:
    return rng.integers(-lim, lim + 1, n).astype(np.int16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
