"""Dataset ingestion: CIFAR-10 binary files and a synthetic generator.

The binary reader expects records of 3,073 bytes: one label byte
followed by 3,072 pixel bytes (three 32x32 channel planes, row-major) —
which is already the channel-major order the feature maps use. Pixels
are normalized to [0, 1] before Q4.12 encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fxp
from .errors import DataFormatError
from .tensors import FeatureMap

CIFAR_RECORD_BYTES = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10


@dataclass
class Dataset:
    samples: list  # (FeatureMap, label) pairs
    n_classes: int
    rows: int
    cols: int
    channels: int


def load_cifar10(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    n_records, leftover = divmod(len(blob), CIFAR_RECORD_BYTES)
    if leftover:
        raise DataFormatError(
            f"{path}: incomplete record at byte offset "
            f"{n_records * CIFAR_RECORD_BYTES}")
    if n_records == 0:
        raise DataFormatError(f"{path}: no records")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n_records,
                                                      CIFAR_RECORD_BYTES)
    labels = raw[:, 0]
    bad = np.nonzero(labels >= CIFAR_CLASSES)[0]
    if bad.size:
        raise DataFormatError(
            f"{path}: record {int(bad[0])} has label {int(labels[bad[0]])}, "
            f"expected 0..9")
    # byte -> Q4.12 word of byte/255; exact and avoids a float image copy
    lut = fxp.encode_array(np.arange(256) / 255.0)
    samples = []
    for i in range(n_records):
        fm = FeatureMap(*CIFAR_SHAPE, data=lut[raw[i, 1:]])
        samples.append((fm, int(labels[i])))
    return Dataset(samples, CIFAR_CLASSES, 32, 32, 3)


def gen_synthetic(n_classes: int, n_per_class: int, rows: int = 32,
                  cols: int = 32, channels: int = 3, seed: int = 0,
                  noise: float = 0.03) -> Dataset:
    """Deterministic class-separable blob images in [0, 1].

    Each class gets a Gaussian bump at a distinct position with a
    class-specific channel mix; samples add seeded pixel noise.
    """
    if min(n_classes, n_per_class, rows, cols, channels) < 1:
        raise DataFormatError("all synthetic dataset counts must be >= 1")
    rng = np.random.default_rng(seed)
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    sigma = max(rows, cols) / 5.0
    samples = []
    for cls in range(n_classes):
        angle = 2.0 * np.pi * cls / n_classes
        cy = rows / 2.0 + 0.55 * (rows / 2.0) * np.sin(angle)
        cx = cols / 2.0 + 0.55 * (cols / 2.0) * np.cos(angle)
        bump = np.exp(-((rr - cy) ** 2 + (cc - cx) ** 2) / (2 * sigma ** 2))
        mix = 0.35 + 0.65 * rng.random(channels)
        template = mix[:, None, None] * bump[None, :, :]
        for _ in range(n_per_class):
            img = np.clip(template + rng.normal(0.0, noise,
                                                (channels, rows, cols)),
                          0.0, 1.0)
            samples.append((FeatureMap.from_real(img), cls))
    return Dataset(samples, n_classes, rows, cols, channels)
