"""Cycle-level simulator of a fixed-point continual-learning accelerator.

Executes the six training dataflows (conv forward / kernel gradient /
gradient propagation, dense forward / weight gradient / gradient
propagation) in bit-exact Q4.12 arithmetic, models memory-port and
MAC-array cycle costs, and runs class-balanced replay training end to
end.
"""

from .kernels import BACKEND
from .tensors import ConvLayerSpec, FeatureMap, KernelTensor
from .densesim import DenseLayerSpec
from .pu import MacMode, MacUnit, PuArray
from .replay import ReplayBuffer

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConvLayerSpec",
    "DenseLayerSpec",
    "FeatureMap",
    "KernelTensor",
    "MacMode",
    "MacUnit",
    "PuArray",
    "ReplayBuffer",
    "__version__",
]
