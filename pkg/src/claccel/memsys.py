"""Model of the on-chip memory groups.

Four groups of data memory back the datapath: training-data (the replay
buffer), partial-feature (forward inputs retained for the backward
pass), kernel, and a pair of gradient memories used ping-pong so a pass
never overwrites gradients it still has to read. Every port moves 128
bits (8 values) per transaction; each group is banked, and a cycle
demanding more transactions than there are banks stalls for the excess.

Counters only — no data is modeled here except the retained partial
features, which round-trip bitwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import CapacityError, ConfigError
from .tensors import FeatureMap

PORT_WIDTH_BITS = 128
VALUES_PER_TRANSACTION = 8

# Reference block sizes: one 32x32 plane of 16-bit features per block,
# one 3x3 16-bit kernel per block.
FEATURE_BLOCK_BYTES = 32 * 32 * 2
KERNEL_BLOCK_BYTES = 3 * 3 * 2


class MemKind(enum.Enum):
    TRAINING_DATA = "training_data"
    PARTIAL_FEATURE = "partial_feature"
    KERNEL = "kernel"
    GRADIENT_A = "gradient_a"
    GRADIENT_B = "gradient_b"


@dataclass
class MemoryGroup:
    kind: MemKind
    capacity_bytes: int
    n_banks: int = 1
    port_width_bits: int = PORT_WIDTH_BITS
    reads: int = 0
    writes: int = 0
    stalls: int = 0
    used_bytes: int = 0


def account_access(group: MemoryGroup, n_values: int, is_write: bool = False) -> int:
    """Count port transactions for one access; return stall cycles.

    ceil(n_values/8) transactions are issued; the banks serve one
    transaction each per cycle, and the prefetch buffers hide anything
    the banks can cover, so stalls are only the excess transactions.
    """
    tx = -(-n_values // VALUES_PER_TRANSACTION)
    if is_write:
        group.writes += tx
    else:
        group.reads += tx
    stall = max(0, tx - group.n_banks)
    group.stalls += stall
    return stall


def account_streamed(group: MemoryGroup, n_cycles: int, values_per_cycle: int,
                     is_write: bool = False) -> int:
    """n_cycles identical accesses, accounted in O(1)."""
    if n_cycles <= 0:
        return 0
    tx = -(-values_per_cycle // VALUES_PER_TRANSACTION)
    if is_write:
        group.writes += tx * n_cycles
    else:
        group.reads += tx * n_cycles
    stall = max(0, tx - group.n_banks) * n_cycles
    group.stalls += stall
    return stall


@dataclass(frozen=True)
class GradientPingPong:
    """Which gradient memory is read vs. written during the current pass."""

    read_side: MemKind = MemKind.GRADIENT_A

    @property
    def write_side(self) -> MemKind:
        if self.read_side is MemKind.GRADIENT_A:
            return MemKind.GRADIENT_B
        return MemKind.GRADIENT_A

    def swap(self) -> "GradientPingPong":
        return GradientPingPong(self.write_side)


def gradient_swap(p: GradientPingPong) -> GradientPingPong:
    return p.swap()


@dataclass
class MemorySystem:
    """All memory groups of one simulated device."""

    groups: dict = field(default_factory=dict)
    pingpong: GradientPingPong = field(default_factory=GradientPingPong)
    _partials: dict = field(default_factory=dict)

    @classmethod
    def build(cls, training_data_bytes: int = 6_144_000,
              partial_feature_bytes: int = 8 * FEATURE_BLOCK_BYTES,
              kernel_bytes: int = 64 * KERNEL_BLOCK_BYTES,
              gradient_bytes: int = 8 * FEATURE_BLOCK_BYTES,
              feature_banks: int = 8, kernel_banks: int = 64,
              gradient_banks: int = 8) -> "MemorySystem":
        groups = {
            MemKind.TRAINING_DATA: MemoryGroup(
                MemKind.TRAINING_DATA, training_data_bytes, n_banks=1),
            MemKind.PARTIAL_FEATURE: MemoryGroup(
                MemKind.PARTIAL_FEATURE, partial_feature_bytes, n_banks=feature_banks),
            MemKind.KERNEL: MemoryGroup(
                MemKind.KERNEL, kernel_bytes, n_banks=kernel_banks),
            MemKind.GRADIENT_A: MemoryGroup(
                MemKind.GRADIENT_A, gradient_bytes, n_banks=gradient_banks),
            MemKind.GRADIENT_B: MemoryGroup(
                MemKind.GRADIENT_B, gradient_bytes, n_banks=gradient_banks),
        }
        return cls(groups=groups)

    def __getitem__(self, kind: MemKind) -> MemoryGroup:
        return self.groups[kind]

    @property
    def gradient_read(self) -> MemoryGroup:
        return self.groups[self.pingpong.read_side]

    @property
    def gradient_write(self) -> MemoryGroup:
        return self.groups[self.pingpong.write_side]

    def swap_gradients(self) -> None:
        self.pingpong = self.pingpong.swap()

    def store_partial_feature(self, layer: int, fm: FeatureMap) -> None:
        """Retain a layer's forward input until its backward pass consumes it."""
        group = self.groups[MemKind.PARTIAL_FEATURE]
        if layer in self._partials:
            raise ConfigError(f"layer {layer} already has a stored feature")
        if group.used_bytes + fm.nbytes > group.capacity_bytes:
            raise CapacityError(
                f"partial-feature memory overflow storing layer {layer}: "
                f"need {group.used_bytes + fm.nbytes} bytes, "
                f"have {group.capacity_bytes}")
        group.used_bytes += fm.nbytes
        self._partials[layer] = fm.copy()

    def load_partial_feature(self, layer: int, consume: bool = True) -> FeatureMap:
        group = self.groups[MemKind.PARTIAL_FEATURE]
        if layer not in self._partials:
            raise ConfigError(f"no stored feature for layer {layer}")
        fm = self._partials[layer]
        if consume:
            del self._partials[layer]
            group.used_bytes -= fm.nbytes
        return fm

    def partial_feature_bytes_in_use(self) -> int:
        return self.groups[MemKind.PARTIAL_FEATURE].used_bytes

    def total_stalls(self) -> int:
        return sum(g.stalls for g in self.groups.values())
