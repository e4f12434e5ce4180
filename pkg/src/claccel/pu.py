"""Behavioral model of the processing unit.

Nine MAC blocks, each with 8 multipliers and 8 adders that are either
configured as an adder tree (multi-operand mode, used by forward and
gradient propagation) or chained into a persistent partial-sum register
(multi-adder mode, used by the weight/kernel gradients). A 9-operand
final adder combines the MAC outputs; it is modeled behaviorally as an
exact sum saturated once on the result, since its carry-save internals
only affect timing.

This module is the value-semantics reference for the whole-pass kernels
in :mod:`claccel.kernels`; the two are cross-checked bit for bit in the
test suite.
"""

from __future__ import annotations

import enum

from . import fxp
from .errors import MacModeError


class MacMode(enum.Enum):
    MULTI_OPERAND = "multi_operand"
    MULTI_ADDER = "multi_adder"


class MacUnit:
    """One MAC block: 8 multipliers, 8 reconfigurable adders, one register."""

    __slots__ = ("mode", "partial_sum", "_counter")

    def __init__(self, mode: MacMode = MacMode.MULTI_OPERAND):
        self.mode = mode
        self.partial_sum = 0
        self._counter = fxp.SatCounter()

    @property
    def saturation_events(self) -> int:
        return self._counter.events

    def multi_operand(self, a, b) -> int:
        """Sum of 8 lane products through the balanced adder tree.

        The partial-sum register is untouched.
        """
        if self.mode is not MacMode.MULTI_OPERAND:
            raise MacModeError("unit is in multi-adder mode")
        prods = [fxp.mul(int(a[i]), int(b[i])) for i in range(8)]
        return fxp.tree_sum8(prods, self._counter)

    def multi_adder(self, a, b_scalar: int) -> None:
        """Accumulate the 8 products of lanes a with one scalar.

        The 8 products pass through the same balanced tree, then one
        saturating add folds the result into the partial-sum register.
        """
        if self.mode is not MacMode.MULTI_ADDER:
            raise MacModeError("unit is in multi-operand mode")
        prods = [fxp.mul(int(a[i]), int(b_scalar)) for i in range(8)]
        s = fxp.tree_sum8(prods, self._counter)
        self.partial_sum = fxp.acc_add(self.partial_sum, s, self._counter)

    def clear(self) -> None:
        self.partial_sum = 0


def dadda_sum9(values, counter: fxp.SatCounter | None = None) -> int:
    """9-operand final adder: exact sum, saturated once on the result."""
    s = 0
    for v in values:
        s += int(v)
    if s > fxp.ACC_MAX:
        if counter is not None:
            counter.events += 1
        return fxp.ACC_MAX
    if s < fxp.ACC_MIN:
        if counter is not None:
            counter.events += 1
        return fxp.ACC_MIN
    return s


class PuArray:
    """The 3x3 array of MAC units plus the final-adder stage.

    Owned exclusively by one simulated device; whole-pass kernel
    executions report their clipping events into ``kernel_events``.
    """

    def __init__(self):
        self.units = [[MacUnit() for _ in range(3)] for _ in range(3)]
        self.final_adder_counter = fxp.SatCounter()
        self.kernel_events = 0

    def __getitem__(self, kl) -> MacUnit:
        k, l = kl
        return self.units[k][l]

    def set_mode(self, mode: MacMode) -> None:
        for row in self.units:
            for u in row:
                u.mode = mode

    def clear_partials(self) -> None:
        for row in self.units:
            for u in row:
                u.clear()

    def dadda_sum9(self, values) -> int:
        return dadda_sum9(values, self.final_adder_counter)

    def add_kernel_events(self, n: int) -> None:
        self.kernel_events += int(n)

    @property
    def saturation_events(self) -> int:
        per_unit = sum(u.saturation_events for row in self.units for u in row)
        return per_unit + self.final_adder_counter.events + self.kernel_events
