"""Class-balanced greedy replay buffer and task streams.

The buffer greedily keeps the class distribution balanced within a
fixed byte budget: while space remains every offer is stored; once
full, an offer from an under-represented class replaces the oldest
sample of the currently largest class (ties broken toward the lowest
class id), and offers from classes already at the maximum count are
turned away. With the default 6,144,000-byte budget exactly 1,000
32x32 RGB samples fit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import ConfigError
from .tensors import FeatureMap

DEFAULT_CAPACITY_BYTES = 6_144_000


@dataclass
class StoredSample:
    image: FeatureMap
    label: int
    seq: int


class ReplayBuffer:
    def __init__(self, capacity_bytes: int = DEFAULT_CAPACITY_BYTES):
        self.capacity_bytes = capacity_bytes
        self.slots: list[StoredSample] = []
        self.per_class_counts: dict[int, int] = {}
        self._class_slots: dict[int, deque] = {}
        self._seq = 0
        self.used_bytes = 0

    def __len__(self) -> int:
        return len(self.slots)

    def insert(self, image: FeatureMap, label: int):
        """Offer one sample; returns the displaced (image, label) or None.

        A rejected offer is returned as the displaced sample itself.
        """
        self._seq += 1
        if self.used_bytes + image.nbytes <= self.capacity_bytes:
            slot = len(self.slots)
            self.slots.append(StoredSample(image, label, self._seq))
            self.used_bytes += image.nbytes
            self.per_class_counts[label] = self.per_class_counts.get(label, 0) + 1
            self._class_slots.setdefault(label, deque()).append(slot)
            return None
        if not self.slots:  # capacity smaller than a single sample
            return image, label
        max_count = max(self.per_class_counts.values())
        if self.per_class_counts.get(label, 0) >= max_count:
            return image, label
        victim_class = min(c for c, n in self.per_class_counts.items()
                           if n == max_count)
        slot = self._class_slots[victim_class].popleft()
        evicted = self.slots[slot]
        self.per_class_counts[victim_class] -= 1
        if self.per_class_counts[victim_class] == 0:
            del self.per_class_counts[victim_class]
            del self._class_slots[victim_class]
        self.used_bytes -= evicted.image.nbytes
        self.slots[slot] = StoredSample(image, label, self._seq)
        self.used_bytes += image.nbytes
        self.per_class_counts[label] = self.per_class_counts.get(label, 0) + 1
        self._class_slots.setdefault(label, deque()).append(slot)
        return evicted.image, evicted.label

    def samples(self) -> list[tuple[FeatureMap, int]]:
        """Stored samples in slot order."""
        return [(s.image, s.label) for s in self.slots]

    def balance_spread(self) -> int:
        """max - min per-class count over classes present."""
        if not self.per_class_counts:
            return 0
        counts = self.per_class_counts.values()
        return max(counts) - min(counts)


def gdumb_insert(buf: ReplayBuffer, image: FeatureMap, label: int):
    return buf.insert(image, label)


@dataclass
class Task:
    index: int
    classes: list[int]
    samples: list = field(default_factory=list)


def build_task_stream(samples, n_tasks: int, classes_per_task: int) -> list[Task]:
    """Partition labeled samples into tasks of disjoint, ascending classes."""
    by_class: dict[int, list] = {}
    for image, label in samples:
        by_class.setdefault(label, []).append((image, label))
    classes = sorted(by_class)
    needed = n_tasks * classes_per_task
    if len(classes) < needed:
        raise ConfigError(
            f"dataset has {len(classes)} classes, stream needs {needed}")
    tasks = []
    for t in range(n_tasks):
        cls = classes[t * classes_per_task:(t + 1) * classes_per_task]
        samp = [s for c in cls for s in by_class[c]]
        tasks.append(Task(index=t, classes=list(cls), samples=samp))
    return tasks
