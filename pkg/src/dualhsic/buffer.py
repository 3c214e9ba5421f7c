"""Fixed-capacity rehearsal memory filled by reservoir sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyBufferError(LookupError):
    pass


@dataclass
class BufferEntry:
    x: np.ndarray
    y: int
    task_id: int
    logits: np.ndarray | None = None
    insertion_index: int = -1


class RehearsalBuffer:
    """Reservoir-sampled store of past examples.

    After ``n >= capacity`` observations every observed example is resident
    with probability ``capacity / n``.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.entries: list[BufferEntry] = []
        self.observed = 0
        self.rng = rng

    def __len__(self):
        return len(self.entries)

    def observe(self, entry: BufferEntry) -> "RehearsalBuffer":
        if self.capacity == 0:
            return self
        entry.insertion_index = self.observed
        if self.observed < self.capacity:
            self.entries.append(entry)
        else:
            r = int(self.rng.integers(0, self.observed + 1))
            if r < self.capacity:
                self.entries[r] = entry
        self.observed += 1
        return self

    def observe_batch(self, x, y, task_id: int, logits=None) -> "RehearsalBuffer":
        for i in range(len(x)):
            stored = None if logits is None else np.array(logits[i], dtype=np.float64)
            self.observe(BufferEntry(x=np.array(x[i], dtype=np.float64), y=int(y[i]), task_id=task_id, logits=stored))
        return self

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[BufferEntry]:
        """Uniform mini-batch; with replacement only when the buffer is smaller than the batch."""
        if not self.entries:
            raise EmptyBufferError("cannot sample from an empty buffer")
        n = len(self.entries)
        idx = rng.choice(n, size=batch_size, replace=n < batch_size)
        return [self.entries[i] for i in idx]

    def sample_arrays(self, batch_size: int, rng: np.random.Generator):
        return stack_entries(self.sample(batch_size, rng))


def stack_entries(entries: list[BufferEntry]):
    """``(x, y, logits)`` arrays for a list of entries; ``logits`` is None unless all carry them."""
    x = np.stack([e.x for e in entries])
    y = np.array([e.y for e in entries], dtype=np.int64)
    logits = None
    if entries and all(e.logits is not None for e in entries):
        logits = np.stack([e.logits for e in entries])
    return x, y, logits
