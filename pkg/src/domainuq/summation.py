"""Order-fixed compensated accumulation of arrays (Neumaier's variant of Kahan)."""

from __future__ import annotations

import numpy as np


class NeumaierSum:
    """Elementwise compensated running sum of equally shaped arrays."""

    def __init__(self, shape=()):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)
        self.count = 0

    def add(self, values) -> None:
        values = np.asarray(values, dtype=float)
        t = self.total + values
        big = np.abs(self.total) >= np.abs(values)
        self.comp += np.where(big, (self.total - t) + values, (values - t) + self.total)
        self.total = t
        self.count += 1

    def add_rows(self, rows) -> None:
        """Add each row of a 2D array in order."""
        for row in np.asarray(rows, dtype=float):
            self.add(row)

    def value(self) -> np.ndarray:
        return self.total + self.comp

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("mean of an empty sum")
        return self.value() / self.count
