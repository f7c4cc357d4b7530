"""Activation accounting for one inference.

The forward pass reports every stage output it keeps alive with ``hold``
and releases it with ``drop`` once no later stage reads it.  ``peak`` is
then the high-water mark of simultaneously live activation bytes.  With
``reuse=False`` nothing is ever released, which models a runtime that
never recycles activation buffers.
"""
from __future__ import annotations

import numpy as np


class Arena:
    def __init__(self, reuse: bool = True):
        self.reuse = reuse
        self.live = 0
        self.peak = 0
        self.total = 0
        # keeps a reference so ids cannot be recycled while held
        self._held: dict[int, np.ndarray] = {}

    def hold(self, array: np.ndarray) -> np.ndarray:
        key = id(array)
        if key not in self._held:
            self._held[key] = array
            self.live += array.nbytes
            self.total += array.nbytes
            self.peak = max(self.peak, self.live)
        return array

    def drop(self, *arrays: np.ndarray) -> None:
        if not self.reuse:
            return
        for array in arrays:
            held = self._held.pop(id(array), None)
            if held is not None:
                self.live -= held.nbytes

    def release_all(self) -> None:
        self._held.clear()
        self.live = 0


class NullArena(Arena):
    """Arena that records nothing; the default for plain inference."""

    def hold(self, array):
        return array

    def drop(self, *arrays):
        pass
