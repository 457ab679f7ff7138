"""Uniform time grid shared by all tabulated quantities."""

from dataclasses import dataclass

import numpy as np

from .errors import GridError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * dt`` for ``k = 0 .. n``."""

    dt: float
    n: int

    @classmethod
    def from_tmax(cls, t_max, dt):
        n = int(round(t_max / dt))
        if n < 1 or abs(n * dt - t_max) > dt / 100:
            raise GridError(f"t_max={t_max} is not a multiple of dt={dt}")
        return cls(float(dt), n)

    @property
    def t(self):
        return np.arange(self.n + 1) * self.dt

    @property
    def t_max(self):
        return self.n * self.dt

    def __len__(self):
        return self.n + 1

    def index(self, t):
        """Snap ``t`` to its grid index; off-grid by more than dt/100 is an error."""
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > self.dt / 100 or not 0 <= k <= self.n:
            raise GridError(f"time {t} is not on the grid (dt={self.dt}, t_max={self.t_max})")
        return k

    def refine(self, factor=2):
        return TimeGrid(self.dt / factor, self.n * factor)
