"""Reproducible random-number streams.

Every randomized operation in the package takes an explicit :class:`RngStream`
and is a pure function of its inputs: calling twice with the same stream gives
identical output, on any platform and with any degree of parallelism.
Substreams are derived structurally (replicate index, class, population kind),
never from scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["RngStream"]


@dataclass(frozen=True)
class RngStream:
    """A named position in a reproducible family of random streams.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    key : tuple of int
        Stream identifier. The empty tuple is the root stream; derived
        streams extend the key. A plain integer is accepted and treated
        as a length-one key.
    """

    seed: int
    key: tuple[int, ...] = field(default=())

    def __post_init__(self):
        key = self.key
        if isinstance(key, (int, np.integer)):
            key = (int(key),)
        else:
            key = tuple(int(k) for k in key)
        object.__setattr__(self, "key", key)
        object.__setattr__(self, "seed", int(self.seed))

    def child(self, *ids: int) -> "RngStream":
        """Derive a substream by extending the key with ``ids``."""
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Fresh NumPy generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))
