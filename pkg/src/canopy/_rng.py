"""SplitMix64, shared bit-for-bit with the compiled kernel.

Feature subsampling inside tree construction draws from this generator so
that the Cython and pure-Python backends grow identical trees.
"""

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed=0):
        self.state = int(seed) & _MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, n):
        """Integer in [0, n)."""
        return self.next() % n


def derive_seed(*keys):
    """Map a tuple of non-negative ints to a 64-bit seed."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
