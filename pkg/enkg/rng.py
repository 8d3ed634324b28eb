"""Deterministic pseudo-random numbers: xoshiro256** seeded through splitmix64.

The generator state is an immutable value.  Every draw returns the drawn value
together with the advanced state, so a stream can be handed from one call to
the next without any shared mutable object.  Streams are bit-identical across
platforms because all arithmetic is done on Python integers masked to 64 bits.
"""
from collections import namedtuple

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF

# splitmix64 constants
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MULT_1 = 0xBF58476D1CE4E5B9
MIX_MULT_2 = 0x94D049BB133111EB

# Frame key reserved for scene initialisation draws.
INIT_FRAME_KEY = 0xFFFFFFFF

# 2**-53, converts the top 53 bits of a draw into a double in [0, 1).
_INV_2_53 = 1.0 / (1 << 53)

def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64

def splitmix64(state):
    """One splitmix64 step.  Returns (new_state, output).
    """
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * MIX_MULT_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MULT_2) & MASK64
    return state, z ^ (z >> 31)

def mix64(x):
    """Stateless splitmix64 mixing of a single 64-bit value.
    """
    return splitmix64(x & MASK64)[1]

def stream_seed(seed, frame, site):
    """Seed of the substream that serves site 'site' of frame 'frame' in a run
    seeded by 'seed'.  Substreams make site-parallel evaluation reproduce the
    serial result exactly.
    """
    h = mix64(seed)
    h = mix64(h ^ (frame & MASK64))
    return mix64(h ^ (site & MASK64))


class RngState(namedtuple('RngState', ('seed', 's0', 's1', 's2', 's3'))):
    """xoshiro256** state plus the seed it was created from.
    """

    @classmethod
    def from_seed(cls, seed):
        """Expands a 64-bit 'seed' into the 256-bit state with four splitmix64
        outputs.
        """
        seed = int(seed) & MASK64
        sm = seed
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        return cls(seed, *words)

    @classmethod
    def for_site(cls, seed, frame, site):
        """Generator for the (seed, frame, site) substream.
        """
        return cls.from_seed(stream_seed(seed, frame, site))

    def next_u64(self):
        """Returns (64-bit output, advanced state).
        """
        seed, s0, s1, s2, s3 = self
        result = (rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = rotl(s3, 45)
        return result, self.__class__(seed, s0, s1, s2, s3)

    def uniform(self):
        """Returns (u, advanced state) with u a double in [0, 1).
        """
        value, state = self.next_u64()
        return (value >> 11) * _INV_2_53, state

    def uniforms(self, n):
        """Returns (array of 'n' uniforms, advanced state); the same values as
        'n' successive calls of uniform().
        """
        seed, s0, s1, s2, s3 = self
        out = np.empty(n, dtype=np.float64)
        for j in range(n):
            # inlined next_u64() for speed on long runs of draws
            result = (rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
            t = (s1 << 17) & MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = rotl(s3, 45)
            out[j] = (result >> 11) * _INV_2_53
        return out, self.__class__(seed, s0, s1, s2, s3)
