"""Primitives for logit vectors and categorical distributions over a codebook:
softmax, validation, Shannon entropy, normalized entropy and a deterministic
descending sort.

All arithmetic is done in 64-bit floating point whatever the precision of the
incoming values.  Entropies are in nats; the base cancels in the normalized
entropy.  Arrays held by the types below are read-only so instances can be
shared freely.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import (NonFiniteInput, InvalidTemperature, NegativeProbability,
                     NonFiniteProbability, MassNotNormalized, DimensionMismatch)

# Absolute tolerance on the total probability mass.  Wide enough for
# distributions that went through a 32-bit trace.
MASS_TOLERANCE = 1e-6

# Token ids are plain integers in [0, V).
TokenId = int

def _frozen_array(values):
    arr = np.array(values, dtype=np.float64).ravel()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LogitVector:
    """Unnormalized scores over a codebook of size V.
    """
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.size < 2:
            raise DimensionMismatch(f'Logit vector needs at least 2 entries, got {arr.size}.')
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput('Logit vector contains NaN or infinite entries.')
        object.__setattr__(self, 'values', arr)

    @property
    def V(self):
        return self.values.size


@dataclass(frozen=True)
class ProbabilityDistribution:
    """Categorical distribution over a codebook of size V.  Construction only
    converts the values; use validate() or from_probs() to check them.
    """
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'probs', _frozen_array(self.probs))

    @classmethod
    def from_probs(cls, probs):
        """Builds and validates a distribution.
        """
        dist = cls(probs)
        validate(dist)
        return dist

    @classmethod
    def uniform(cls, V):
        return cls(np.full(V, 1.0 / V))

    @classmethod
    def one_hot(cls, V, token):
        probs = np.zeros(V)
        probs[token] = 1.0
        return cls(probs)

    @property
    def V(self):
        return self.probs.size

    def __len__(self):
        return self.probs.size


@dataclass(frozen=True)
class SortedDistribution:
    """Probabilities in non-increasing order together with the permutation that
    maps a rank to the original token id.  Ties are ordered by ascending token id.
    """
    sorted_probs: np.ndarray
    permutation: np.ndarray

    @property
    def V(self):
        return self.sorted_probs.size

    def reconstruct(self):
        """Returns the probabilities in original token order.
        """
        probs = np.empty_like(self.sorted_probs)
        probs[self.permutation] = self.sorted_probs
        return probs


def as_distribution(dist):
    if isinstance(dist, ProbabilityDistribution):
        return dist
    return ProbabilityDistribution(dist)

def softmax(logits, temperature=1.0):
    """Converts 'logits' (a LogitVector or array-like) into a
    ProbabilityDistribution at 'temperature'.  The maximum scaled logit is
    subtracted before exponentiation so large logits do not overflow.
    """
    if not isinstance(logits, LogitVector):
        logits = LogitVector(logits)
    temperature = float(temperature)
    if not (temperature > 0.0) or not math.isfinite(temperature):
        raise InvalidTemperature(f'Temperature must be a positive finite number, got {temperature}.')

    x = logits.values / temperature
    x = x - x.max()
    e = np.exp(x)
    return ProbabilityDistribution(e / e.sum())

def validate(dist):
    """Raises an error unless 'dist' (a ProbabilityDistribution or array-like)
    holds finite, non-negative probabilities summing to 1 within MASS_TOLERANCE.
    """
    p = as_distribution(dist).probs
    if not np.all(np.isfinite(p)):
        raise NonFiniteProbability('Distribution contains NaN or infinite probabilities.')
    if np.any(p < 0.0):
        raise NegativeProbability(f'Distribution contains a negative probability: {p.min()}.')
    total = p.sum()
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise MassNotNormalized(f'Probabilities sum to {total:.9g}, not 1.')

def entropy(dist):
    """Shannon entropy in nats, with 0 * ln 0 taken as 0.  Result lies in
    [0, ln V].
    """
    dist = as_distribution(dist)
    validate(dist)
    p = dist.probs
    nz = p[p > 0.0]
    h = -float(np.dot(nz, np.log(nz)))
    # clamp rounding noise at the two ends of the range
    return min(max(h, 0.0), math.log(p.size))

def normalized_entropy(dist):
    """Entropy divided by its maximum, ln V.  1 for the uniform distribution,
    0 for a one-hot distribution.
    """
    dist = as_distribution(dist)
    if dist.V < 2:
        raise DimensionMismatch('Normalized entropy needs a codebook of at least 2 tokens.')
    return entropy(dist) / math.log(dist.V)

def sort_descending(dist):
    """Sorts probabilities in non-increasing order.  The stable sort on the
    negated values keeps tied tokens in ascending id order.
    """
    dist = as_distribution(dist)
    validate(dist)
    perm = np.argsort(-dist.probs, kind='stable')
    sorted_probs = dist.probs[perm]
    sorted_probs.setflags(write=False)
    perm.setflags(write=False)
    return SortedDistribution(sorted_probs, perm)
