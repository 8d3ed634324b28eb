"""Token samplers: entropy-guided k-guard (ENkG) sampling and the static
baselines it is compared against (greedy, temperature, top-k, top-p and the
combined top-k-then-top-p).

Every candidate set is a prefix of the descending-sorted token order, so a
candidate set is fully described by its length.  Random draws come from an
immutable RngState; each sampler returns the advanced state as the last item
of its result.  One uniform draw is consumed per sampled token.
"""
from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np

from .distributions import (ProbabilityDistribution, SortedDistribution, as_distribution,
                            normalized_entropy, sort_descending, validate)
from .errors import (InvalidParams, InvalidPTarget, InvalidTemperature,
                     ZeroMassPrefix, DimensionMismatch)

# Cumulative mass within this distance below the target counts as reaching it.
# Sequential float sums of exact decimal masses (0.4 + 0.3 + 0.2) land a few
# ulps short of the target otherwise.
NUCLEUS_TOLERANCE = 1e-9

# Tolerance on the mass of a renormalized candidate set.
RENORM_TOLERANCE = 1e-9

# --------- ENkG parameters

@dataclass(frozen=True)
class ENkGParams:
    """Hyperparameters of ENkG sampling.  The defaults are the "Mid" setting:
    normalized entropies below h_low map to p_low, those above h_high map to
    p_high, and at least k_guard candidates are always kept.  n_max, if given,
    caps the candidate count after the guard is applied.
    """
    h_low: float = 0.25
    h_high: float = 0.6
    p_low: float = 0.65
    p_high: float = 0.9
    k_guard: int = 3
    n_max: Optional[int] = None

    def __post_init__(self):
        errors = []
        if not (0.0 <= self.h_low < self.h_high <= 1.0):
            errors.append(f'need 0 <= h_low < h_high <= 1, got h_low={self.h_low}, h_high={self.h_high}')
        if not (0.0 < self.p_low <= self.p_high <= 1.0):
            errors.append(f'need 0 < p_low <= p_high <= 1, got p_low={self.p_low}, p_high={self.p_high}')
        if int(self.k_guard) != self.k_guard or self.k_guard < 1:
            errors.append(f'k_guard must be a positive integer, got {self.k_guard}')
        if self.n_max is not None:
            if int(self.n_max) != self.n_max or self.n_max < 1:
                errors.append(f'n_max must be a positive integer, got {self.n_max}')
            elif self.n_max < self.k_guard:
                errors.append(f'n_max ({self.n_max}) must not be smaller than k_guard ({self.k_guard})')
        if errors:
            raise InvalidParams('Invalid ENkG parameters: ' + '; '.join(errors))


@dataclass(frozen=True)
class AffineMap:
    """Slope and intercept of the entropy to nucleus-mass map.
    """
    alpha: float
    beta: float

    @classmethod
    def from_bounds(cls, h_low, h_high, p_low, p_high):
        if not h_high > h_low:
            raise InvalidParams(f'Degenerate entropy band: h_low={h_low}, h_high={h_high}.')
        alpha = (p_high - p_low) / (h_high - h_low)
        return cls(alpha, p_low - alpha * h_low)

    def __call__(self, h_norm):
        return self.alpha * h_norm + self.beta


@dataclass(frozen=True)
class CandidateSet:
    """The first 'cutoff' tokens of the sorted order with their renormalized
    probabilities.  'cdf' holds the cumulative sums used for inverse-CDF draws.
    """
    cutoff: int
    renorm_probs: np.ndarray
    permutation: np.ndarray
    cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cdf = np.cumsum(self.renorm_probs)
        cdf.setflags(write=False)
        object.__setattr__(self, 'cdf', cdf)

    def tokens(self):
        """Candidate token ids in rank order.
        """
        return [int(t) for t in self.permutation]

    def as_sorted(self):
        """The candidate set viewed as a sorted distribution of its own.
        """
        return SortedDistribution(self.renorm_probs, self.permutation)


@dataclass(frozen=True)
class SampleDiagnostics:
    """What a sampler saw and decided for one token.  'p_target' is NaN for
    samplers without a mass target.
    """
    normalized_entropy: float
    p_target: float
    cutoff: int
    guard_triggered: bool = False

    def as_dict(self):
        return {
            'h_norm': self.normalized_entropy,
            'p_target': None if math.isnan(self.p_target) else self.p_target,
            'cutoff': self.cutoff,
            'guard_triggered': self.guard_triggered,
        }

# --------- Sampler configurations

class SamplerConfig:
    """Base of the tagged choice of sampling strategies.
    """
    name = ''

    def label(self):
        """Short description used in tables, e.g. 'top_k(k=30)'.
        """
        return self.name


@dataclass(frozen=True)
class Greedy(SamplerConfig):
    name = 'greedy'


@dataclass(frozen=True)
class Temperature(SamplerConfig):
    t: float = 1.0
    name = 'temperature'

    def __post_init__(self):
        if not (self.t > 0.0) or not math.isfinite(self.t):
            raise InvalidTemperature(f'Temperature must be positive, got {self.t}.')

    def label(self):
        return f'temperature(t={self.t:g})'


@dataclass(frozen=True)
class TopK(SamplerConfig):
    k: int = 30
    name = 'top_k'

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidParams(f'k must be a positive integer, got {self.k}.')

    def label(self):
        return f'top_k(k={self.k})'


@dataclass(frozen=True)
class TopP(SamplerConfig):
    p: float = 0.8
    name = 'top_p'

    def __post_init__(self):
        check_p_target(self.p)

    def label(self):
        return f'top_p(p={self.p:g})'


@dataclass(frozen=True)
class TopPK(SamplerConfig):
    p: float = 0.8
    k: int = 1000
    name = 'top_pk'

    def __post_init__(self):
        check_p_target(self.p)
        if int(self.k) != self.k or self.k < 1:
            raise InvalidParams(f'k must be a positive integer, got {self.k}.')

    def label(self):
        return f'top_pk(p={self.p:g},k={self.k})'


@dataclass(frozen=True)
class ENkG(SamplerConfig):
    params: ENkGParams = field(default_factory=ENkGParams)
    name = 'enkg'

    def label(self):
        pr = self.params
        lbl = f'enkg(h={pr.h_low:g}/{pr.h_high:g},p={pr.p_low:g}/{pr.p_high:g},kg={pr.k_guard}'
        if pr.n_max is not None:
            lbl += f',n_max={pr.n_max}'
        return lbl + ')'

# --------- Building blocks of ENkG

def check_p_target(p_target):
    if not (0.0 < p_target <= 1.0):
        raise InvalidPTarget(f'Target mass must be in (0, 1], got {p_target}.')

def affine_from_params(params):
    """Returns the AffineMap (alpha, beta) for 'params'.
    """
    return AffineMap.from_bounds(params.h_low, params.h_high, params.p_low, params.p_high)

def map_entropy_to_p(h_norm, params):
    """Maps a normalized entropy to the nucleus mass target,
    clip(alpha * h_norm + beta, p_low, p_high).  The band ends are returned
    exactly; inside the band the map is evaluated relative to h_low, which is
    the same line as alpha * h + beta.
    """
    amap = affine_from_params(params)
    if h_norm <= params.h_low:
        return params.p_low
    if h_norm >= params.h_high:
        return params.p_high
    p = params.p_low + amap.alpha * (h_norm - params.h_low)
    return min(max(p, params.p_low), params.p_high)

def nucleus_cutoff(sorted_dist, p_target):
    """Length of the shortest prefix of 'sorted_dist' whose mass reaches
    'p_target'.  Returns V if the accumulated mass never gets there.
    """
    check_p_target(p_target)
    cums = np.cumsum(sorted_dist.sorted_probs)
    idx = int(np.searchsorted(cums, p_target - NUCLEUS_TOLERANCE, side='left'))
    return min(idx + 1, cums.size)

def apply_k_guard(cutoff, params, vocab):
    """Raises 'cutoff' to the guard size, then lowers it to n_max if set.
    The vocabulary size bounds both.
    """
    c = max(cutoff, min(params.k_guard, vocab))
    if params.n_max is not None:
        c = min(c, min(params.n_max, vocab))
    return min(max(c, 1), vocab)

def truncate_renormalize(sorted_dist, cutoff):
    """CandidateSet made of the first 'cutoff' sorted tokens, renormalized.
    """
    V = sorted_dist.sorted_probs.size
    if not (1 <= cutoff <= V):
        raise DimensionMismatch(f'Cutoff {cutoff} outside [1, {V}].')
    prefix = sorted_dist.sorted_probs[:cutoff]
    total = prefix.sum()
    if not total > 0.0:
        raise ZeroMassPrefix(f'The top {cutoff} tokens carry no probability mass.')
    q = prefix / total
    q.setflags(write=False)
    perm = np.array(sorted_dist.permutation[:cutoff])
    perm.setflags(write=False)
    return CandidateSet(int(cutoff), q, perm)

def _last_positive_rank(candidates):
    return int(np.flatnonzero(candidates.renorm_probs > 0.0)[-1])

def sample_from(candidates, rng):
    """Draws one token by inverse CDF.  Rank r owns the half-open interval
    [cdf[r-1], cdf[r]).  Returns (token, advanced rng).
    """
    u, rng = rng.uniform()
    r = int(np.searchsorted(candidates.cdf, u, side='right'))
    if r >= candidates.cutoff or candidates.renorm_probs[r] == 0.0:
        # u fell past the rounded total mass
        r = _last_positive_rank(candidates)
    return int(candidates.permutation[r]), rng

def sample_many(candidates, rng, n):
    """'n' draws from 'candidates', identical to 'n' successive sample_from()
    calls.  Returns (array of tokens, advanced rng).
    """
    us, rng = rng.uniforms(n)
    ranks = np.searchsorted(candidates.cdf, us, side='right')
    last = _last_positive_rank(candidates)
    ranks = np.minimum(ranks, last)
    return candidates.permutation[ranks], rng

def enkg_candidates(dist, params):
    """Runs the deterministic part of ENkG on 'dist'.  Returns
    (CandidateSet, SampleDiagnostics).
    """
    h_norm = normalized_entropy(dist)
    p_target = map_entropy_to_p(h_norm, params)
    sorted_dist = sort_descending(dist)
    nucleus = nucleus_cutoff(sorted_dist, p_target)
    V = sorted_dist.V
    cutoff = apply_k_guard(nucleus, params, V)
    guard_triggered = max(nucleus, min(params.k_guard, V)) > nucleus
    candidates = truncate_renormalize(sorted_dist, cutoff)
    return candidates, SampleDiagnostics(h_norm, p_target, cutoff, bool(guard_triggered))

def enkg_sample(dist, params, rng):
    """ENkG sampling of one token.  Returns (token, SampleDiagnostics, rng).
    """
    candidates, diag = enkg_candidates(dist, params)
    token, rng = sample_from(candidates, rng)
    return token, diag, rng

# --------- Static baselines

def greedy_sample(dist):
    """Most probable token; ties go to the lowest token id.
    """
    dist = as_distribution(dist)
    validate(dist)
    return int(np.argmax(dist.probs))

def top_k_candidates(dist, k):
    sorted_dist = sort_descending(dist)
    return truncate_renormalize(sorted_dist, min(k, sorted_dist.V))

def top_k_sample(dist, k, rng):
    """Samples from the renormalized top-min(k, V) tokens.  Returns (token, rng).
    """
    return sample_from(top_k_candidates(dist, k), rng)

def top_p_candidates(dist, p):
    check_p_target(p)
    sorted_dist = sort_descending(dist)
    return truncate_renormalize(sorted_dist, nucleus_cutoff(sorted_dist, p))

def top_p_sample(dist, p, rng):
    """Nucleus sampling at mass 'p'.  Returns (token, rng).
    """
    return sample_from(top_p_candidates(dist, p), rng)

def top_pk_candidates(dist, p, k):
    """Top-k truncation, then the nucleus at 'p' inside the renormalized top-k.
    """
    check_p_target(p)
    first = top_k_candidates(dist, k)
    inner = first.as_sorted()
    return truncate_renormalize(inner, nucleus_cutoff(inner, p))

def top_pk_sample(dist, p, k, rng):
    """Combined top-k then top-p sampling.  Returns (token, rng).
    """
    return sample_from(top_pk_candidates(dist, p, k), rng)

def temperature_candidates(dist, t):
    if not (t > 0.0) or not math.isfinite(t):
        raise InvalidTemperature(f'Temperature must be positive, got {t}.')
    dist = as_distribution(dist)
    validate(dist)
    # scale by the maximum first so small temperatures do not underflow to 0
    w = np.power(dist.probs / dist.probs.max(), 1.0 / t)
    scaled = ProbabilityDistribution(w / w.sum())
    sorted_dist = sort_descending(scaled)
    return truncate_renormalize(sorted_dist, sorted_dist.V)

def temperature_sample(dist, t, rng):
    """Samples the whole support after reweighting the probabilities to the
    power 1/t.  Returns (token, rng).
    """
    return sample_from(temperature_candidates(dist, t), rng)

# --------- Dispatch

def sample(config, dist, rng):
    """Samples one token from 'dist' with the strategy in 'config'.
    Returns (token, SampleDiagnostics, rng).
    """
    if isinstance(config, ENkG):
        return enkg_sample(dist, config.params, rng)

    h_norm = normalized_entropy(dist)
    if isinstance(config, Greedy):
        return greedy_sample(dist), SampleDiagnostics(h_norm, math.nan, 1), rng
    if isinstance(config, TopK):
        candidates, p_target = top_k_candidates(dist, config.k), math.nan
    elif isinstance(config, TopP):
        candidates, p_target = top_p_candidates(dist, config.p), config.p
    elif isinstance(config, TopPK):
        candidates, p_target = top_pk_candidates(dist, config.p, config.k), config.p
    elif isinstance(config, Temperature):
        candidates, p_target = temperature_candidates(dist, config.t), math.nan
    else:
        raise InvalidParams(f'Unknown sampler configuration: {config!r}')

    token, rng = sample_from(candidates, rng)
    return token, SampleDiagnostics(h_norm, p_target, candidates.cutoff), rng
