import itertools

import numpy as np
import pytest
from scipy.stats import chisquare

from enkg.distributions import ProbabilityDistribution, SortedDistribution, sort_descending
from enkg.errors import (InvalidParams, InvalidPTarget, InvalidTemperature, ZeroMassPrefix,
                         DimensionMismatch, MassNotNormalized, ConfigError)
from enkg.rng import RngState
from enkg.samplers import (ENkGParams, AffineMap, affine_from_params, map_entropy_to_p,
                           nucleus_cutoff, apply_k_guard, truncate_renormalize, sample_from,
                           sample_many, enkg_candidates, enkg_sample, greedy_sample,
                           top_k_candidates, top_k_sample, top_p_candidates, top_pk_candidates,
                           temperature_candidates, temperature_sample, sample, NUCLEUS_TOLERANCE,
                           Greedy, Temperature, TopK, TopP, TopPK, ENkG)

MID = ENkGParams()
WORKED = [0.4, 0.3, 0.2, 0.1]


def random_dist(rng, V, sharpness=1.0):
    # larger sharpness concentrates the mass on fewer tokens
    w = rng.random(V) ** sharpness
    return w / w.sum()


def random_params(rng):
    h_low, h_high = sorted(rng.uniform(0, 1, size=2))
    if h_high - h_low < 1e-3:
        h_high = min(h_low + 0.1, 1.0)
        h_low = h_high - 0.1
    p_low, p_high = sorted(rng.uniform(0.01, 1.0, size=2))
    k_guard = int(rng.integers(1, 20))
    n_max = None if rng.random() < 0.5 else k_guard + int(rng.integers(0, 50))
    return ENkGParams(h_low, h_high, p_low, p_high, k_guard, n_max)


# ---------------------------------------------------------------- parameters

def test_affine_constants_of_defaults():
    amap = affine_from_params(MID)
    assert amap.alpha == pytest.approx(0.714286, abs=1e-6)
    assert amap.beta == pytest.approx(0.471429, abs=1e-6)


def test_affine_identity_map():
    amap = AffineMap.from_bounds(0.0, 1.0, 0.0, 1.0)
    assert amap.alpha == 1.0 and amap.beta == 0.0
    assert amap(0.37) == 0.37


def test_affine_degenerate_band():
    with pytest.raises(InvalidParams):
        AffineMap.from_bounds(0.5, 0.5, 0.65, 0.9)


@pytest.mark.parametrize('kwargs', [
    dict(h_low=0.6, h_high=0.25),
    dict(h_low=0.5, h_high=0.5),
    dict(p_low=0.0),
    dict(p_low=0.95, p_high=0.9),
    dict(p_high=1.5),
    dict(k_guard=0),
    dict(k_guard=2.5),
    dict(n_max=2),
])
def test_invalid_params(kwargs):
    with pytest.raises(InvalidParams):
        ENkGParams(**kwargs)


def test_invalid_params_is_a_config_error():
    with pytest.raises(ConfigError):
        ENkGParams(k_guard=0)


def test_map_entropy_to_p_band_ends_are_exact():
    assert map_entropy_to_p(0.25, MID) == 0.65
    assert map_entropy_to_p(0.6, MID) == 0.9
    assert map_entropy_to_p(0.0, MID) == 0.65
    assert map_entropy_to_p(1.0, MID) == 0.9
    assert map_entropy_to_p(0.425, MID) == pytest.approx(0.775, abs=1e-12)


def test_map_entropy_to_p_is_monotone_and_clipped():
    hs = np.linspace(0, 1, 201)
    ps = [map_entropy_to_p(h, MID) for h in hs]
    assert all(b >= a for a, b in zip(ps, ps[1:]))
    assert min(ps) == 0.65 and max(ps) == 0.9


# ---------------------------------------------------------------- nucleus

def test_worked_chain():
    cands, diag = enkg_candidates(WORKED, MID)
    assert diag.normalized_entropy == pytest.approx(0.923220, abs=1e-5)
    assert diag.p_target == 0.9
    assert nucleus_cutoff(sort_descending(WORKED), 0.9) == 3
    assert diag.cutoff == 3
    assert not diag.guard_triggered
    np.testing.assert_allclose(cands.renorm_probs, [4 / 9, 3 / 9, 2 / 9], atol=1e-12)
    assert cands.tokens() == [0, 1, 2]


@pytest.mark.parametrize('p, expected', [(0.4, 1), (0.5, 2), (0.7, 2), (0.71, 3), (1.0, 4)])
def test_nucleus_cutoff_examples(p, expected):
    assert nucleus_cutoff(sort_descending(WORKED), p) == expected


def test_nucleus_cutoff_when_mass_never_reaches_target():
    # rounding leaves the total a hair below 1
    p = np.full(10, 0.1)
    assert nucleus_cutoff(sort_descending(p), 1.0) == 10


@pytest.mark.parametrize('p', [0.0, -0.1, 1.01])
def test_nucleus_cutoff_bad_target(p):
    with pytest.raises(InvalidPTarget):
        nucleus_cutoff(sort_descending(WORKED), p)


def test_nucleus_minimality_against_exhaustive_search():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        V = int(rng.integers(2, 9))
        probs = random_dist(rng, V, sharpness=2.0)
        p_target = float(rng.uniform(0.05, 1.0))
        s = sort_descending(probs)
        cutoff = nucleus_cutoff(s, p_target)

        best = None
        for size in range(1, V + 1):
            subsets = itertools.combinations(range(V), size)
            heaviest = max(subsets, key=lambda sub: probs[list(sub)].sum())
            if probs[list(heaviest)].sum() >= p_target - NUCLEUS_TOLERANCE:
                best = heaviest
                break
        if best is None:
            best = tuple(range(V))
        assert cutoff == len(best)
        assert set(s.permutation[:cutoff]) == set(best)


# ---------------------------------------------------------------- guard

def test_guard_lifts_one_hot():
    cands, diag = enkg_candidates([1.0, 0.0, 0.0], MID)
    assert diag.cutoff == 3
    assert diag.guard_triggered
    assert diag.normalized_entropy == 0.0
    assert diag.p_target == 0.65
    np.testing.assert_array_equal(cands.renorm_probs, [1.0, 0.0, 0.0])
    # zero-probability candidates are never drawn
    rng = RngState.from_seed(1)
    for _ in range(100):
        token, rng = sample_from(cands, rng)
        assert token == 0


def test_guard_lifts_confident_distribution():
    cands, diag = enkg_candidates([0.97, 0.01, 0.01, 0.01], MID)
    assert diag.guard_triggered
    assert diag.cutoff == 3
    np.testing.assert_allclose(cands.renorm_probs, np.array([0.97, 0.01, 0.01]) / 0.99, atol=1e-12)


def test_guard_is_bounded_by_vocab():
    params = ENkGParams(k_guard=15)
    _, diag = enkg_candidates([0.5, 0.5], params)
    assert diag.cutoff == 2


def test_apply_k_guard_and_n_max():
    params = ENkGParams(k_guard=3, n_max=5)
    assert apply_k_guard(1, params, 100) == 3
    assert apply_k_guard(4, params, 100) == 4
    assert apply_k_guard(40, params, 100) == 5
    assert apply_k_guard(1, params, 2) == 2


def test_guard_floor_and_cap_on_random_inputs():
    rng = np.random.default_rng(12)
    violations = 0
    for n in range(10000):
        V = (4, 64, 4096)[n % 3]
        params = random_params(rng)
        probs = random_dist(rng, V, sharpness=float(rng.choice([1.0, 10.0, 50.0])))
        cands, diag = enkg_candidates(probs, params)
        size = cands.cutoff
        if size < min(params.k_guard, V):
            violations += 1
        if params.n_max is not None and size > min(params.n_max, V):
            violations += 1
        assert diag.cutoff == size
    assert violations == 0


# ---------------------------------------------------------------- degeneracies

@pytest.mark.parametrize('p', [0.5, 0.7, 0.8, 0.9, 1.0])
def test_enkg_with_flat_band_and_no_guard_is_top_p(p):
    params = ENkGParams(p_low=p, p_high=p, k_guard=1)
    rng = np.random.default_rng(int(p * 100))
    for _ in range(1000):
        probs = random_dist(rng, 64, sharpness=3.0)
        a, _ = enkg_candidates(probs, params)
        b = top_p_candidates(probs, p)
        assert a.cutoff == b.cutoff
        np.testing.assert_array_equal(a.permutation, b.permutation)
        np.testing.assert_array_equal(a.renorm_probs, b.renorm_probs)


@pytest.mark.parametrize('k', [30, 60, 90, 120, 150, 500])
def test_enkg_with_tiny_target_is_top_k(k):
    params = ENkGParams(p_low=1e-9, p_high=1e-9, k_guard=k)
    rng = np.random.default_rng(k)
    for _ in range(1000):
        probs = random_dist(rng, 4096, sharpness=2.0)
        a, _ = enkg_candidates(probs, params)
        b = top_k_candidates(probs, k)
        assert a.cutoff == b.cutoff == k
        np.testing.assert_array_equal(a.permutation, b.permutation)
        np.testing.assert_array_equal(a.renorm_probs, b.renorm_probs)


def test_top_k_one_is_greedy():
    rng = np.random.default_rng(13)
    state = RngState.from_seed(3)
    for _ in range(200):
        probs = random_dist(rng, 16)
        token, state = top_k_sample(probs, 1, state)
        assert token == greedy_sample(probs)


def test_greedy_ties_go_to_lowest_id():
    assert greedy_sample([0.25] * 4) == 0
    assert greedy_sample([0.1, 0.45, 0.0, 0.45]) == 1


def test_top_k_larger_than_vocab():
    cands = top_k_candidates(WORKED, 30)
    assert cands.cutoff == 4


def test_top_pk_combines_both():
    probs = [0.3, 0.25, 0.2, 0.15, 0.1]
    cands = top_pk_candidates(probs, 0.8, 3)
    # top-3 renormalized is [0.4, 0.333, 0.267]; 0.8 needs all three
    assert cands.cutoff == 3
    cands = top_pk_candidates(probs, 0.5, 3)
    assert cands.cutoff == 2


# ---------------------------------------------------------------- truncation

def test_truncate_renormalize_errors():
    s = sort_descending(WORKED)
    with pytest.raises(DimensionMismatch):
        truncate_renormalize(s, 0)
    with pytest.raises(DimensionMismatch):
        truncate_renormalize(s, 5)
    zero = SortedDistribution(np.zeros(4), np.arange(4))
    with pytest.raises(ZeroMassPrefix):
        truncate_renormalize(zero, 2)


def test_candidate_mass_is_one():
    rng = np.random.default_rng(14)
    for _ in range(200):
        probs = random_dist(rng, 100, sharpness=5.0)
        cands, _ = enkg_candidates(probs, MID)
        assert abs(cands.renorm_probs.sum() - 1.0) < 1e-9


# ---------------------------------------------------------------- drawing

def test_inverse_cdf_buckets_are_half_open():
    cands = truncate_renormalize(sort_descending([0.5, 0.5]), 2)

    class Fixed:
        def __init__(self, u):
            self.u = u

        def uniform(self):
            return self.u, self

    assert sample_from(cands, Fixed(0.0))[0] == 0
    assert sample_from(cands, Fixed(0.4999999))[0] == 0
    assert sample_from(cands, Fixed(0.5))[0] == 1
    assert sample_from(cands, Fixed(0.9999999))[0] == 1


def test_sample_many_equals_repeated_sample_from():
    cands, _ = enkg_candidates(WORKED, MID)
    rng = RngState.from_seed(21)
    many, end = sample_many(cands, rng, 500)
    state = rng
    for token in many:
        t, state = sample_from(cands, state)
        assert t == token
    assert state == end


def test_frequency_law_chi_square():
    cands, _ = enkg_candidates(WORKED, MID)
    n = 30000
    tokens, _ = sample_many(cands, RngState.from_seed(2024), n)
    observed = np.bincount(tokens, minlength=4)
    assert observed[3] == 0
    expected = np.array([4, 3, 2]) / 9 * n
    _, p_value = chisquare(observed[:3], expected)
    assert p_value > 0.001


@pytest.mark.slow
def test_frequency_law_over_random_candidate_sets():
    gen = np.random.default_rng(606)
    n = 100_000
    within = total = 0
    for ix in range(50):
        V = int(gen.integers(20, 64))
        sorted_dist = sort_descending(random_dist(gen, V))
        cands = truncate_renormalize(sorted_dist, int(gen.integers(2, min(V, 20) + 1)))
        tokens, _ = sample_many(cands, RngState.from_seed(1000 + ix), n)
        counts = np.bincount(tokens, minlength=V)[cands.permutation]
        q = cands.renorm_probs
        sigma = np.sqrt(n * q * (1.0 - q))
        within += int(np.count_nonzero(np.abs(counts - n * q) <= 3.0 * sigma))
        total += cands.cutoff
    assert within / total >= 0.99


@pytest.mark.slow
def test_even_pair_frequencies():
    cands = truncate_renormalize(SortedDistribution(np.array([0.5, 0.5]), np.arange(2)), 2)
    np.testing.assert_array_equal(cands.renorm_probs, [0.5, 0.5])
    rng = RngState.from_seed(77)
    counts = np.zeros(2, dtype=np.int64)
    for _ in range(100_000):
        token, rng = sample_from(cands, rng)
        counts[token] += 1
    freqs = counts / 100_000
    assert np.all((freqs >= 0.494) & (freqs <= 0.506))


def test_sampling_is_deterministic():
    a = [enkg_sample(WORKED, MID, RngState.for_site(7, 0, i))[0] for i in range(50)]
    b = [enkg_sample(WORKED, MID, RngState.for_site(7, 0, i))[0] for i in range(50)]
    assert a == b
    assert set(a) <= {0, 1, 2}


def test_temperature():
    with pytest.raises(InvalidTemperature):
        temperature_candidates(WORKED, 0.0)
    with pytest.raises(InvalidTemperature):
        Temperature(-1.0)
    cands = temperature_candidates(WORKED, 1.0)
    assert cands.cutoff == 4
    np.testing.assert_allclose(cands.renorm_probs, WORKED, atol=1e-12)
    # a tiny temperature behaves like greedy
    cands = temperature_candidates(WORKED, 1e-3)
    assert cands.renorm_probs[0] == pytest.approx(1.0)
    token, _ = temperature_sample(WORKED, 1e-3, RngState.from_seed(1))
    assert token == 0


def test_invalid_distribution_is_rejected_by_samplers():
    with pytest.raises(MassNotNormalized):
        enkg_candidates([0.5, 0.4], MID)
    with pytest.raises(MassNotNormalized):
        greedy_sample([0.5, 0.4])


# ---------------------------------------------------------------- dispatch

@pytest.mark.parametrize('config, p_target, cutoff', [
    (Greedy(), None, 1),
    (TopK(2), None, 2),
    (TopP(0.7), 0.7, 2),
    (TopPK(0.9, 3), 0.9, 3),
    (Temperature(1.0), None, 4),
    (ENkG(), 0.9, 3),
])
def test_sample_dispatch(config, p_target, cutoff):
    token, diag, rng = sample(config, ProbabilityDistribution(WORKED), RngState.from_seed(5))
    d = diag.as_dict()
    assert d['h_norm'] == pytest.approx(0.923220, abs=1e-5)
    assert d['p_target'] == (pytest.approx(p_target) if p_target is not None else None)
    assert d['cutoff'] == cutoff
    assert 0 <= token < cutoff
    assert isinstance(rng, RngState)


def test_labels():
    assert TopK(30).label() == 'top_k(k=30)'
    assert TopP(0.8).label() == 'top_p(p=0.8)'
    assert ENkG().label() == 'enkg(h=0.25/0.6,p=0.65/0.9,kg=3)'
    assert ENkG(ENkGParams(k_guard=3, n_max=8)).label().endswith(',n_max=8)')
