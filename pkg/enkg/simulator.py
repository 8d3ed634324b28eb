"""Holds the class 'SimModel', a synthetic discrete autoregressive world model
over a grid of token sites, and the functions that roll it out.

Each site is conditioned only on its own token history.  The probability of
repeating the incumbent token grows with the number of consecutive repeats
(the run length), which reproduces the low-entropy trap: a decoder that keeps
picking the incumbent makes the next prediction even more confident.
Texture sites spread the remaining mass over a few near-equivalent
alternatives; Structured sites spread it thinly over the whole codebook.
"""
from dataclasses import dataclass, field
import logging
from typing import Optional, Tuple

import numpy as np

from .diagnostics import EntropyGrid, report_from_grids, DEFAULT_LOW_ENTROPY_THRESHOLD
from .distributions import ProbabilityDistribution
from .errors import InvalidSpec, InvalidParams, DimensionMismatch, UninitializedState
from .rng import RngState, INIT_FRAME_KEY
from .samplers import SamplerConfig, ENkG, sample

logger = logging.getLogger(__name__)

STRUCTURED = 'structured'
TEXTURE = 'texture'

# Ratio between successive alternatives of the geometric texture profile.
TEXTURE_RATIO = 2.0 / 3.0

def default_region_map(height, width):
    """A Structured horizon segment on row height // 2, spanning the middle
    half of the columns [width // 4, 3 * width // 4) and at least one column.
    Every other site is Texture.
    """
    horizon = height // 2
    left = width // 4
    right = max((3 * width) // 4, left + 1)
    labels = []
    for row in range(height):
        for col in range(width):
            if row == horizon and left <= col < right:
                labels.append(STRUCTURED)
            else:
                labels.append(TEXTURE)
    return tuple(labels)


@dataclass(frozen=True)
class SceneSpec:
    """Geometry and dynamics of a synthetic scene.  The confidence in the
    incumbent token after r consecutive repeats is min(p0 + delta * (r - 1), p_max).
    """
    height: int = 16
    width: int = 16
    vocab: int = 16
    region_map: Optional[Tuple[str, ...]] = None
    p0: float = 0.4
    delta: float = 0.1
    p_max: float = 0.95
    texture_spread: int = 4

    def __post_init__(self):
        if self.region_map is None:
            object.__setattr__(self, 'region_map', default_region_map(self.height, self.width))
        else:
            object.__setattr__(self, 'region_map', tuple(self.region_map))

        s = self
        errors = []
        if s.height < 1 or s.width < 1:
            errors.append(f'grid must be at least 1x1, got {s.height}x{s.width}')
        if s.vocab < 2:
            errors.append(f'vocab must be at least 2, got {s.vocab}')
        if not (0.0 < s.p0 < s.p_max < 1.0):
            errors.append(f'need 0 < p0 < p_max < 1, got p0={s.p0}, p_max={s.p_max}')
        if s.delta < 0.0:
            errors.append(f'delta must be non-negative, got {s.delta}')
        if not (1 <= s.texture_spread < s.vocab):
            errors.append(f'texture_spread must be in [1, vocab), got {s.texture_spread}')
        if len(s.region_map) != s.height * s.width:
            errors.append(f'region_map has {len(s.region_map)} labels for {s.height * s.width} sites')
        bad = set(s.region_map) - {STRUCTURED, TEXTURE}
        if bad:
            errors.append(f'unknown region labels {sorted(bad)}')
        if TEXTURE in s.region_map and s.texture_spread < 2:
            errors.append('Texture sites need texture_spread of at least 2')
        if errors:
            raise InvalidSpec('Invalid scene: ' + '; '.join(errors))

    @property
    def m(self):
        return self.height * self.width

    def confidence(self, run_length):
        """Mass given to the incumbent token after 'run_length' repeats.
        Works on scalars and arrays.
        """
        return np.minimum(self.p0 + self.delta * (np.asarray(run_length) - 1), self.p_max)


@dataclass(frozen=True)
class SimState:
    """Current token and run length of every site.  'frame_index' counts the
    frames generated so far.
    """
    current_frame: Optional[np.ndarray] = None
    run_length: Optional[np.ndarray] = None
    frame_index: int = 0

    @property
    def initialized(self):
        return self.current_frame is not None and self.run_length is not None

    def advance(self, tokens):
        """New state after emitting 'tokens': run lengths grow on a repeat and
        reset to 1 on a change.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        run = np.where(tokens == self.current_frame, self.run_length + 1, 1)
        return SimState(tokens.copy(), run, self.frame_index + 1)


@dataclass(frozen=True)
class RolloutConfig:
    frames: int = 50
    sampler: SamplerConfig = field(default_factory=ENkG)
    seed: int = 42
    teacher_forced: bool = False

    def __post_init__(self):
        if int(self.frames) != self.frames or self.frames < 1:
            raise InvalidParams(f'A rollout needs at least one frame, got {self.frames}.')


@dataclass(frozen=True)
class DriftStats:
    freeze_rate: float
    mismatch_rate: float


@dataclass
class RolloutResult:
    """Everything recorded during a rollout.  'frames' has shape (T, m);
    'probs' holds the predicted distributions, shape (T, m, V).  'reference'
    is the reference trajectory, shape (T, m); a teacher-forced run follows it
    while 'frames' records the sampler's choices.  drift.mismatch_rate is the
    share of tokens in 'frames' that differ from 'reference'.
    """
    frames: np.ndarray
    diagnostics: list
    entropy_grids: list
    drift: DriftStats
    probs: np.ndarray
    top1_mass_avg: np.ndarray
    initial_frame: np.ndarray
    seed: int
    teacher_forced: bool = False
    reference: Optional[np.ndarray] = None

    @property
    def T(self):
        return self.frames.shape[0]

    @property
    def m(self):
        return self.frames.shape[1]

    def collapse_report(self, threshold=DEFAULT_LOW_ENTROPY_THRESHOLD):
        return report_from_grids(self.entropy_grids, self.top1_mass_avg, threshold)

    def to_trace(self):
        """The predicted distributions as a LogitTrace.
        """
        from .trace import LogitTrace
        return LogitTrace.from_probs(self.probs)


def freeze_rate(frames):
    """Fraction of consecutive frame pairs that are identical token for token.
    A single frame has no pairs and a rate of 0.
    """
    frames = np.asarray(frames)
    if frames.shape[0] < 2:
        return 0.0
    same = np.all(frames[1:] == frames[:-1], axis=1)
    return float(np.mean(same))


class SimModel:
    """The synthetic model of one scene.  Precomputes, for every kind of site
    (Structured, or Texture of a given family) and every incumbent token, the
    profile over which the non-incumbent mass is spread.
    """

    def __init__(self, spec):
        self.spec = spec
        s = self
        V = spec.vocab

        # Texture families are consecutive blocks of 'texture_spread' tokens;
        # the last token is reserved for Structured sites.
        s.n_families = max((V - 1) // spec.texture_spread, 1)
        s.structured_token = V - 1

        # kind 0 is Structured, kind 1 + f is Texture family f
        kinds = []
        for i, label in enumerate(spec.region_map):
            if label == STRUCTURED:
                kinds.append(0)
            else:
                col = i % spec.width
                kinds.append(1 + col * s.n_families // spec.width)
        s.site_kind = np.array(kinds, dtype=np.int64)

        s.profiles = np.zeros((1 + s.n_families, V, V))
        for tok in range(V):
            others = np.full(V, 1.0 / (V - 1))
            others[tok] = 0.0
            s.profiles[0, tok] = others
        if spec.texture_spread >= 2:
            weights = TEXTURE_RATIO ** np.arange(spec.texture_spread - 1)
            weights = weights / weights.sum()
            for f in range(s.n_families):
                for tok in range(V):
                    alts = self.alternatives(f, tok)
                    s.profiles[1 + f, tok, alts] = weights

    def __repr__(self):
        """Returns a string with the scene parameters and model tables.  Long
        representations are truncated at 1,000 characters.
        """
        s = ''
        for attr in self.__dict__:
            val = repr(self.__dict__[attr])[:1000]
            if len(val) > 70:
                s += f'\n{attr}:\n{val}\n\n'
            else:
                s += f'{attr}: {val}\n'
        return s

    def family(self, f):
        """Token ids of texture family 'f'.
        """
        start = f * self.spec.texture_spread
        return list(range(start, start + self.spec.texture_spread))

    def site_family(self, site):
        kind = int(self.site_kind[site])
        return None if kind == 0 else self.family(kind - 1)

    def alternatives(self, f, token):
        """The designated alternatives of 'token' in family 'f', in cyclic
        family order after the incumbent.
        """
        fam = self.family(f)
        if token in fam:
            idx = fam.index(token)
            return [fam[(idx + j) % len(fam)] for j in range(1, len(fam))]
        return fam[:len(fam) - 1]

    # ---------------- Predictions

    def predict_frame(self, state):
        """Predicted distributions of all sites, shape (m, V).
        """
        if not state.initialized:
            raise UninitializedState('The simulator state has no current frame.')
        spec = self.spec
        tokens = state.current_frame
        conf = spec.confidence(state.run_length)
        profile = self.profiles[self.site_kind, tokens]
        onehot = np.zeros_like(profile)
        onehot[np.arange(tokens.size), tokens] = 1.0
        return conf[:, None] * onehot + (1.0 - conf)[:, None] * profile

    def predict(self, state, site):
        """Predicted distribution at 'site' given the current state.
        """
        if not state.initialized:
            raise UninitializedState('The simulator state has no current frame.')
        if not (0 <= site < self.spec.m):
            raise DimensionMismatch(f'Site {site} outside [0, {self.spec.m}).')
        tok = int(state.current_frame[site])
        conf = self.spec.confidence(state.run_length[site])
        profile = self.profiles[self.site_kind[site], tok]
        onehot = np.zeros(self.spec.vocab)
        onehot[tok] = 1.0
        return ProbabilityDistribution(conf * onehot + (1.0 - conf) * profile)

    def reference_frame(self, initial_frame, k):
        """Ground-truth tokens of generated frame 'k': Texture sites step
        through their family once per frame, Structured sites hold still.
        """
        ref = np.array(initial_frame, dtype=np.int64)
        spread = self.spec.texture_spread
        for i in range(ref.size):
            fam = self.site_family(i)
            if fam is None:
                continue
            start = fam.index(ref[i]) if ref[i] in fam else 0
            ref[i] = fam[(start + k + 1) % spread]
        return ref

    # ---------------- Main calculation method

    def rollout(self, state, config):
        """Generates config.frames frames starting from 'state'.  The state
        passed in is left unchanged.
        """
        s = self
        spec = s.spec
        if not state.initialized:
            raise UninitializedState('The simulator state has no current frame.')

        cur = state
        initial = np.array(state.current_frame, dtype=np.int64)
        frames = []
        references = []
        diagnostics = []
        grids = []
        probs_all = []
        top1 = []

        for k in range(config.frames):
            probs = s.predict_frame(cur)
            tokens = np.empty(spec.m, dtype=np.int64)
            frame_diag = []
            for i in range(spec.m):
                dist = ProbabilityDistribution(probs[i])
                rng = RngState.for_site(config.seed, k, i)
                tokens[i], diag, _ = sample(config.sampler, dist, rng)
                frame_diag.append(diag)

            grids.append(EntropyGrid(k, spec.height, spec.width,
                                     [d.normalized_entropy for d in frame_diag]))
            top1.append(float(probs.max(axis=1).mean()))
            frames.append(tokens)
            diagnostics.append(frame_diag)
            probs_all.append(probs)

            ref = s.reference_frame(initial, k)
            references.append(ref)
            if config.teacher_forced:
                cur = cur.advance(ref)
            else:
                cur = cur.advance(tokens)
            logger.debug('frame %d: mean entropy %.4f', k, np.mean(grids[-1].values))

        frames = np.array(frames)
        references = np.array(references)
        result = RolloutResult(
            frames=frames,
            diagnostics=diagnostics,
            entropy_grids=grids,
            drift=DriftStats(freeze_rate(frames), float(np.mean(frames != references))),
            probs=np.array(probs_all),
            top1_mass_avg=np.array(top1),
            initial_frame=initial,
            seed=config.seed,
            teacher_forced=config.teacher_forced,
            reference=references,
        )
        logger.info('Rollout of %d frames with %s: freeze rate %.4f',
                    config.frames, config.sampler.label(), result.drift.freeze_rate)
        return result

# --------------------------------------------------------------------------

def build_scene(spec, seed):
    """Returns (SimModel, initial SimState).  Structured sites start on the
    reserved structured token; Texture sites start on a token drawn uniformly
    from their family with the site's initialisation substream.
    """
    if not isinstance(spec, SceneSpec):
        raise InvalidSpec(f'Expected a SceneSpec, got {type(spec).__name__}.')
    model = SimModel(spec)
    tokens = np.empty(spec.m, dtype=np.int64)
    for i in range(spec.m):
        fam = model.site_family(i)
        if fam is None:
            tokens[i] = model.structured_token
        else:
            u, _ = RngState.for_site(seed, INIT_FRAME_KEY, i).uniform()
            tokens[i] = fam[int(u * len(fam))]
    state = SimState(tokens, np.ones(spec.m, dtype=np.int64), 0)
    return model, state

def predict(model, state, site):
    return model.predict(state, site)

def rollout(model, state, config):
    return model.rollout(state, config)

def drift_stats(free_run, teacher_forced):
    """Freeze rate of the free-running rollout and the fraction of tokens on
    which it disagrees with the teacher-forced one.
    """
    if free_run.frames.shape != teacher_forced.frames.shape:
        raise DimensionMismatch(
            f'Rollouts differ in shape: {free_run.frames.shape} vs {teacher_forced.frames.shape}.')
    mismatch = float(np.mean(free_run.frames != teacher_forced.frames))
    return DriftStats(freeze_rate(free_run.frames), mismatch)

def export_trace(result):
    """LogitTrace of the distributions predicted during 'result'.
    """
    return result.to_trace()
