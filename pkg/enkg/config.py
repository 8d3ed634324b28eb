"""Describes every configurable input, converts raw values from presets, JSON
config files and command-line flags into checked variables, and builds the
sampler and scene objects from them.  Also holds the RunManifest written next
to every command's outputs.

Precedence, lowest first: DEFAULTS, the preset, the --config file, explicit
flags.
"""
from dataclasses import dataclass, field, asdict
import json
import logging
import numbers
from pathlib import Path
from typing import Optional

from . import __version__
from .errors import ConfigError
from .samplers import ENkGParams, Greedy, Temperature, TopK, TopP, TopPK, ENkG
from .simulator import SceneSpec
from .utils import is_null, to_float, to_float_list

logger = logging.getLogger(__name__)

STRATEGIES = ('greedy', 'temperature', 'top_k', 'top_p', 'top_pk', 'enkg')
MAX_SEED = 2 ** 64 - 1

# (variable, description, checks).  The check codes are listed in
# 'check_conversion_codes' below.
input_info = [
    ('strategy', 'Sampling Strategy', 'choice'),
    ('temperature', 'Temperature of the temperature strategy', 'float,greater-than-zero'),
    ('top_k', 'Top-k Candidate Count', 'int,greater-than-zero'),
    ('top_p', 'Top-p Target Mass', 'float,unit'),
    ('h_low', 'Low Normalized-Entropy Threshold', 'float,non-negative'),
    ('h_high', 'High Normalized-Entropy Threshold', 'float,unit'),
    ('p_low', 'Target Mass at Low Entropy', 'float,unit'),
    ('p_high', 'Target Mass at High Entropy', 'float,unit'),
    ('k_guard', 'Guard Size', 'int,greater-than-zero'),
    ('n_max', 'Maximum Candidate Count', 'null-ok,int,greater-than-zero'),
    ('softmax_temperature', 'Softmax Temperature for Logits', 'float,greater-than-zero'),
    ('collapse_threshold', 'Low-Entropy Threshold of the Collapse Report', 'float,non-negative'),
    ('seed', 'Random Seed', 'int,non-negative'),
    ('height', 'Scene Height', 'int,greater-than-zero'),
    ('width', 'Scene Width', 'int,greater-than-zero'),
    ('vocab', 'Codebook Size', 'int,greater-than-zero'),
    ('p0', 'Initial Repeat Confidence', 'float,unit'),
    ('delta', 'Confidence Gain per Repeat', 'float,non-negative'),
    ('p_max', 'Maximum Repeat Confidence', 'float,unit'),
    ('texture_spread', 'Texture Family Size', 'int,greater-than-zero'),
    ('frames', 'Number of Frames', 'int,greater-than-zero'),
    ('scale', 'Heatmap Pixels per Site', 'int,greater-than-zero'),
    ('workers', 'Number of Worker Processes', 'int,greater-than-zero'),
    ('probs', 'Probabilities', 'null-ok,float-list'),
    ('uniform', 'Uniform Codebook Size', 'null-ok,int,greater-than-zero'),
    ('trace', 'Trace File', 'null-ok'),
    ('frame', 'Trace Frame', 'int,non-negative'),
    ('site', 'Trace Site', 'int,non-negative'),
]

CONFIG_NAMES = [info[0] for info in input_info]

choices = {
    'strategy': STRATEGIES,
}

DEFAULTS = {
    'strategy': 'enkg',
    'temperature': 1.0,
    'top_k': 30,
    'top_p': 0.8,
    'h_low': 0.25,
    'h_high': 0.6,
    'p_low': 0.65,
    'p_high': 0.9,
    'k_guard': 3,
    'n_max': None,
    'softmax_temperature': 1.0,
    'collapse_threshold': 0.25,
    'seed': 42,
    'height': 16,
    'width': 16,
    'vocab': 16,
    'p0': 0.4,
    'delta': 0.1,
    'p_max': 0.95,
    'texture_spread': 4,
    'frames': 50,
    'scale': 8,
    'workers': 1,
    'probs': None,
    'uniform': None,
    'trace': None,
    'frame': 0,
    'site': 0,
}

# Baseline settings of the compared world models and the ENkG threshold
# variants.
PRESETS = {
    'drivingworld': {'strategy': 'top_k', 'top_k': 30},
    'cosmos': {'strategy': 'top_p', 'top_p': 0.8},
    'greedy': {'strategy': 'greedy'},
    'enkg': {'strategy': 'enkg', 'h_low': 0.25, 'h_high': 0.6, 'p_low': 0.65, 'p_high': 0.9},
    'enkg-left': {'strategy': 'enkg', 'h_low': 0.0, 'h_high': 0.5, 'p_low': 0.6, 'p_high': 0.9},
    'enkg-right': {'strategy': 'enkg', 'h_low': 0.4, 'h_high': 0.9, 'p_low': 0.8, 'p_high': 0.95},
    'no-guard': {'strategy': 'enkg', 'k_guard': 1},
    'no-entropy': {'strategy': 'enkg', 'p_low': 0.775, 'p_high': 0.775},
}

# Default dictionary of all possible input checks and conversions.
# All checks and conversions are assumed to be not applied in the default case.
check_conversion_codes = ('null-ok', 'float', 'int', 'float-list', 'greater-than-zero',
                          'non-negative', 'unit', 'choice')
check_conversion = dict(zip(check_conversion_codes, [False] * len(check_conversion_codes)))

def _to_int(val):
    """Integer value of 'val', or None.  Floats must be whole numbers.
    """
    if isinstance(val, bool):
        return None
    if isinstance(val, numbers.Integral):
        return int(val)
    if isinstance(val, str) and val.strip().isdigit():
        return int(val.strip())
    fval = to_float(val, None)
    if fval is None or not fval.is_integer():
        return None
    return int(fval)

def inputs_to_vars(input_vals):
    """Returns a list of input error messages and a dictionary of variables.
    'input_vals' maps variable names to raw values; the checks and conversions
    listed in 'input_info' are applied to each.
    """
    vars = {}
    errors = []

    unknown = sorted(set(input_vals) - set(CONFIG_NAMES))
    for name in unknown:
        errors.append(f'Unknown configuration setting "{name}".')

    for info in input_info:
        var, desc, *other = info
        if var not in input_vals:
            continue
        val = input_vals[var]

        cc = check_conversion.copy()  # all False to start with.
        if len(other):
            for item in other[0].split(','):
                cc[item.strip()] = True

        if is_null(val):
            if not cc['null-ok']:
                errors.append(f'The {desc} must be entered.')
            vars[var] = None
            continue

        if cc['float']:
            fval = to_float(val.replace(',', '') if isinstance(val, str) else val, None)
            if fval is None or isinstance(val, bool):
                errors.append(f'{desc} must be a number.')
                continue
            val = fval
        elif cc['int']:
            ival = _to_int(val)
            if ival is None:
                errors.append(f'{desc} must be an integer number.')
                continue
            val = ival
        elif cc['float-list']:
            fvals = to_float_list(val)
            if fvals is None or len(fvals) == 0:
                errors.append(f'{desc} must be a list of numbers.')
                continue
            val = fvals
        elif cc['choice']:
            if val not in choices[var]:
                errors.append(f'{desc} must be one of {", ".join(choices[var])}; got "{val}".')
                continue

        if cc['greater-than-zero'] and val <= 0:
            errors.append(f'{desc} must be greater than zero.')
        if cc['non-negative'] and val < 0:
            errors.append(f'{desc} must not be negative.')
        if cc['unit'] and not (0.0 < val <= 1.0):
            errors.append(f'{desc} must be greater than zero and no more than 1.')

        vars[var] = val

    # ------------------- Some Other Input Checks -------------------------
    if not errors:
        if vars.get('seed') is not None and vars['seed'] > MAX_SEED:
            errors.append('Random Seed must fit in 64 bits.')
        if vars.get('collapse_threshold') is not None and vars['collapse_threshold'] > 1.0:
            errors.append('Low-Entropy Threshold of the Collapse Report must be no more than 1.')

    return errors, vars

# --------------------------------------------------------------------------

def read_json(path):
    """The JSON object stored in 'path'.
    """
    text = Path(path).read_text(encoding='utf-8')
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path} is not valid JSON: {e}') from e
    if not isinstance(doc, dict):
        raise ConfigError(f'{path} must hold a JSON object.')
    return doc

def is_manifest(doc):
    return 'tool_version' in doc and 'config' in doc

def load_config_file(path):
    """Raw settings from a JSON config file.  A RunManifest is accepted as
    well; its resolved configuration is returned.
    """
    doc = read_json(path)
    if is_manifest(doc):
        logger.info('Using the configuration stored in manifest %s', path)
        doc = doc['config']
    return doc

def resolve_config(preset=None, config_path=None, overrides=None):
    """Merges DEFAULTS, 'preset', the config file and 'overrides' (flags that
    were given explicitly), checks the result and returns the variables.
    Raises ConfigError listing every problem found.
    """
    raw = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f'Unknown preset "{preset}"; choose from {", ".join(PRESETS)}.')
        raw.update(PRESETS[preset])
    if config_path is not None:
        raw.update(load_config_file(config_path))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    errors, vars = inputs_to_vars(raw)
    if errors:
        raise ConfigError(' '.join(errors))
    return vars

def enkg_params_from_vars(vars):
    return ENkGParams(
        h_low=vars['h_low'],
        h_high=vars['h_high'],
        p_low=vars['p_low'],
        p_high=vars['p_high'],
        k_guard=vars['k_guard'],
        n_max=vars['n_max'],
    )

def sampler_from_vars(vars):
    """The SamplerConfig selected by vars['strategy'].
    """
    strategy = vars['strategy']
    if strategy == 'greedy':
        return Greedy()
    elif strategy == 'temperature':
        return Temperature(vars['temperature'])
    elif strategy == 'top_k':
        return TopK(vars['top_k'])
    elif strategy == 'top_p':
        return TopP(vars['top_p'])
    elif strategy == 'top_pk':
        return TopPK(vars['top_p'], vars['top_k'])
    else:
        return ENkG(enkg_params_from_vars(vars))

SCENE_NAMES = ('height', 'width', 'vocab', 'p0', 'delta', 'p_max', 'texture_spread')

def scene_to_vars(scene):
    return {name: getattr(scene, name) for name in SCENE_NAMES}

def scene_from_vars(vars):
    return SceneSpec(
        height=vars['height'],
        width=vars['width'],
        vocab=vars['vocab'],
        p0=vars['p0'],
        delta=vars['delta'],
        p_max=vars['p_max'],
        texture_spread=vars['texture_spread'],
    )

# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    """What a command was run with and what it wrote.  Passing the manifest
    back with --config reproduces the run.
    """
    command: str
    config: dict
    seeds: list
    outputs: list = field(default_factory=list)
    tool_version: str = __version__
    sweep: Optional[dict] = None

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n',
                              encoding='utf-8')
        logger.info('Wrote manifest %s', path)

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text(encoding='utf-8'))
        try:
            return cls(**doc)
        except TypeError as e:
            raise ConfigError(f'{path} is not a run manifest: {e}') from e
