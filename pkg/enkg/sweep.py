"""Grid sweeps of sampler settings over the synthetic scene or a recorded
trace.  Each grid point is a set of configuration overrides; every point is
run once per seed and summarised by a mean row.  Output rows follow the
declaration order of grid points and seeds whether the work is done serially
or in a process pool.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .config import (DEFAULTS, STRATEGIES, PRESETS, inputs_to_vars, sampler_from_vars,
                     scene_from_vars, scene_to_vars, read_json, is_manifest)
from .errors import ConfigError
from .simulator import SceneSpec, RolloutConfig, build_scene, drift_stats, freeze_rate
from .trace import read_trace, replay

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['config', 'seed', 'freeze_rate', 'mismatch_rate',
                 'mean_frame_avg_entropy', 'mean_low_entropy_share', 'fvd', 'fid']

GRID_REGISTRY = {}

def register_grid(name):
    def register_grid_fn(fn):
        if name in GRID_REGISTRY:
            raise ValueError(f'Cannot register duplicate grid ({name})')
        GRID_REGISTRY[name] = fn
        return fn
    return register_grid_fn

@register_grid('top_p')
def top_p_grid():
    return [{'strategy': 'top_p', 'top_p': p} for p in (0.5, 0.7, 0.8, 0.9, 1.0)]

@register_grid('top_k')
def top_k_grid():
    return [{'strategy': 'top_k', 'top_k': k} for k in (30, 60, 90, 120, 150, 500)]

@register_grid('pk')
def pk_grid():
    return [{'strategy': 'top_pk', 'top_p': p, 'top_k': k}
            for p in (0.7, 0.8, 0.9) for k in (30, 150, 1000)]

@register_grid('thresholds')
def thresholds_grid():
    return [dict(PRESETS[name]) for name in ('enkg-left', 'enkg', 'enkg-right')]

@register_grid('k_guard')
def k_guard_grid():
    return [{'strategy': 'enkg', 'k_guard': k} for k in (1, 2, 3, 7, 15)]

@register_grid('ablation')
def ablation_grid():
    return [dict(PRESETS[name]) for name in ('enkg', 'no-entropy', 'no-guard')]


@dataclass(frozen=True)
class SweepSpec:
    """A sweep: the base strategy, the grid of overrides, the seeds and the
    scenario (a SceneSpec, or the path of a trace to replay).  'settings' holds
    further configuration shared by every grid point.
    """
    base: str
    grid: tuple
    seeds: tuple
    scene: Optional[SceneSpec] = field(default_factory=SceneSpec)
    trace_path: Optional[str] = None
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'grid', tuple(dict(g) for g in self.grid))
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        errors = []
        if self.base not in STRATEGIES:
            errors.append(f'Unknown base strategy "{self.base}".')
        if len(self.grid) == 0:
            errors.append('The sweep grid is empty.')
        if len(self.seeds) == 0:
            errors.append('The sweep has no seeds.')
        if self.scene is None and self.trace_path is None:
            errors.append('The sweep needs a scene or a trace.')
        if errors:
            raise ConfigError(' '.join(errors))

    def point_vars(self, point):
        """Checked configuration variables of one grid point.
        """
        raw = dict(DEFAULTS)
        raw['strategy'] = self.base
        raw.update(self.settings)
        raw.update(point)
        errors, vars = inputs_to_vars(raw)
        if errors:
            raise ConfigError(' '.join(errors))
        return vars

    def describe(self):
        """JSON-ready description that load_sweep_spec() reads back.
        """
        doc = {'base': self.base, 'grid': list(self.grid), 'seeds': list(self.seeds),
               'config': dict(self.settings)}
        if self.trace_path is not None:
            doc['trace'] = str(self.trace_path)
        else:
            doc['scene'] = scene_to_vars(self.scene)
        return doc

    def jobs(self):
        """(grid point index, seed, vars) in declaration order.
        """
        return [(ix, seed, self.point_vars(point))
                for ix, point in enumerate(self.grid) for seed in self.seeds]


def grid_from_name(name):
    if name not in GRID_REGISTRY:
        raise ConfigError(f'Unknown sweep grid "{name}"; choose from {", ".join(GRID_REGISTRY)}.')
    return GRID_REGISTRY[name]()

def load_sweep_spec(path, settings=None):
    """Reads a JSON sweep description:

        {"base": "enkg", "grid": "k_guard" or [{...}, ...], "seeds": [1, 2],
         "scene": {"height": 16, ...} or "trace": "run.lgtr",
         "config": {...settings shared by every point...}}

    A sweep RunManifest is accepted as well.
    """
    doc = read_json(path)
    if is_manifest(doc):
        if not doc.get('sweep'):
            raise ConfigError(f'Manifest {path} does not describe a sweep.')
        doc = doc['sweep']
    grid = doc.get('grid', [])
    if isinstance(grid, str):
        grid = grid_from_name(grid)
    merged = dict(doc.get('config', {}))
    merged.update(settings or {})
    trace_path = doc.get('trace')
    scene = None
    if trace_path is None:
        scene_raw = dict(DEFAULTS)
        scene_raw.update(doc.get('scene', {}))
        scene_raw.update(merged)
        errors, vars = inputs_to_vars(scene_raw)
        if errors:
            raise ConfigError(' '.join(errors))
        scene = scene_from_vars(vars)
    return SweepSpec(
        base=doc.get('base', 'enkg'),
        grid=grid,
        seeds=doc.get('seeds', []),
        scene=scene,
        trace_path=trace_path,
        settings=merged,
    )

# --------------------------------------------------------------------------

def run_point(job, scene=None, trace_path=None):
    """Metrics of one (grid point, seed) job as a row dictionary.
    """
    ix, seed, vars = job
    sampler = sampler_from_vars(vars)
    threshold = vars['collapse_threshold']

    if trace_path is not None:
        trace = read_trace(trace_path)
        tokens, report, _ = replay(trace, sampler, vars['softmax_temperature'], seed, threshold)
        freeze = freeze_rate(tokens)
        mismatch = np.nan
    else:
        model, state = build_scene(scene, seed)
        free = model.rollout(state, RolloutConfig(vars['frames'], sampler, seed))
        forced = model.rollout(state, RolloutConfig(vars['frames'], sampler, seed, teacher_forced=True))
        drift = drift_stats(free, forced)
        report = free.collapse_report(threshold)
        freeze, mismatch = drift.freeze_rate, drift.mismatch_rate

    logger.debug('grid point %d seed %d: freeze rate %.4f', ix, seed, freeze)
    return {
        'config': sampler.label(),
        'seed': seed,
        'freeze_rate': freeze,
        'mismatch_rate': mismatch,
        'mean_frame_avg_entropy': float(np.mean(report.frame_avg_entropy)),
        'mean_low_entropy_share': float(np.mean(report.low_entropy_share)),
        'fvd': np.nan,
        'fid': np.nan,
    }

def _run_job(args):
    job, scene, trace_path = args
    return run_point(job, scene, trace_path)

def run_sweep(spec, workers=1):
    """Runs every job of 'spec' and returns the sweep table: one row per
    (grid point, seed) followed by the mean row of that grid point.
    """
    jobs = spec.jobs()
    logger.info('Sweeping %d grid points x %d seeds', len(spec.grid), len(spec.seeds))
    args = [(job, spec.scene, spec.trace_path) for job in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(_run_job, args))
    else:
        rows = [_run_job(a) for a in args]

    n_seeds = len(spec.seeds)
    table = []
    for ix in range(len(spec.grid)):
        point_rows = rows[ix * n_seeds:(ix + 1) * n_seeds]
        table.extend(point_rows)
        df_point = pd.DataFrame(point_rows)
        mean_row = df_point.drop(columns=['config', 'seed']).mean(skipna=False).to_dict()
        mean_row.update({'config': point_rows[0]['config'], 'seed': 'mean'})
        table.append(mean_row)

    df = pd.DataFrame(table, columns=SWEEP_COLUMNS)
    return df

def mean_rows(df):
    """Just the mean rows of a sweep table.
    """
    return df[df.seed == 'mean'].reset_index(drop=True)

def sweep_to_csv(df, dest=None):
    """Writes the sweep table as CSV; blank cells for missing values.
    Returns the CSV text.
    """
    text = df.to_csv(index=False, float_format='%.6f', lineterminator='\n')
    if dest is not None:
        Path(dest).write_text(text, encoding='utf-8')
        logger.info('Wrote sweep table %s', dest)
    return text
