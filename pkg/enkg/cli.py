"""Command-line entry point: enkg {sample,rollout,sweep,heatmap,replay}.

Exit codes: 0 ok, 2 configuration error, 3 trace or file I/O error,
4 numeric validation error.
"""
import argparse
import json
import logging
import math
from pathlib import Path
import sys

import pandas as pd

from . import __version__
from .config import (CONFIG_NAMES, PRESETS, RunManifest, resolve_config, sampler_from_vars,
                     scene_from_vars)
from .diagnostics import EntropyGrid, render_heatmap, write_ppm, report_to_csv, top_mass_profile
from .distributions import ProbabilityDistribution, normalized_entropy
from .errors import EnkgError, ConfigError
from .rng import RngState
from .samplers import sample
from .simulator import RolloutConfig, build_scene, drift_stats, export_trace, freeze_rate
from .sweep import GRID_REGISTRY, SweepSpec, grid_from_name, load_sweep_spec, run_sweep, sweep_to_csv
from .trace import read_trace, write_trace, replay
from .utils import json_number

logger = logging.getLogger(__name__)

LOGGER_FORMAT = '%(asctime)s %(levelname)s >>> %(message)s'

def _add_common(p):
    p.add_argument('--seed', help='64-bit random seed')
    p.add_argument('--config', dest='config_path', help='JSON config file or run manifest')
    p.add_argument('--out', default='.', help='output directory')
    p.add_argument('--preset', choices=sorted(PRESETS), help='named sampler setting')

def _add_sampler(p):
    p.add_argument('--strategy', help='greedy, temperature, top_k, top_p, top_pk or enkg')
    p.add_argument('--temperature', help='temperature of the temperature strategy')
    p.add_argument('--top-k', dest='top_k', help='candidate count for top_k / top_pk')
    p.add_argument('--top-p', dest='top_p', help='target mass for top_p / top_pk')
    p.add_argument('--h-low', dest='h_low', help='ENkG low entropy threshold')
    p.add_argument('--h-high', dest='h_high', help='ENkG high entropy threshold')
    p.add_argument('--p-low', dest='p_low', help='ENkG target mass at low entropy')
    p.add_argument('--p-high', dest='p_high', help='ENkG target mass at high entropy')
    p.add_argument('--k-guard', dest='k_guard', help='ENkG guard size')
    p.add_argument('--n-max', dest='n_max', help='ENkG cap on the candidate count')
    p.add_argument('--softmax-temperature', dest='softmax_temperature',
                   help='temperature applied to recorded logits')
    p.add_argument('--collapse-threshold', dest='collapse_threshold',
                   help='normalized entropy below which a site counts as low-entropy')

def _add_scene(p):
    p.add_argument('--height', help='scene height in sites')
    p.add_argument('--width', help='scene width in sites')
    p.add_argument('--vocab', help='codebook size')
    p.add_argument('--p0', help='repeat confidence after one frame')
    p.add_argument('--delta', help='confidence gain per repeat')
    p.add_argument('--p-max', dest='p_max', help='maximum repeat confidence')
    p.add_argument('--texture-spread', dest='texture_spread', help='texture family size')
    p.add_argument('--frames', help='number of frames to generate')

def build_parser():
    parser = argparse.ArgumentParser(
        prog='enkg',
        description='Entropy-guided k-guard sampling for autoregressive token grids.')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for progress, -vv for per-frame detail')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('sample', help='sample one token from a distribution')
    _add_common(p)
    _add_sampler(p)
    p.add_argument('--probs', help='comma-separated probabilities')
    p.add_argument('--uniform', help='sample from the uniform distribution of this size')
    p.add_argument('--trace', help='trace file to take the distribution from')
    p.add_argument('--frame', help='trace frame')
    p.add_argument('--site', help='trace site')

    p = sub.add_parser('rollout', help='roll out the synthetic scene')
    _add_common(p)
    _add_sampler(p)
    _add_scene(p)
    p.add_argument('--scale', help='heatmap pixels per site')
    p.add_argument('--plot', action='store_true', help='also write entropy.html and top_mass.html')

    p = sub.add_parser('sweep', help='sweep sampler settings')
    _add_common(p)
    _add_sampler(p)
    _add_scene(p)
    p.add_argument('spec', nargs='?', help='JSON sweep description')
    p.add_argument('--grid', choices=sorted(GRID_REGISTRY), help='named grid')
    p.add_argument('--seeds', help='seed list such as "1,2,3" or "1-10"')
    p.add_argument('--workers', help='number of worker processes')

    p = sub.add_parser('heatmap', help='entropy heatmap of one trace frame')
    _add_common(p)
    p.add_argument('trace', help='trace file')
    p.add_argument('--frame', help='trace frame')
    p.add_argument('--output', help='PPM file (default <out>/heatmap_<frame>.ppm)')
    p.add_argument('--height', help='grid height (default: from --width, else square if possible)')
    p.add_argument('--width', help='grid width (default: from --height)')
    p.add_argument('--scale', help='pixels per site')
    p.add_argument('--softmax-temperature', dest='softmax_temperature',
                   help='temperature applied to recorded logits')

    p = sub.add_parser('replay', help='decode a recorded trace')
    _add_common(p)
    _add_sampler(p)
    p.add_argument('trace', help='trace file')

    return parser

def _overrides(args):
    """Config values given explicitly on the command line.
    """
    return {name: getattr(args, name) for name in CONFIG_NAMES
            if getattr(args, name, None) is not None}

def parse_seeds(text):
    """Seeds from "1,2,3" or "1-10" (inclusive) or a mix of both.
    """
    seeds = []
    try:
        for item in text.split(','):
            item = item.strip()
            if not item:
                continue
            if '-' in item:
                lo, hi = (int(v) for v in item.split('-', 1))
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(item))
    except ValueError:
        raise ConfigError(f'Bad seed list "{text}".')
    if not seeds:
        raise ConfigError(f'Seed list "{text}" is empty.')
    return seeds

def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info('Wrote %s', path)

def grid_shape(m, height=None, width=None):
    """Height and width used to lay out 'm' sites.  A missing dimension is
    derived from the given one; with neither, the grid is square if possible
    and a single row otherwise.
    """
    if height is not None or width is not None:
        given = height if height is not None else width
        if m % given != 0:
            raise ConfigError(f'{m} sites cannot be laid out in rows or columns of {given}.')
        if height is None:
            height = m // width
        elif width is None:
            width = m // height
        if height * width != m:
            raise ConfigError(f'A {height}x{width} grid does not hold {m} sites.')
        return height, width
    side = math.isqrt(m)
    if side * side == m:
        return side, side
    return 1, m

# ------------------------------------------------------------------ commands

def cmd_sample(args):
    vars = resolve_config(args.preset, args.config_path, _overrides(args))
    sampler = sampler_from_vars(vars)
    rng = RngState.for_site(vars['seed'], 0, 0)

    if vars['probs'] is not None:
        dist = ProbabilityDistribution.from_probs(vars['probs'])
    elif vars['uniform'] is not None:
        if vars['uniform'] < 2:
            raise ConfigError('The uniform codebook needs at least 2 tokens.')
        dist = ProbabilityDistribution.uniform(vars['uniform'])
    elif vars['trace'] is not None:
        trace = read_trace(vars['trace'])
        if vars['frame'] >= trace.T or vars['site'] >= trace.m:
            raise ConfigError(f'No cell ({vars["frame"]}, {vars["site"]}) in a trace of '
                              f'{trace.T} frames x {trace.m} sites.')
        dist = trace.distributions(vars['frame'], vars['softmax_temperature'])[vars['site']]
        rng = RngState.for_site(vars['seed'], vars['frame'], vars['site'])
    else:
        raise ConfigError('Give --probs, --uniform or --trace.')

    token, diag, _ = sample(sampler, dist, rng)
    doc = {'token': int(token)}
    doc.update(diag.as_dict())
    print(json.dumps(doc))
    return 0

def cmd_rollout(args):
    vars = resolve_config(args.preset, args.config_path, _overrides(args))
    sampler = sampler_from_vars(vars)
    scene = scene_from_vars(vars)
    seed = vars['seed']
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model, state = build_scene(scene, seed)
    free = model.rollout(state, RolloutConfig(vars['frames'], sampler, seed))
    forced = model.rollout(state, RolloutConfig(vars['frames'], sampler, seed, teacher_forced=True))
    drift = drift_stats(free, forced)
    report = free.collapse_report(vars['collapse_threshold'])

    outputs = ['trace.lgtr', 'collapse.csv']
    write_trace(export_trace(free), out / 'trace.lgtr')
    report_to_csv(report, out / 'collapse.csv')

    heat_dir = out / 'heatmaps'
    heat_dir.mkdir(exist_ok=True)
    for grid in free.entropy_grids:
        name = f'heatmaps/frame_{grid.frame_index:04d}.ppm'
        write_ppm(render_heatmap(grid, vars['scale']), out / name)
        outputs.append(name)

    summary = {
        'strategy': sampler.label(),
        'seed': seed,
        'frames': vars['frames'],
        'freeze_rate': json_number(drift.freeze_rate),
        'mismatch_rate': json_number(drift.mismatch_rate),
        'final_frame_avg_entropy': json_number(report.frame_avg_entropy[-1]),
    }
    _write_json(out / 'summary.json', summary)
    outputs.append('summary.json')

    if args.plot:
        from .plots import entropy_figure, top_mass_figure, write_figure
        fig = entropy_figure({
            'free-running': report,
            'teacher-forced': forced.collapse_report(vars['collapse_threshold']),
        }, title=f'Entropy per Frame, {sampler.label()}')
        write_figure(fig, out / 'entropy.html')
        outputs.append('entropy.html')
        fig = top_mass_figure({
            'first frame': top_mass_profile(free.probs[0]),
            'last frame': top_mass_profile(free.probs[-1]),
        })
        write_figure(fig, out / 'top_mass.html')
        outputs.append('top_mass.html')

    RunManifest('rollout', vars, [seed], outputs).save(out / 'manifest.json')
    logger.info('freeze rate %.4f, mismatch rate %.4f', drift.freeze_rate, drift.mismatch_rate)
    return 0

def cmd_sweep(args):
    vars = resolve_config(args.preset, args.config_path, _overrides(args))
    overrides = _overrides(args)
    seeds = parse_seeds(args.seeds) if args.seeds is not None else None

    if args.spec is not None:
        settings = dict(PRESETS.get(args.preset) or {})
        settings.update(overrides)
        spec = load_sweep_spec(args.spec, settings)
        if seeds is not None:
            spec = SweepSpec(spec.base, spec.grid, seeds, spec.scene, spec.trace_path, spec.settings)
    elif args.grid is not None:
        settings = {k: v for k, v in vars.items() if k != 'strategy'}
        spec = SweepSpec(
            base=vars['strategy'],
            grid=grid_from_name(args.grid),
            seeds=seeds if seeds is not None else [vars['seed']],
            scene=scene_from_vars(vars),
            settings=settings,
        )
    else:
        raise ConfigError('Give a sweep description file or --grid.')

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    df = run_sweep(spec, workers=vars['workers'])
    sweep_to_csv(df, out / 'sweep.csv')

    RunManifest('sweep', vars, list(spec.seeds), ['sweep.csv'],
                sweep=spec.describe()).save(out / 'manifest.json')
    return 0

def cmd_heatmap(args):
    vars = resolve_config(args.preset, args.config_path, _overrides(args))
    trace = read_trace(args.trace)
    frame = vars['frame']
    if frame >= trace.T:
        raise ConfigError(f'Frame {frame} is past the end of a {trace.T}-frame trace.')

    explicit = _overrides(args)
    height, width = grid_shape(trace.m,
                               vars['height'] if 'height' in explicit else None,
                               vars['width'] if 'width' in explicit else None)
    values = [normalized_entropy(d) for d in trace.distributions(frame, vars['softmax_temperature'])]
    image = render_heatmap(EntropyGrid(frame, height, width, values), vars['scale'])

    if args.output is not None:
        dest = Path(args.output)
    else:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dest = out / f'heatmap_{frame:04d}.ppm'
    write_ppm(image, dest)
    logger.info('Wrote heatmap %s', dest)
    return 0

def cmd_replay(args):
    vars = resolve_config(args.preset, args.config_path, _overrides(args))
    sampler = sampler_from_vars(vars)
    trace = read_trace(args.trace)
    result = replay(trace, sampler, vars['softmax_temperature'], vars['seed'],
                    vars['collapse_threshold'])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for t, frame_diag in enumerate(result.diagnostics):
        for i, diag in enumerate(frame_diag):
            row = {'frame': t, 'site': i, 'token': int(result.tokens[t, i])}
            row.update(diag.as_dict())
            rows.append(row)
    pd.DataFrame(rows).to_csv(out / 'tokens.csv', index=False, float_format='%.6f',
                              lineterminator='\n')
    report_to_csv(result.report, out / 'collapse.csv')

    summary = {
        'strategy': sampler.label(),
        'seed': vars['seed'],
        'frames': trace.T,
        'freeze_rate': json_number(freeze_rate(result.tokens)),
        'final_frame_avg_entropy': json_number(result.report.frame_avg_entropy[-1]),
    }
    _write_json(out / 'summary.json', summary)
    config = dict(vars)
    config['trace'] = str(args.trace)
    RunManifest('replay', config, [vars['seed']],
                ['tokens.csv', 'collapse.csv', 'summary.json']).save(out / 'manifest.json')
    return 0

COMMANDS = {
    'sample': cmd_sample,
    'rollout': cmd_rollout,
    'sweep': cmd_sweep,
    'heatmap': cmd_heatmap,
    'replay': cmd_replay,
}

def main(argv=None):
    """Runs the command line and returns the exit code.
    """
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(format=LOGGER_FORMAT, level=level)
    logging.getLogger('enkg').setLevel(level)

    try:
        return COMMANDS[args.command](args)
    except EnkgError as e:
        logger.error('%s', e)
        logger.debug('details', exc_info=True)
        return e.exit_code
    except OSError as e:
        logger.error('%s', e)
        logger.debug('details', exc_info=True)
        return 3

if __name__ == '__main__':
    sys.exit(main())
