import json

import numpy as np
import pandas as pd
import pytest

from enkg.cli import main, parse_seeds, grid_shape
from enkg.diagnostics import EntropyGrid, read_ppm, render_heatmap, ppm_bytes
from enkg.distributions import normalized_entropy
from enkg.errors import ConfigError
from enkg.trace import LogitTrace, write_trace, read_trace

SMALL_SCENE = ['--height', '4', '--width', '4']


def run_sample(capsys, *argv):
    assert main(['sample', *argv]) == 0
    return json.loads(capsys.readouterr().out)


def write_logits(path, logits):
    write_trace(LogitTrace.from_array(np.asarray(logits, dtype=np.float32)), path)
    return str(path)


def test_sample_worked_example(capsys):
    doc = run_sample(capsys, '--probs', '0.4,0.3,0.2,0.1', '--strategy', 'enkg', '--seed', '7')
    assert doc['h_norm'] == pytest.approx(0.923220, abs=1e-6)
    assert doc['p_target'] == pytest.approx(0.9)
    assert doc['cutoff'] == 3
    assert doc['guard_triggered'] is False
    assert doc['token'] in (0, 1, 2)


def test_sample_greedy_uniform(capsys):
    doc = run_sample(capsys, '--uniform', '16', '--strategy', 'greedy')
    assert doc['token'] == 0
    assert doc['p_target'] is None
    assert doc['h_norm'] == pytest.approx(1.0)


def test_sample_guard_on_one_hot(capsys):
    doc = run_sample(capsys, '--probs', '1,0,0', '--strategy', 'enkg')
    assert doc == {'token': 0, 'h_norm': 0.0, 'p_target': pytest.approx(0.65),
                   'cutoff': 3, 'guard_triggered': True}


def test_sample_is_reproducible(capsys):
    argv = ['--probs', '0.25,0.25,0.25,0.25', '--preset', 'cosmos', '--seed', '123']
    assert run_sample(capsys, *argv) == run_sample(capsys, *argv)


def test_sample_from_trace(capsys, tmp_path):
    path = write_logits(tmp_path / 't.lgtr', np.arange(24).reshape(2, 3, 4))
    doc = run_sample(capsys, '--trace', path, '--frame', '1', '--site', '2',
                     '--strategy', 'greedy')
    assert doc['token'] == 3


@pytest.mark.parametrize('argv, code', [
    (['sample', '--probs', '0.5,0.5', '--top-k', '0', '--strategy', 'top_k'], 2),
    (['sample', '--probs', '0.5,0.5', '--strategy', 'beam'], 2),
    (['sample'], 2),
    (['sample', '--probs', '0.5,0.6'], 4),
    (['sample', '--probs', '0.5,-0.1,0.6'], 4),
])
def test_sample_exit_codes(argv, code, capsys):
    assert main(argv) == code
    assert capsys.readouterr().out == ''


def test_missing_trace_exit_code(tmp_path):
    assert main(['replay', str(tmp_path / 'nope.lgtr'), '--out', str(tmp_path)]) == 3


def test_bad_trace_exit_code(tmp_path):
    path = tmp_path / 'bad.lgtr'
    path.write_bytes(b'XGTR' + bytes(30))
    assert main(['heatmap', str(path), '--out', str(tmp_path)]) == 3


def test_rollout_outputs(tmp_path):
    out = tmp_path / 'run'
    assert main(['rollout', '--frames', '1', '--out', str(out), *SMALL_SCENE]) == 0
    assert sorted(p.name for p in (out / 'heatmaps').iterdir()) == ['frame_0000.ppm']
    image = read_ppm(out / 'heatmaps' / 'frame_0000.ppm')
    assert (image.width, image.height) == (32, 32)

    trace = read_trace(out / 'trace.lgtr')
    assert (trace.T, trace.m, trace.V) == (1, 16, 16)
    collapse = pd.read_csv(out / 'collapse.csv')
    assert list(collapse.columns) == ['frame', 'avg_entropy', 'low_entropy_share', 'top1_mass']
    summary = json.loads((out / 'summary.json').read_text())
    assert summary['frames'] == 1
    assert summary['freeze_rate'] == 0.0
    manifest = json.loads((out / 'manifest.json').read_text())
    assert manifest['command'] == 'rollout'
    assert manifest['seeds'] == [42]


def test_rollout_is_byte_identical(tmp_path):
    dirs = [tmp_path / 'a', tmp_path / 'b']
    for d in dirs:
        assert main(['rollout', '--frames', '4', '--seed', '9', '--out', str(d),
                     *SMALL_SCENE]) == 0
    names = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob('*') if p.is_file())
    assert len(names) == 4 + 4
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_rollout_from_manifest(tmp_path):
    assert main(['rollout', '--frames', '3', '--preset', 'drivingworld', '--seed', '5',
                 '--out', str(tmp_path / 'a'), *SMALL_SCENE]) == 0
    assert main(['rollout', '--config', str(tmp_path / 'a' / 'manifest.json'),
                 '--out', str(tmp_path / 'b')]) == 0
    assert ((tmp_path / 'a' / 'trace.lgtr').read_bytes()
            == (tmp_path / 'b' / 'trace.lgtr').read_bytes())


def test_greedy_freezes_more_than_enkg(tmp_path):
    freeze = {}
    for strategy in ('greedy', 'enkg'):
        out = tmp_path / strategy
        assert main(['rollout', '--strategy', strategy, '--frames', '20', '--out', str(out)]) == 0
        freeze[strategy] = json.loads((out / 'summary.json').read_text())['freeze_rate']
    assert freeze['greedy'] > freeze['enkg']


def test_rollout_plot(tmp_path):
    assert main(['rollout', '--frames', '2', '--plot', '--out', str(tmp_path), *SMALL_SCENE]) == 0
    assert (tmp_path / 'entropy.html').exists()
    assert (tmp_path / 'top_mass.html').exists()


def test_heatmap_uniform_is_red(tmp_path):
    path = write_logits(tmp_path / 'u.lgtr', np.zeros((1, 4, 8)))
    assert main(['heatmap', path, '--output', str(tmp_path / 'h.ppm'), '--scale', '1']) == 0
    image = read_ppm(tmp_path / 'h.ppm')
    assert (image.width, image.height) == (2, 2)
    assert np.all(image.pixels == [255, 0, 0])


def test_heatmap_one_hot_is_blue(tmp_path):
    logits = np.zeros((2, 9, 8))
    logits[..., 0] = 100.0
    path = write_logits(tmp_path / 'o.lgtr', logits)
    assert main(['heatmap', path, '--frame', '1', '--out', str(tmp_path)]) == 0
    image = read_ppm(tmp_path / 'heatmap_0001.ppm')
    assert (image.width, image.height) == (24, 24)
    assert np.all(image.pixels == [0, 0, 255])


def test_heatmap_matches_renderer(tmp_path):
    logits = np.random.default_rng(0).normal(size=(1, 6, 5))
    path = write_logits(tmp_path / 'm.lgtr', logits)
    assert main(['heatmap', path, '--height', '2', '--width', '3', '--scale', '2',
                 '--output', str(tmp_path / 'm.ppm')]) == 0
    trace = read_trace(path)
    values = [normalized_entropy(d) for d in trace.distributions(0)]
    expected = ppm_bytes(render_heatmap(EntropyGrid(0, 2, 3, values), 2))
    assert (tmp_path / 'm.ppm').read_bytes() == expected


def test_heatmap_derives_missing_dimension(tmp_path):
    path = write_logits(tmp_path / 'm.lgtr', np.zeros((1, 6, 5)))
    assert main(['heatmap', path, '--height', '2', '--scale', '3',
                 '--output', str(tmp_path / 'h.ppm')]) == 0
    image = read_ppm(tmp_path / 'h.ppm')
    assert (image.width, image.height) == (9, 6)
    assert main(['heatmap', path, '--height', '4', '--output', str(tmp_path / 'x.ppm')]) == 2
    assert not (tmp_path / 'x.ppm').exists()


def test_heatmap_frame_out_of_range(tmp_path):
    path = write_logits(tmp_path / 'u.lgtr', np.zeros((1, 4, 8)))
    assert main(['heatmap', path, '--frame', '1', '--out', str(tmp_path)]) == 2


def test_replay_outputs(tmp_path):
    path = write_logits(tmp_path / 'r.lgtr', np.random.default_rng(1).normal(size=(3, 4, 6)))
    out = tmp_path / 'replay'
    assert main(['replay', path, '--strategy', 'top_k', '--top-k', '1', '--out', str(out)]) == 0
    tokens = pd.read_csv(out / 'tokens.csv')
    assert len(tokens) == 12
    trace = read_trace(path)
    np.testing.assert_array_equal(tokens.token.to_numpy().reshape(3, 4),
                                  trace.array.argmax(axis=2))
    assert len(pd.read_csv(out / 'collapse.csv')) == 3
    summary = json.loads((out / 'summary.json').read_text())
    assert summary['frames'] == 3
    assert json.loads((out / 'manifest.json').read_text())['config']['trace'] == path


def test_sweep_grid(tmp_path):
    assert main(['sweep', '--grid', 'k_guard', '--seeds', '1-2', '--frames', '3',
                 '--out', str(tmp_path), *SMALL_SCENE]) == 0
    df = pd.read_csv(tmp_path / 'sweep.csv')
    assert len(df) == 5 * 3
    assert df.fvd.isna().all()
    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    assert manifest['seeds'] == [1, 2]
    assert manifest['sweep']['base'] == 'enkg'


def test_sweep_needs_a_grid(tmp_path):
    assert main(['sweep', '--out', str(tmp_path)]) == 2


def test_parse_seeds():
    assert parse_seeds('1-3,7') == [1, 2, 3, 7]
    with pytest.raises(ConfigError):
        parse_seeds('a-b')
    with pytest.raises(ConfigError):
        parse_seeds(' , ')


def test_grid_shape():
    assert grid_shape(16) == (4, 4)
    assert grid_shape(6) == (1, 6)
    assert grid_shape(6, 2, 3) == (2, 3)
    assert grid_shape(16, 2) == (2, 8)
    assert grid_shape(16, None, 8) == (2, 8)
    with pytest.raises(ConfigError):
        grid_shape(6, 2, 2)
    with pytest.raises(ConfigError):
        grid_shape(6, 4)
