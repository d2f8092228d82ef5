import json

import pytest

from conftest import SMALL_SCENARIO
from main import run
from mppt_io.write_csv import read_table


def _run(argv):
    with pytest.raises(SystemExit) as exit_info:
        run(argv)
    return exit_info.value.code


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text('exp_name: cli\n'
                    'result_rootdir: %s\n'
                    'seed: 0\n'
                    'gllr:\n  n_runs: 100\n  sigma_nu2: 1.0\n'
                    'ann:\n  arch_irr: 3,8,1\n  irradiance_levels: [0.5, 1.0]\n  epochs: 20\n'
                    '  log_every: 0\n  n_tests: 5\n' % tmp_path)
    return str(path)


def test_sweep_writes_curves_and_oracle(tmp_path):
    out = tmp_path / 'sweep'
    assert _run(['--out', str(out), 'sweep', '--scenario', SMALL_SCENARIO, '--points', '501']) == 0
    curve = read_table(str(out / 'curve.csv'))
    gmpp = read_table(str(out / 'gmpp.csv'))
    assert len(curve) == 3 * 501
    assert gmpp['pattern'].tolist() == [0, 1, 2]
    assert gmpp['n_peaks'].iloc[0] == 1
    assert gmpp['n_peaks'].iloc[1] >= 2
    assert (gmpp['p_gmpp'] > 0).all()


def test_sweep_is_byte_identical_on_rerun(tmp_path):
    for name in ('one', 'two'):
        assert _run(['--out', str(tmp_path / name), 'sweep', '--scenario', SMALL_SCENARIO, '--points', '201']) == 0
    for table in ('curve.csv', 'gmpp.csv'):
        assert (tmp_path / 'one' / table).read_bytes() == (tmp_path / 'two' / table).read_bytes()


def test_invalid_scenario_reports_a_config_error(tmp_path, capsys):
    with open(SMALL_SCENARIO) as fp:
        document = json.load(fp)
    del document['module']
    path = tmp_path / 'broken.json'
    path.write_text(json.dumps(document))
    assert _run(['--out', str(tmp_path / 'out'), 'sweep', '--scenario', str(path)]) == 1
    lines = capsys.readouterr().err.splitlines()
    assert any(line.startswith('error: invalid-config: ') for line in lines)


def test_unknown_subcommand(tmp_path):
    assert _run(['--out', str(tmp_path), 'fly']) == 2


def test_calibrate_gllr(tmp_path, small_config):
    out = tmp_path / 'calibration'
    assert _run(['-c', small_config, '--out', str(out), 'calibrate-gllr', '--runs', '100']) == 0
    row = read_table(str(out / 'calibration.csv')).iloc[0]
    assert row['h'] > 0 and row['h1'] > 0
    assert row['sigma_nu'] == pytest.approx(1.0)
    assert row['target_run_length'] == pytest.approx(400.0)


def test_calibrate_gllr_overrides_and_histogram(tmp_path, small_config):
    out = tmp_path / 'calibration'
    assert _run(['-c', small_config, '--out', str(out), 'calibrate-gllr', '--runs', '100', '--b', '0.5',
                 '--sigma-nu', '2.0', '--gamma', '5', '--fs', '10']) == 0
    row = read_table(str(out / 'calibration.csv')).iloc[0]
    assert (row['b'], row['sigma_nu'], row['gamma_s'], row['f_s_hz']) == (0.5, 2.0, 5.0, 10.0)
    assert row['target_run_length'] == pytest.approx(50.0)
    histogram = read_table(str(out / 'run_length_histogram.csv'))
    assert list(histogram.columns) == ['bin_lo', 'bin_hi', 'count']
    assert histogram['count'].sum() == 100
    assert (histogram['bin_hi'] > histogram['bin_lo']).all()


def test_non_finite_irradiance_reports_invalid_input(tmp_path, capsys):
    with open(SMALL_SCENARIO) as fp:
        document = json.load(fp)
    document['environment']['schedule'][1]['irradiance_kw_m2'] = [1.0, float('nan'), 0.5]
    path = tmp_path / 'nan.json'
    path.write_text(json.dumps(document))
    assert _run(['--out', str(tmp_path / 'out'), 'sweep', '--scenario', str(path)]) == 1
    lines = capsys.readouterr().err.splitlines()
    assert any(line.startswith('error: invalid-input: ') for line in lines)


def test_stray_value_error_becomes_an_error_line(tmp_path, capsys, monkeypatch):
    def broken_sweep(*args, **kwargs):
        raise ValueError('levels out of order')

    monkeypatch.setattr('main.sweep', broken_sweep)
    assert _run(['--out', str(tmp_path / 'out'), 'sweep', '--scenario', SMALL_SCENARIO]) == 1
    assert 'error: invalid-input: levels out of order' in capsys.readouterr().err.splitlines()


def test_train_then_evaluate(tmp_path, small_config):
    out = tmp_path / 'net'
    assert _run(['-c', small_config, '--out', str(out), 'train-ann', '--mode', 'irr', '--epochs', '20']) == 0
    model_path = out / 'model_irradiance.json'
    assert model_path.is_file()
    assert len(read_table(str(out / 'history_irradiance.csv'))) > 0

    assert _run(['-c', small_config, '--out', str(out), 'eval-pqi', '--model', str(model_path),
                 '--tests', '5']) == 0
    summary = read_table(str(out / 'pqi_summary.csv')).iloc[0]
    assert summary['mode'] == 'irradiance'
    assert summary['g_tests'] == 5
    assert summary['pqi'] > 0.0
    assert summary['pqi_folded'] <= 100.0
    assert len(read_table(str(out / 'pqi.csv'))) == 5


def test_eval_requires_a_model(tmp_path):
    assert _run(['--out', str(tmp_path), 'eval-pqi']) == 2


def test_simulate(tmp_path, small_config, quick_scenario):
    out = tmp_path / 'sim'
    assert _run(['-c', small_config, '--out', str(out), 'simulate', '--scenario', quick_scenario,
                 '--replications', '1']) == 0
    metrics = read_table(str(out / 'metrics.csv'))
    assert sorted(set(metrics['controller'])) == ['enhanced', 'ic_baseline']
    assert (metrics['replications'] == 1).all()
    assert (out / 'trace_enhanced_0.csv').is_file()
    assert not (out / 'trace_enhanced_1.csv').exists()


@pytest.mark.slow
def test_quick_bench_reports_every_check(tmp_path):
    out = tmp_path / 'bench'
    assert _run(['--out', str(out), 'bench', '--quick']) == 0
    bench = read_table(str(out / 'bench.csv'))
    assert list(bench.columns) == ['check', 'value', 'target', 'passed', 'seconds']
    assert bench['check'].is_unique
