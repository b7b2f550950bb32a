import json

import pytest

from aiocollapse.cli import main

TWO_LEVEL = '''\
    [run]
    initial = 0.5, 0.5
    mode = fixed-k
    k = 0.1
    steps = 50
    trajectories = 2000
    seed = 42
    chunk_size = 250
    '''

SMALL_VERIFY = '''\
    [verify]
    seed = 5
    mutation = %s
    fuzz_cases = 2000
    oracle_steps = 5
    oracle_trajectories = 3000
    oracle_compare_steps = 5
    martingale_trajectories = 500
    martingale_steps = 50
    decay_trajectories = 20000
    decay_steps = 150
    decay_rate_tolerance = 0.1
    born_trajectories = 1000
    born_steps = 1000
    binomial_z = 4
    scale_trajectories = 1000
    scale_steps = 40
    '''


@pytest.fixture
def out(tmp_path):
    return tmp_path / 'out'


def _read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_simulate_writes_moments(write_config, out):
    code = main(['simulate', '--config', write_config(TWO_LEVEL),
                 '--out', str(out)])
    assert code == 0
    lines = (out / 'ensemble.csv').read_text().splitlines()
    assert lines[0] == 'step,mean_P0,se_P0,mean_P1,se_P1,cross_01,se_01'
    assert len(lines) == 52
    assert lines[1].startswith('0,0.5,0.0,0.5,0.0,0.25,0.0')

    summary = _read_jsonl(out / 'summary.jsonl')
    assert summary[0]['record'] == 'run'
    assert summary[0]['trajectories'] == 2000
    assert summary[0]['seed'] == 42
    tests = {r['test']: r for r in summary if r['record'] == 'test'}
    assert tests['martingale']['verdict'] == 'PASS'
    assert 'decay_fit' in tests
    half = [r for r in summary if r['record'] == 'half_decay'][0]
    assert half['fixed_k_steps'] == pytest.approx(68.97, abs=0.01)


def test_simulate_is_thread_independent(write_config, tmp_path):
    config = write_config(TWO_LEVEL)
    outputs = []
    for threads in ('1', '4', '8'):
        target = tmp_path / ('threads' + threads)
        assert main(['simulate', '--config', config, '--out', str(target),
                     '--threads', threads]) == 0
        outputs.append((target / 'ensemble.csv').read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_simulate_seed_override(write_config, tmp_path):
    config = write_config(TWO_LEVEL)
    assert main(['simulate', '--config', config,
                 '--out', str(tmp_path / 'a'), '--seed', '1']) == 0
    assert main(['simulate', '--config', config,
                 '--out', str(tmp_path / 'b'), '--seed', '2']) == 0
    assert (tmp_path / 'a' / 'ensemble.csv').read_bytes() != \
        (tmp_path / 'b' / 'ensemble.csv').read_bytes()


def test_simulate_structured_text(write_config, out):
    assert main(['simulate', '--config', write_config(TWO_LEVEL),
                 '--out', str(out), '--format', 'structured-text']) == 0
    rows = _read_jsonl(out / 'ensemble.jsonl')
    assert len(rows) == 51
    assert rows[0]['mean_P0'] == '0.5'


def test_simulate_groups(write_config, out):
    config = write_config('''\
        [run]
        initial = 0.1, 0.2, 0.3, 0.4
        k = 0.1
        steps = 20
        trajectories = 200
        groups = 0,1; 2,3
        ''')
    assert main(['simulate', '--config', config, '--out', str(out)]) == 0
    grouped = (out / 'groups_ensemble.csv').read_text().splitlines()
    assert grouped[0] == 'step,mean_P0,se_P0,mean_P1,se_P1,cross_01,se_01'


def test_simulate_model_k_many_body(write_config, out):
    config = write_config('''\
        [run]
        initial = 0.5, 0.5
        mode = model-k
        steps = 30
        trajectories = 300

        [spectrum]
        energies = 0.01, 0; 0, 0.01
        ''')
    assert main(['simulate', '--config', config, '--out', str(out)]) == 0
    summary = _read_jsonl(out / 'summary.jsonl')
    assert summary[0]['mode'] == 'model-k'
    half = [r for r in summary if r['record'] == 'half_decay'][0]
    assert half['initial_k'] == pytest.approx(2 * 3.141592653589793 * 0.005)


@pytest.mark.parametrize('run', [
    'initial = 0.5, 0.4\nk = 0.1\nsteps = 10\ntrajectories = 10\n',
    'initial = 0.5, 0.5\nk = 0.1\nsteps = 10\ntrajectories = 0\n',
    'initial = 0.5, 0.5\nk = 1.5\nsteps = 10\ntrajectories = 10\n',
    'initial = 0.5, 0.5\nmode = model-k\nsteps = 10\ntrajectories = 10\n',
    'initial = 0.5, 0.5\nk = 0.1\nsteps = 10\ntrajectories = 10\n'
    'colour = blue\n',
])
def test_simulate_config_errors(write_config, out, run):
    config = write_config('[run]\n' + run)
    assert main(['simulate', '--config', config, '--out', str(out)]) == 2
    assert not (out / 'ensemble.csv').exists()


def test_simulate_requires_config(out):
    assert main(['simulate', '--out', str(out)]) == 2


def test_simulate_refuses_overwrite(write_config, out):
    config = write_config(TWO_LEVEL)
    assert main(['simulate', '--config', config, '--out', str(out)]) == 0
    before = (out / 'ensemble.csv').read_bytes()
    assert main(['simulate', '--config', config, '--out', str(out),
                 '--seed', '3']) == 2
    assert (out / 'ensemble.csv').read_bytes() == before
    assert main(['simulate', '--config', config, '--out', str(out),
                 '--seed', '3', '--force']) == 0
    assert (out / 'ensemble.csv').read_bytes() != before


def test_simulate_budget(write_config, out):
    config = write_config(TWO_LEVEL + '    budget = 1000\n')
    assert main(['simulate', '--config', config, '--out', str(out)]) == 3


def test_oracle_and_report(write_config, tmp_path, capsys):
    run = tmp_path / 'run'
    run_config = write_config(TWO_LEVEL.replace('steps = 50', 'steps = 8')
                              .replace('trajectories = 2000',
                                       'trajectories = 20000'))
    assert main(['simulate', '--config', run_config, '--out', str(run)]) == 0
    assert main(['oracle', '--config', run_config, '--out', str(run)]) == 0
    oracle_lines = (run / 'oracle.csv').read_text().splitlines()
    assert oracle_lines[0] == (run / 'ensemble.csv').read_text() \
        .splitlines()[0]
    assert len(oracle_lines) == 10

    report_config = write_config('''\
        [report]
        ensemble_csv = %s
        oracle_csv = %s
        ''' % (run / 'ensemble.csv', run / 'oracle.csv'), 'report.ini')
    capsys.readouterr()
    assert main(['report', '--config', report_config,
                 '--out', str(tmp_path / 'report')]) == 0
    assert 'PASS' in capsys.readouterr().out
    record = _read_jsonl(tmp_path / 'report' / 'report.jsonl')[0]
    assert record['test'] == 'oracle_compare'
    assert len(record['rows']) == 9


def test_oracle_budget(write_config, out):
    config = write_config('''\
        [run]
        initial = 0.2, 0.3, 0.5
        k = 0.1
        steps = 30
        trajectories = 10

        [oracle]
        node_budget = 1000
        ''')
    assert main(['oracle', '--config', config, '--out', str(out)]) == 3


def test_report_markdown(capsys):
    assert main(['report', '--format', 'markdown']) == 0
    text = capsys.readouterr().out
    assert '* run.initial' in text
    assert '* AIOCOLLAPSE_THREADS' in text


def test_report_missing_files(write_config, out):
    config = write_config('''\
        [report]
        ensemble_csv = missing.csv
        ''')
    assert main(['report', '--config', config, '--out', str(out)]) == 2


def test_report_corrupt_csv(write_config, tmp_path, out):
    corrupt = tmp_path / 'ensemble.csv'
    corrupt.write_text('step,mean_P0,se_P0,mean_P1,se_P1,cross_01,se_01\n'
                       '0,0.5,0.0,n/a,0.0,0.25,0.0\n')
    config = write_config('''\
        [report]
        ensemble_csv = %s
        oracle_csv = %s
        ''' % (corrupt, corrupt), 'report.ini')
    assert main(['report', '--config', config, '--out', str(out)]) == 2


def test_scenarios(out, capsys):
    assert main(['scenarios', '--out', str(out),
                 '--format', 'structured-text']) == 0
    rows = _read_jsonl(out / 'scenarios.jsonl')
    assert len(rows) >= 12
    assert all(row['within_tolerance'] for row in rows)
    assert 'photon collapse time' in capsys.readouterr().out


def test_scenarios_csv(out):
    assert main(['scenarios', '--out', str(out)]) == 0
    lines = (out / 'scenarios.csv').read_text().splitlines()
    assert lines[0].startswith('name,computed,unit,reference,ratio')


def test_scenarios_negative_radius(write_config, out):
    config = write_config('[constants]\nradius_universe = -1e25\n')
    assert main(['scenarios', '--config', config, '--out', str(out)]) == 2


def test_scenarios_wrong_planck_time(write_config, out):
    config = write_config('[constants]\nplanck_time = 1.08e-43\n')
    assert main(['scenarios', '--config', config, '--out', str(out),
                 '--format', 'structured-text']) == 1
    rows = {row['name']: row for row in _read_jsonl(out / 'scenarios.jsonl')}
    assert not rows['180Ta isomer collapse time']['within_tolerance']


def test_verify_rejects_format(out):
    assert main(['verify', '--out', str(out), '--format', 'csv']) == 2


def test_verify_small_battery(write_config, out, capsys):
    config = write_config(SMALL_VERIFY % 'none')
    assert main(['verify', '--config', config, '--out', str(out),
                 '--threads', '4']) == 0
    records = _read_jsonl(out / 'verify.jsonl')
    assert all(r['verdict'] == 'PASS' for r in records)
    assert 'martingale_fixed_k' in capsys.readouterr().out


def test_verify_mutation_fails(write_config, out):
    config = write_config(SMALL_VERIFY % 'branch0-only')
    assert main(['verify', '--config', config, '--out', str(out),
                 '--format', 'text']) == 1
    assert 'FAIL' in (out / 'verify.txt').read_text()


def test_bad_threads_env(monkeypatch, out):
    monkeypatch.setenv('AIOCOLLAPSE_THREADS', '0')
    assert main(['scenarios', '--out', str(out)]) == 2
