"""
Tests for the ivflow CLI (__main__.py): end-to-end command-line invocation.
"""

import csv
import json
import os
import sys
import subprocess
import pytest


IVFLOW_DIR = os.path.join(os.path.dirname(__file__), '..')
PYTHON_DIR = os.path.join(IVFLOW_DIR, 'python')


def run_ivflow(*args, cwd=None, env=None):
    """Run ivflow as a subprocess and return result."""
    cmd_env = os.environ.copy()
    cmd_env['PYTHONPATH'] = PYTHON_DIR + ':' + cmd_env.get('PYTHONPATH', '')
    if env:
        cmd_env.update(env)

    result = subprocess.run(
        [sys.executable, '-m', 'ivflow'] + list(args),
        capture_output=True,
        text=True,
        cwd=cwd,
        env=cmd_env,
        timeout=120,
    )
    return result


COEFF_DUMP = {'kind': 'coeff-dump', 'ivf': {'n': [1, 2]}}

ITERATE = {
    'kind': 'iterate',
    'map': {'map': 'standard', 'epsilon': 0.1},
    'params': {'seeds': [[0.5, 0.1]], 'num_iterates': 10},
}


class TestCLIBasic:
    """Basic CLI invocation tests."""

    def test_help(self):
        result = run_ivflow('--help')
        assert result.returncode == 0
        assert 'Available commands' in result.stdout
        for command in ('run', 'validate', 'coeffs'):
            assert command in result.stdout

    def test_unknown_command(self):
        result = run_ivflow('bogus')
        assert result.returncode != 0
        assert 'invalid choice' in result.stderr

    def test_coeffs_table(self):
        result = run_ivflow('coeffs', '--n', '2')
        assert result.returncode == 0
        assert 'p_nk, n = 2' in result.stdout
        assert '2/3' in result.stdout
        assert '-1/12' in result.stdout

    def test_coeffs_csv(self, tmp_path):
        result = run_ivflow('coeffs', '--n', '1', '--n', '3',
                            '--out', str(tmp_path))
        assert result.returncode == 0
        assert (tmp_path / 'coeffs_n1.csv').is_file()
        with open(tmp_path / 'coeffs_n3.csv', newline='') as f:
            rows = list(csv.reader(f))
        assert rows[0] == ['k', 'p_nk', 'exact']
        assert len(rows) == 8


class TestCLIRun:
    """The run command and its exit codes."""

    def test_run_writes_artifacts(self, tmp_path, make_experiment_file):
        config = make_experiment_file(ITERATE)
        out = tmp_path / 'out'
        result = run_ivflow('run', '--config', config, '--out', str(out),
                            '--workers', '1')
        assert result.returncode == 0, result.stderr
        assert 'Run summary: iterate' in result.stdout
        assert (out / 'orbits.csv').is_file()
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['status'] == 'ok'

    def test_output_from_config(self, tmp_path, make_experiment_file):
        document = dict(COEFF_DUMP, output='results')
        config = make_experiment_file(document)
        result = run_ivflow('run', '--config', config, '--quiet',
                            cwd=str(tmp_path))
        assert result.returncode == 0, result.stderr
        assert result.stdout == ''
        assert (tmp_path / 'results' / 'coeff_identities.csv').is_file()

    def test_missing_config_option(self):
        result = run_ivflow('run')
        assert result.returncode == 2
        assert 'Config error: run needs --config' in result.stderr

    def test_invalid_config(self, tmp_path, make_experiment_file):
        config = make_experiment_file({'kind': 'flow-error'})
        result = run_ivflow('run', '--config', config,
                            '--out', str(tmp_path / 'out'))
        assert result.returncode == 2
        assert 'missing grid block required by flow-error' in result.stderr
        assert not (tmp_path / 'out').exists()

    def test_unreadable_document(self, tmp_path):
        config = tmp_path / 'broken.json'
        config.write_text('{"kind": ')
        result = run_ivflow('run', '--config', str(config))
        assert result.returncode == 2
        assert 'Failed to parse' in result.stderr

    def test_missing_file(self, tmp_path):
        result = run_ivflow('run', '--config', str(tmp_path / 'none.json'))
        assert result.returncode == 4
        assert 'I/O error' in result.stderr

    def test_numerical_failure(self, tmp_path, make_experiment_file):
        config = make_experiment_file({
            'kind': 'seed-levelset',
            'map': {'map': 'froeschle', 'epsilon': 0.2},
            'ivf': {'n': 1},
            'section': {'type': 'angle_difference'},
            'params': {'energy': 100.0, 'psi_values': [0.0], 'count': 2,
                       'j2_max': 1.0},
        })
        out = tmp_path / 'out'
        result = run_ivflow('run', '--config', config, '--out', str(out),
                            '--quiet')
        assert result.returncode == 3
        assert 'Numerical failure' in result.stderr
        assert (out / 'failure.log').is_file()

    def test_py_stack(self, make_experiment_file):
        config = make_experiment_file({'kind': 'flow-error'})
        result = run_ivflow('run', '--config', config, '--py-stack')
        assert result.returncode == 1
        assert 'Traceback' in result.stderr
        assert 'ConfigError' in result.stderr


class TestCLIValidate:
    """The validate command."""

    def test_valid(self, make_experiment_file):
        config = make_experiment_file(ITERATE)
        result = run_ivflow('validate', '--config', config)
        assert result.returncode == 0
        assert 'valid iterate experiment' in result.stdout
        assert 'about 10 map applications' in result.stdout

    def test_problems_listed(self, make_experiment_file):
        config = make_experiment_file({'kind': 'iterate', 'workers': -2,
                                       'map': {'map': 'standard'}})
        result = run_ivflow('validate', '--config', config)
        assert result.returncode == 2
        assert 'Config error: map.epsilon is required' in result.stderr
        assert 'Config error: workers must be a non-negative integer' \
            in result.stderr

    def test_defaults_applied(self, make_experiment_file, make_defaults_file):
        make_defaults_file("integrator:\n  abs_tol: -1.0\n")
        config = make_experiment_file(ITERATE)
        result = run_ivflow('validate', '--config', config)
        assert result.returncode == 2
        assert 'integrator.abs_tol must be positive' in result.stderr

    @pytest.mark.parametrize('name', [
        'standard_flow_error_eps0p1.json',
        'froeschle_section_eps0p2.json',
        'coeff_dump.json',
    ])
    def test_shipped_experiments(self, name):
        config = os.path.join(IVFLOW_DIR, 'experiments', name)
        result = run_ivflow('validate', '--config', config)
        assert result.returncode == 0, result.stderr
