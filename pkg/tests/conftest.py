"""
Shared fixtures for the ivflow test suite.
"""

import json
import os
import sys
import pytest

# Ensure ivflow package is importable
IVFLOW_PYTHON = os.path.join(os.path.dirname(__file__), '..', 'python')
if IVFLOW_PYTHON not in sys.path:
    sys.path.insert(0, os.path.abspath(IVFLOW_PYTHON))


def pytest_configure(config):
    config.addinivalue_line(
        'markers', 'slow: acceptance-scale run, enabled with IVFLOW_SLOW=1'
    )


def pytest_collection_modifyitems(config, items):
    if os.environ.get('IVFLOW_SLOW') == '1':
        return
    skip = pytest.mark.skip(reason='set IVFLOW_SLOW=1 to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def make_experiment_file(tmp_path):
    """Factory fixture writing an experiment document as JSON."""
    def _make(document, name='experiment.json', subdir=None):
        path = tmp_path / subdir if subdir else tmp_path
        path.mkdir(parents=True, exist_ok=True)
        config_file = path / name
        config_file.write_text(json.dumps(document, indent=2))
        return str(config_file)

    return _make


@pytest.fixture
def make_defaults_file(tmp_path):
    """Factory fixture to create ivflow.yaml defaults files."""
    def _make(content, subdir=None):
        path = tmp_path / subdir if subdir else tmp_path
        path.mkdir(parents=True, exist_ok=True)
        config_file = path / 'ivflow.yaml'
        config_file.write_text(content)
        return str(config_file)

    return _make


@pytest.fixture
def standard():
    from ivflow.maps import standard_map
    return standard_map(0.1)


@pytest.fixture
def froeschle():
    from ivflow.maps import froeschle_map
    return froeschle_map(0.2)
