"""
Tests for ivflow.runner: worker pool, experiment runs, manifest and stats.
"""

import csv
import io
import json
import threading
from pathlib import Path

import numpy as np
import pytest
from rich.console import Console
from rich.table import Table

from ivflow.config import ExperimentConfig
from ivflow.errors import ConfigError, NumericalFailure
from ivflow.experiments import PIPELINES, estimate_map_applications
from ivflow.ivf import IvfField
from ivflow.live_display import LiveDisplay
from ivflow.maps import standard_map
from ivflow.reporting import format_value, table_dump_row
from ivflow.runner import WorkerPool, dump_summary, run
from ivflow.stats import RunStats


def read_csv(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


def flow_error_config(**changes):
    document = {
        'kind': 'flow-error',
        'map': {'map': 'standard', 'epsilon': 0.1},
        'ivf': {'n': 2},
        'grid': {'lower': [-2.0, -2.0], 'upper': [2.0, 2.0],
                 'resolution': 5},
        'chunk_size': 4,
    }
    document.update(changes)
    return ExperimentConfig.from_dict(document)


# ---------------------------------------------------------------------------
# Worker pool
# ---------------------------------------------------------------------------

class TestWorkerPool:
    """Chunked dispatch with ordered results."""

    def test_default_worker_count(self):
        assert WorkerPool(0).nb_threads >= 1

    def test_inline_without_threads(self):
        with WorkerPool(1) as pool:
            assert pool.threads == []
            assert pool.map(lambda v: v * v, [1, 2, 3]) == [1, 4, 9]

    def test_threads_keep_order(self):
        def work(v):
            assert threading.current_thread() is not threading.main_thread()
            return v + 1

        with WorkerPool(4) as pool:
            assert len(pool.threads) == 4
            assert pool.map(work, list(range(50))) == list(range(1, 51))
        assert pool.threads == []

    def test_first_error_reraised(self):
        def work(v):
            if v in (3, 7):
                raise NumericalFailure(f'item {v}')
            return v

        with WorkerPool(3) as pool:
            with pytest.raises(NumericalFailure, match='item 3'):
                pool.map(work, list(range(10)))
            # the pool survives a failing batch
            assert pool.map(str, [1, 2]) == ['1', '2']

    def test_map_array_fixed_chunks(self):
        sizes = []

        def work(block):
            sizes.append(len(block))
            return block * 2

        items = np.arange(20.0).reshape(10, 2)
        with WorkerPool(1, chunk_size=3) as pool:
            out = pool.map_array(work, items)
        assert np.array_equal(out, items * 2)
        assert sizes == [3, 3, 3, 1]

    def test_map_array_empty(self):
        with WorkerPool(2, chunk_size=3) as pool:
            out = pool.map_array(lambda b: b[:, :1], np.empty((0, 2)))
        assert out.shape == (0, 1)

    def test_display_progress(self):
        display = LiveDisplay(Console(file=io.StringIO()), label='test')
        display.start(0)
        with WorkerPool(2, display=display) as pool:
            pool.map(lambda v: v, list(range(6)))
            with pytest.raises(ValueError):
                pool.map(lambda v: int('x'), [0])
        display.stop()
        assert display.total == 7
        assert display.completed == 7
        assert display.failed == 1


# ---------------------------------------------------------------------------
# Statistics and summary table
# ---------------------------------------------------------------------------

class TestStats:
    """Counters and the manifest they feed."""

    def test_add_field(self):
        stats = RunStats()
        field = IvfField(standard_map(0.1), 3)
        field(np.zeros((4, 2)))
        stats.add_field(field)
        assert stats.stats['field_evals'] == 4
        assert stats.stats['map_applications'] == 4 * 6

    def test_failed_sums_failure_keys(self):
        stats = RunStats()
        stats.add_stats(failures=2, partial_seeds=1, points=10)
        assert stats.failed == 3

    def test_manifest(self):
        stats = RunStats()
        stats.add_stats(points=5, duration=1.5)
        manifest = stats.manifest('abc', 'iterate', ['b.csv', 'a.csv'])
        assert manifest['status'] == 'ok'
        assert manifest['failure'] is None
        assert manifest['config_sha256'] == 'abc'
        assert manifest['wall_time'] == 1.5
        assert manifest['counts']['points'] == 5
        assert 'duration' not in manifest['counts']
        assert manifest['artifacts'] == ['a.csv', 'b.csv']
        assert set(manifest['versions']) == {'ivflow', 'numpy', 'scipy',
                                             'python'}

    def test_format_value(self):
        assert format_value(3) == '3'
        assert format_value(0.5) == '0.500'
        assert format_value(1.5e-7) == '1.500e-07'
        assert format_value(0.0) == '0.000'

    def test_table_rows(self):
        table = Table()
        table.add_column('Quantity')
        table.add_column('Value')
        table_dump_row(table, 'failures', 2, failed=True)
        table_dump_row(table, 'points', 10)
        assert table.row_count == 2
        assert table.rows[0].style == 'red'
        assert table.rows[1].style is None

    def test_summary_output(self):
        stats = RunStats()
        stats.add_stats(points=12, failures=1)
        console = Console(file=io.StringIO(), width=100)
        dump_summary(stats, 'flow-error', console)
        text = console.file.getvalue()
        assert 'Run summary: flow-error' in text
        assert 'wall time (s)' in text


# ---------------------------------------------------------------------------
# Experiment runs
# ---------------------------------------------------------------------------

class TestRun:
    """End-to-end runs writing artifacts and manifest.json."""

    def test_coeff_dump(self, tmp_path):
        config = ExperimentConfig.from_dict(
            {'kind': 'coeff-dump', 'ivf': {'n': [1, 3]}}
        )
        result = run(config, out_dir=str(tmp_path), quiet=True)
        assert result.status == 'ok'
        assert result.artifacts[:3] == ['coeffs_n1.csv', 'coeffs_n3.csv',
                                        'coeff_identities.csv']
        rows = read_csv(tmp_path / 'coeffs_n1.csv')
        assert rows[0] == ['k', 'p_nk', 'exact']
        assert [r[0] for r in rows[1:]] == ['-1', '0', '1']
        assert rows[3][2] == '1/2'
        identities = read_csv(tmp_path / 'coeff_identities.csv')
        assert [r[0] for r in identities[1:]] == ['1', '3']
        assert float(identities[2][5]) < 1e-12
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['status'] == 'ok'
        assert manifest['kind'] == 'coeff-dump'
        assert manifest['config_sha256'] == config.digest()
        assert 'coeff_identities.csv' in manifest['artifacts']
        assert not list(tmp_path.glob('*.tmp'))

    def test_flow_error_artifacts(self, tmp_path):
        config = flow_error_config(ivf={'n': [1, 2]},
                                   params={'epsilons': [0.05, 0.1, 0.2]})
        run(config, out_dir=str(tmp_path), workers=2, quiet=True)
        grid_rows = read_csv(tmp_path / 'flow_error_n2.csv')
        assert grid_rows[0] == ['x1', 'x2', 'log10_err']
        assert len(grid_rows) == 26
        summary = read_csv(tmp_path / 'flow_error_summary.csv')
        worst = {int(r[0]): float(r[2]) for r in summary[1:]}
        assert worst[2] < worst[1]
        slopes = read_csv(tmp_path / 'flow_error_slopes.csv')
        assert float(slopes[1][1]) == pytest.approx(3.0, abs=0.6)
        assert float(slopes[2][1]) == pytest.approx(5.0, abs=0.8)

    def test_results_independent_of_workers(self, tmp_path):
        config = flow_error_config()
        single, multi = tmp_path / 'single', tmp_path / 'multi'
        run(config, out_dir=str(single), workers=1, quiet=True)
        run(config, out_dir=str(multi), workers=4, quiet=True)
        for name in ('flow_error_n2.csv', 'flow_error_summary.csv'):
            assert (single / name).read_bytes() == (multi / name).read_bytes()

    def test_estimate_tracks_measured_cost(self, tmp_path):
        config = flow_error_config()
        run(config, out_dir=str(tmp_path), quiet=True)
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        measured = manifest['counts']['map_applications']
        estimate = estimate_map_applications(config)
        assert 0.5 <= measured / estimate <= 2.0

    def test_iterate_with_escapes(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'kind': 'iterate',
            'map': {'map': 'standard', 'epsilon': 0.5,
                    'domain': {'action_radius': 1.5}},
            'params': {'seeds': [[0.2, 0.1], [1.5, 1.4]],
                       'num_iterates': 200, 'every': 50},
        })
        result = run(config, out_dir=str(tmp_path), quiet=True)
        rows = read_csv(tmp_path / 'orbits.csv')
        assert rows[0] == ['seed_id', 'k', 'x1', 'x2']
        first = [r for r in rows[1:] if r[0] == '0']
        assert [r[1] for r in first] == ['0', '50', '100', '150', '200']
        assert result.stats.stats['partial_seeds'] == 1

    def test_section_pipeline(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'kind': 'section',
            'map': {'map': 'standard', 'epsilon': 0.1},
            'ivf': {'n': 2},
            'section': {'type': 'coordinate', 'index': 1},
            'params': {'seeds': [[0.5, 0.1], [1.0, 0.2]],
                       'crossings_per_seed': 2, 'direction': -1},
        })
        run(config, out_dir=str(tmp_path), quiet=True)
        cloud = read_csv(tmp_path / 'section_cloud.csv')
        assert cloud[0][:5] == ['seed_id', 'k', 't_k', 'y1', 'y2']
        assert len(cloud) >= 3
        assert all(r[-1] == '-1' for r in cloud[1:])
        assert all(abs(float(r[4])) < 1e-10 for r in cloud[1:])
        seeds = read_csv(tmp_path / 'section_seeds.csv')
        assert [r[-1] for r in seeds[1:]] == ['complete', 'complete']

    def test_invariant_series_pipeline(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'kind': 'invariant-series',
            'map': {'map': 'standard', 'epsilon': 0.1},
            'ivf': {'n': 3},
            'params': {'x0': [0.5, 0.5], 'num_iterates': 40, 'every': 10,
                       'bins': 4},
        })
        run(config, out_dir=str(tmp_path), quiet=True)
        series = read_csv(tmp_path / 'invariant_series.csv')
        assert [r[0] for r in series[1:]] == ['0', '10', '20', '30', '40']
        histogram = read_csv(tmp_path / 'invariant_histogram.csv')
        assert sum(int(r[2]) for r in histogram[1:]) == 5
        summary = read_csv(tmp_path / 'invariant_summary.csv')
        assert summary[1][0] == '5'
        assert float(summary[1][4]) < 1e-5
        assert summary[0][-2:] == ['std', 'drift']
        assert float(summary[1][7]) <= float(summary[1][4])
        assert float(summary[1][8]) == pytest.approx(
            abs(float(summary[1][6]) - float(summary[1][5])), abs=1e-15)

    def test_periodic_field_pipeline(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'kind': 'periodic-field',
            'map': {'map': 'standard', 'epsilon': 0.5},
            'ivf': {'n': 5},
            'params': {'q': 2, 'guess': [3.1, 6.2]},
        })
        run(config, out_dir=str(tmp_path), quiet=True)
        rows = read_csv(tmp_path / 'periodic_field.csv')
        assert rows[0] == ['point_index', 'x1', 'x2', 'norm_Xqn', 'norm_Xn']
        assert len(rows) == 3
        for row in rows[1:]:
            assert float(row[3]) <= 1e-10
            assert float(row[4]) >= 1e-3
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['status'] == 'ok'

    def test_numerical_failure_leaves_manifest(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'kind': 'seed-levelset',
            'map': {'map': 'froeschle', 'epsilon': 0.2},
            'ivf': {'n': 1},
            'section': {'type': 'angle_difference'},
            'params': {'energy': 100.0, 'psi_values': [0.0], 'count': 2,
                       'j2_max': 1.0},
        })
        with pytest.raises(NumericalFailure):
            run(config, out_dir=str(tmp_path), quiet=True)
        assert 'No level-set seeds' in (tmp_path / 'failure.log').read_text()
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['status'] == 'failed'
        assert manifest['failure'].startswith('NumericalFailure')
        assert 'failure.log' in manifest['artifacts']

    def test_config_error_in_pipeline_leaves_manifest(self, tmp_path):
        config = flow_error_config(grid={'lower': [0.0, 0.0, 0.0],
                                         'upper': [1.0, 1.0, 1.0],
                                         'resolution': 2})
        with pytest.raises(ConfigError):
            run(config, out_dir=str(tmp_path), quiet=True)
        assert 'dimension 3' in (tmp_path / 'failure.log').read_text()
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['status'] == 'failed'
        assert manifest['failure'].startswith('ConfigError')

    def test_io_error_leaves_manifest(self, tmp_path, monkeypatch):
        config = flow_error_config()

        def broken(ctx):
            raise OSError('disk full')

        monkeypatch.setitem(PIPELINES, 'flow-error', broken)
        with pytest.raises(OSError):
            run(config, out_dir=str(tmp_path), quiet=True)
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['status'] == 'failed'
        assert manifest['failure'] == 'OSError: disk full'

    def test_restore_field_pipeline(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'kind': 'restore-field',
            'map': {'map': 'flow', 'epsilon': 0.1,
                    'params': {'field': 'pendulum', 'integ_tol': 1e-13}},
            'params': {'n_list': [1], 'epsilons': [0.2, 0.1, 0.05],
                       'samples': 10,
                       'box': {'lower': [-1.0, -1.0], 'upper': [1.0, 1.0]}},
        })
        run(config, out_dir=str(tmp_path), quiet=True)
        rows = read_csv(tmp_path / 'restore_field.csv')
        assert rows[0] == ['n', 'epsilon', 'max_error']
        assert [float(r[1]) for r in rows[1:]] == [0.2, 0.1, 0.05]
        errors = [float(r[2]) for r in rows[1:]]
        assert errors == sorted(errors, reverse=True)
        slopes = read_csv(tmp_path / 'restore_slopes.csv')
        assert float(slopes[1][1]) == pytest.approx(2.0, abs=0.4)

    def test_manifest_records_cost_estimate(self, tmp_path):
        config = flow_error_config()
        run(config, out_dir=str(tmp_path), quiet=True)
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['counts']['estimated_map_applications'] == \
            estimate_map_applications(config)

    def test_invariant_at_crossings(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'kind': 'invariant-series',
            'map': {'map': 'froeschle', 'epsilon': 0.2},
            'ivf': {'n': 4},
            'section': {'type': 'angle_difference', 'i': 0, 'j': 1},
            'params': {'x0': [3.0, 3.0, -1.043523, 1.385456],
                       'at_crossings': True, 'num_iterates': 2000,
                       'crossings_per_seed': 1000, 'every': 5, 'bins': 5},
        })
        run(config, out_dir=str(tmp_path), quiet=True)
        series = read_csv(tmp_path / 'invariant_series.csv')
        ks = [int(r[0]) for r in series[1:]]
        assert len(ks) >= 2
        assert ks == sorted(ks) and ks[-1] < 2000
        summary = read_csv(tmp_path / 'invariant_summary.csv')
        assert float(summary[1][4]) < 1e-2

    @pytest.mark.slow
    def test_shipped_orbit_invariant_has_no_drift(self, tmp_path):
        path = Path(__file__).parent.parent / 'experiments' / \
            'froeschle_orbit_invariant.json'
        config = ExperimentConfig.from_file(str(path))
        run(config, out_dir=str(tmp_path), quiet=True)
        header, row = read_csv(tmp_path / 'invariant_summary.csv')
        values = dict(zip(header, row))
        assert float(values['drift']) < 0.5 * float(values['std'])
