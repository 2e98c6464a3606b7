#!/usr/bin/env python3

#
# Copyright (C) 2026 The ivflow authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#

"""
Experiment pipelines, one per experiment kind.

Every pipeline reads its inputs from an ExperimentContext and writes CSV
artifacts through it. Floats are written with repr so that a rerun of the
same configuration reproduces the files byte for byte.
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import IO, Any, Callable, Iterable, Sequence

import numpy as np

from ivflow import coeffs
from ivflow.adiabatic import (
    InvariantSpec, delta_h_scan, invariant, invariant_batch,
    invariant_histogram, invariant_series, optimal_order,
)
from ivflow.config import ExperimentConfig
from ivflow.errors import ConfigError, NumericalFailure
from ivflow.flow import (
    ChunkMapper, Grid, estimate_cost, field_error, flow_orbit, flowmap_errors,
    fit_slope, map_points, order_ladder,
)
from ivflow.integrator import IntegratorSettings, nominal_steps
from ivflow.ivf import IvfField
from ivflow.maps import MapFamily, find_periodic_orbit, iterate_power, orbit
from ivflow.section import (
    SectionSpec, angle_difference_section, coordinate_section,
    section_cloud, seed_levelset,
)
from ivflow.stats import RunStats


logger = logging.getLogger(__name__)

# angles psi1 = psi2 at which level-set curves start
DEFAULT_PSI = (0.0, 1.0, 2.0, 3.0)


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def coord_header(dim: int, prefix: str = 'x') -> list[str]:
    return [f'{prefix}{i + 1}' for i in range(dim)]


class ExperimentContext:
    """What a pipeline sees: configuration, pool, output directory, stats."""

    def __init__(
        self, config: ExperimentConfig, pool: ChunkMapper, out_dir: Path,
        stats: RunStats
    ) -> None:
        self.config: ExperimentConfig = config
        self.params: dict[str, Any] = config.params
        self.pool: ChunkMapper = pool
        self.out_dir: Path = Path(out_dir)
        self.stats: RunStats = stats
        self.artifacts: list[str] = []
        self.rng = np.random.default_rng(config.seed)

    def _atomic(self, name: str, write: Callable[[IO[str]], None]) -> Path:
        target = self.out_dir / name
        fd, tmp = tempfile.mkstemp(
            dir=self.out_dir, prefix=f'.{name}.', suffix='.tmp'
        )
        try:
            with os.fdopen(fd, 'w', newline='') as f:
                write(f)
            os.replace(tmp, target)
        except BaseException:
            with contextlib.suppress(OSError):
                os.unlink(tmp)
            raise
        if name not in self.artifacts:
            self.artifacts.append(name)
        logger.debug(f'Wrote {target}')
        return target

    def write_csv(
        self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]
    ) -> Path:
        def write(f: IO[str]) -> None:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return self._atomic(name, write)

    def write_json(self, name: str, data: Any) -> Path:
        def write(f: IO[str]) -> None:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write('\n')
        return self._atomic(name, write)

    def write_text(self, name: str, text: str) -> Path:
        return self._atomic(name, lambda f: f.write(text))

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if k not in self.params]
        if missing:
            kind = self.config.kind
            raise ConfigError(
                [f'params.{k} is required by {kind}' for k in missing]
            )


def build_section(options: dict[str, Any], dim: int) -> SectionSpec:
    options = dict(options)
    kind = options.pop('type', 'angle_difference')
    settings = {key: options[key] for key in
                ('newton_tol', 'newton_max_iter', 'transversality_floor')
                if key in options}
    if kind == 'coordinate':
        return coordinate_section(
            int(options['index']), float(options.get('value', 0.0)), dim,
            angle=bool(options.get('angle', False)), **settings
        )
    return angle_difference_section(
        int(options.get('i', 0)), int(options.get('j', 1)), dim, **settings
    )


def invariant_spec(ctx: ExperimentContext, field: IvfField) -> InvariantSpec:
    return InvariantSpec.for_field(field, **ctx.config.invariant_options())


def seed_points(ctx: ExperimentContext, dim: int) -> np.ndarray:
    """Seeds from params.seeds, params.seed_grid or params.random_seeds."""
    params = ctx.params
    if 'seeds' in params:
        seeds = np.atleast_2d(np.asarray(params['seeds'], dtype=float))
    elif 'seed_grid' in params:
        seeds = Grid.from_dict(params['seed_grid']).points()
    elif 'random_seeds' in params:
        block = params['random_seeds']
        lower = np.asarray(block['lower'], dtype=float)
        upper = np.asarray(block['upper'], dtype=float)
        seeds = ctx.rng.uniform(lower, upper,
                                size=(int(block['count']), len(lower)))
    else:
        raise ConfigError([
            f'{ctx.config.kind} needs params.seeds, params.seed_grid or '
            'params.random_seeds'
        ])
    if seeds.shape[-1] != dim:
        raise ConfigError([
            f'seeds have dimension {seeds.shape[-1]}, the map has {dim}'
        ])
    return seeds


def _map_orbits(family: MapFamily, num: int, block: np.ndarray) -> np.ndarray:
    out = np.full((len(block), num + 1, family.dim), np.nan)
    state = family.wrap(block)
    bounded = family.domain.bounded
    alive = family.contains(state) if bounded else np.ones(len(block), bool)
    out[alive, 0] = state[alive]
    for k in range(1, num + 1):
        if not alive.any():
            break
        state[alive] = family.forward(state[alive])
        if bounded:
            alive &= family.contains(state)
        out[alive, k] = state[alive]
    return out


def _flow_orbits(
    field: IvfField, settings: IntegratorSettings, num: int,
    block: np.ndarray
) -> np.ndarray:
    try:
        return np.swapaxes(flow_orbit(field, block, num, settings), 0, 1)
    except NumericalFailure as exc:
        if len(block) == 1:
            logger.warning(f'Flow orbit from {block[0]} failed: {exc}')
            return np.full((1, num + 1, block.shape[-1]), np.nan)
    return np.concatenate([
        _flow_orbits(field, settings, num, block[i:i + 1])
        for i in range(len(block))
    ])


def run_iterate(ctx: ExperimentContext) -> None:
    family = ctx.config.build_map()
    seeds = seed_points(ctx, family.dim)
    num = int(ctx.params.get('num_iterates', 1000))
    every = int(ctx.params.get('every', 1))
    mode = ctx.params.get('mode', 'map')

    if mode == 'flow':
        field = IvfField(family, ctx.config.order)
        settings = ctx.config.integrator_settings()
        orbits = ctx.pool.map_array(
            lambda block: _flow_orbits(field, settings, num, block), seeds
        )
        ctx.stats.add_field(field)
    else:
        orbits = ctx.pool.map_array(
            lambda block: _map_orbits(family, num, block), seeds
        )
        ctx.stats.add_stats(map_applications=len(seeds) * num * family.power)

    kept = range(0, num + 1, every)
    finite = np.all(np.isfinite(orbits), axis=-1)
    ctx.write_csv(
        'orbits.csv', ['seed_id', 'k'] + coord_header(family.dim),
        ([s, k, *orbits[s, k]] for s in range(len(seeds)) for k in kept
         if finite[s, k]),
    )
    partial = int(np.count_nonzero(~finite.all(axis=1)))
    if partial:
        logger.warning(f'{partial} of {len(seeds)} orbits stopped early')
    ctx.stats.add_stats(points=len(seeds), partial_seeds=partial)


def _max_error(log_err: np.ndarray) -> float:
    if np.all(np.isnan(log_err)):
        return float('nan')
    return float(np.nanmax(log_err))


def _slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    try:
        return fit_slope(xs, ys)
    except ValueError as exc:
        logger.warning(f'No slope: {exc}')
        return float('nan')


def run_flow_error(ctx: ExperimentContext) -> None:
    family = ctx.config.build_map()
    grid = Grid.from_dict(ctx.config.raw['grid'])
    if grid.dim != family.dim:
        raise ConfigError([
            f'grid has dimension {grid.dim}, the map has {family.dim}'
        ])
    points = grid.points()
    settings = ctx.config.integrator_settings()

    summary = []
    for n in ctx.config.orders:
        field = IvfField(family, n)
        log_err = flowmap_errors(field, points, settings, ctx.pool)
        ctx.write_csv(
            f'flow_error_n{n}.csv', coord_header(family.dim) + ['log10_err'],
            ([*p, e] for p, e in zip(points, log_err)),
        )
        failures = int(np.count_nonzero(np.isnan(log_err)))
        ctx.stats.add_stats(points=len(points), failures=failures)
        ctx.stats.add_field(field)
        summary.append((n, family.epsilon, _max_error(log_err), failures))
    ctx.write_csv(
        'flow_error_summary.csv',
        ['n', 'epsilon', 'max_log10_err', 'failures'], summary,
    )

    if 'epsilons' not in ctx.params:
        return
    # one-step error against eps at fixed n
    ladder, slopes = [], []
    for n in ctx.config.orders:
        errors = []
        for eps in ctx.params['epsilons']:
            field = IvfField(ctx.config.build_map(eps), n)
            worst = _max_error(
                flowmap_errors(field, points, settings, ctx.pool)
            )
            ctx.stats.add_field(field)
            errors.append(10.0 ** worst)
            ladder.append((n, float(eps), errors[-1]))
        slopes.append((n, _slope(ctx.params['epsilons'], errors)))
    ctx.write_csv('flow_error_order.csv', ['n', 'epsilon', 'max_err'], ladder)
    ctx.write_csv('flow_error_slopes.csv', ['n', 'slope'], slopes)


def run_dh_scan(ctx: ExperimentContext) -> None:
    points = Grid.from_dict(ctx.config.raw['grid']).points()
    options = {key: value for key, value in
               ctx.config.invariant_options().items()
               if key in ('quad_tol', 'max_romberg_levels', 'base_point',
                          'path')}
    n_list = ctx.config.orders
    epsilons = ctx.params.get('epsilons', [ctx.config.epsilon])

    rows = delta_h_scan(
        ctx.config.build_map, n_list, epsilons, points, pool=ctx.pool,
        progress=ctx.stats.add_field, **options
    )
    ctx.write_csv(
        'dh_scan.csv', ['n', 'epsilon', 'max_delta_h', 'failures'],
        ((r.n, r.epsilon, r.max_delta_h, r.failures) for r in rows),
    )
    best = optimal_order(rows)
    ctx.write_csv('dh_optimal.csv', ['epsilon', 'n'],
                  sorted(best.items()))
    if len(epsilons) > 1:
        ctx.write_csv('dh_slopes.csv', ['n', 'slope'], [
            (n, _slope([r.epsilon for r in rows if r.n == n],
                       [r.max_delta_h for r in rows if r.n == n]))
            for n in n_list
        ])
    ctx.stats.add_stats(
        points=len(points) * len(rows),
        failures=sum(r.failures for r in rows),
    )


def run_restore_field(ctx: ExperimentContext) -> None:
    ctx.require('epsilons')
    family = ctx.config.build_map()
    if family.limit_field is None:
        raise ConfigError([
            f'restore-field needs a map with a limit field, {family.name} '
            'has none'
        ])
    box = ctx.params.get('box') or ctx.config.raw.get('grid')
    if box is None:
        raise ConfigError(['restore-field needs params.box or a grid block'])
    lower = np.asarray(box['lower'], dtype=float)
    upper = np.asarray(box['upper'], dtype=float)
    samples = int(ctx.params.get('samples', 100))
    points = ctx.rng.uniform(lower, upper, size=(samples, family.dim))

    rows, slopes = [], []
    epsilons = [float(eps) for eps in ctx.params['epsilons']]

    def measure(fam: MapFamily, n: int) -> float:
        error = field_error(fam, n, family.limit_field, points)
        ctx.stats.add_stats(field_evals=samples,
                            map_applications=samples * 2 * n * fam.power)
        return error

    for n in ctx.config.orders:
        errors, slope = order_ladder(ctx.config.build_map, n, epsilons,
                                     measure)
        rows.extend((n, eps, err) for eps, err in zip(epsilons, errors))
        slopes.append((n, slope))
        logger.info(f'restore-field n={n}: slope {slope:.3f}')
    ctx.write_csv('restore_field.csv', ['n', 'epsilon', 'max_error'], rows)
    ctx.write_csv('restore_slopes.csv', ['n', 'slope'], slopes)
    ctx.stats.add_stats(points=samples * len(rows))


def levelset_seeds(
    ctx: ExperimentContext, field: IvfField, section: SectionSpec,
    block: dict[str, Any]
) -> tuple[np.ndarray, InvariantSpec, float]:
    """Seeds on the section and on {h_n = E}; E given or taken at a point."""
    spec = invariant_spec(ctx, field)
    if 'energy' in block:
        energy = float(block['energy'])
    elif 'seed_point' in block:
        energy = invariant(spec, np.asarray(block['seed_point'], dtype=float))
        logger.info(f'Level h_n = {energy!r} taken at {block["seed_point"]}')
    else:
        raise ConfigError(['level-set seeding needs energy or seed_point'])
    psi = [float(v) for v in block.get('psi_values', DEFAULT_PSI)]
    seeds = seed_levelset(
        spec, section, energy, psi, int(block.get('count', 10)),
        j2_max=float(block.get('j2_max', 2 * np.pi)),
    )
    if not seeds:
        raise NumericalFailure(f'No level-set seeds found at h = {energy!r}')
    return np.array(seeds), spec, energy


def run_section(ctx: ExperimentContext) -> None:
    family = ctx.config.build_map()
    field = IvfField(family, ctx.config.order)
    section = build_section(ctx.config.section_options(), family.dim)
    settings = ctx.config.integrator_settings()
    if 'levelset' in ctx.params:
        seeds, _, _ = levelset_seeds(ctx, field, section,
                                     ctx.params['levelset'])
    else:
        seeds = seed_points(ctx, family.dim)

    crossings = int(ctx.params.get('crossings_per_seed', 100))
    max_iterates = ctx.params.get('max_iterates')
    cloud = section_cloud(
        family, field, section, seeds, crossings, settings,
        max_iterates=None if max_iterates is None else int(max_iterates),
        pool=ctx.pool,
    )
    records = cloud.records
    direction = ctx.params.get('direction')
    if direction is not None:
        records = [r for r in records if r.direction == int(direction)]

    ctx.write_csv(
        'section_cloud.csv',
        ['seed_id', 'k', 't_k'] + coord_header(family.dim, 'y')
        + ['psi', 'phi', 'residual', 'direction'],
        ([r.seed_id, r.k, r.t_k, *r.y_k, r.psi, r.phi, r.residual,
          r.direction] for r in records),
    )
    ctx.write_csv(
        'section_seeds.csv', ['seed_id'] + coord_header(family.dim)
        + ['flag'],
        ([i, *seed, flag] for i, (seed, flag)
         in enumerate(zip(seeds, cloud.flags))),
    )
    ctx.stats.add_field(field)
    ctx.stats.add_stats(
        points=len(seeds), crossings=len(records),
        partial_seeds=len(seeds) - cloud.count('complete'),
    )


def run_seed_levelset(ctx: ExperimentContext) -> None:
    family = ctx.config.build_map()
    field = IvfField(family, ctx.config.order)
    section = build_section(ctx.config.section_options(), family.dim)
    seeds, spec, energy = levelset_seeds(ctx, field, section, ctx.params)
    values = invariant_batch(spec, seeds)
    ctx.write_csv(
        'seeds.csv', ['seed_id'] + coord_header(family.dim) + ['h_n'],
        ([i, *seed, h] for i, (seed, h) in enumerate(zip(seeds, values))),
    )
    worst = float(np.nanmax(np.abs(values - energy)))
    logger.info(f'{len(seeds)} seeds, max |h_n - E| = {worst:.2e}')
    ctx.stats.add_field(field)
    ctx.stats.add_stats(points=len(seeds))


def run_invariant_series(ctx: ExperimentContext) -> None:
    ctx.require('x0')
    family = ctx.config.build_map()
    field = IvfField(family, ctx.config.order)
    spec = invariant_spec(ctx, field)
    x0 = np.asarray(ctx.params['x0'], dtype=float)
    every = int(ctx.params.get('every', 1))

    if ctx.params.get('at_crossings'):
        # h_n sampled at projected section crossings of one orbit
        section = build_section(ctx.config.section_options(), family.dim)
        limit = ctx.params.get('num_iterates')
        cloud = section_cloud(
            family, field, section, x0[None],
            int(ctx.params.get('crossings_per_seed', 1000)),
            ctx.config.integrator_settings(),
            max_iterates=None if limit is None else int(limit),
            pool=ctx.pool,
        )
        records = cloud.records[::every]
        indices = np.array([r.k for r in records], dtype=int)
        values = map_points(
            lambda block: invariant_batch(spec, block),
            cloud.coords[::every].reshape(-1, family.dim), ctx.pool
        )
        ctx.stats.add_stats(crossings=len(cloud.records))
    else:
        indices, values = invariant_series(
            spec, x0, int(ctx.params.get('num_iterates', 1000)), every,
            ctx.pool
        )

    ctx.write_csv('invariant_series.csv', ['iterate_index', 'h_n'],
                  zip(indices, values))
    counts, edges = invariant_histogram(values,
                                        int(ctx.params.get('bins', 50)))
    ctx.write_csv('invariant_histogram.csv',
                  ['bin_lower', 'bin_upper', 'count'],
                  zip(edges[:-1], edges[1:], counts))

    finite = values[np.isfinite(values)]
    failures = len(values) - len(finite)
    if len(finite):
        half = max(1, len(finite) // 2)
        late = finite[half:] if len(finite) > half else finite
        std = float(finite.std())
        drift = abs(float(late.mean()) - float(finite[:half].mean()))
        if std > 0 and drift >= 0.5 * std:
            logger.warning(f'h_n drifts by {drift:.3e} between the halves '
                           f'of the series (std {std:.3e})')
        ctx.write_csv(
            'invariant_summary.csv',
            ['samples', 'failures', 'min', 'max', 'spread',
             'mean_first_half', 'mean_second_half', 'std', 'drift'],
            [(len(values), failures, finite.min(), finite.max(),
              finite.max() - finite.min(), finite[:half].mean(),
              late.mean(), std, drift)],
        )
    ctx.stats.add_field(field)
    ctx.stats.add_stats(points=len(values), failures=failures)


def run_coeff_dump(ctx: ExperimentContext) -> None:
    identities = []
    for n in ctx.config.orders:
        table = coeffs.coeff_table(n)
        ctx.write_csv(f'coeffs_n{n}.csv', coeffs.CSV_HEADER,
                      coeffs.csv_rows(table))
        defect = max(
            abs(coeffs.moment_sum(table, j) - (j == 1))
            for j in range(2 * n + 1)
        )
        identities.append((
            n, coeffs.abs_sum(table), coeffs.harmonic(n) / 2,
            coeffs.signed_sum(table), coeffs.harmonic(2 * n)
            - coeffs.harmonic(n), defect,
        ))
    ctx.write_csv(
        'coeff_identities.csv',
        ['n', 'abs_sum', 'half_harmonic', 'signed_sum',
         'harmonic_difference', 'max_moment_defect'],
        identities,
    )


def run_periodic_field(ctx: ExperimentContext) -> None:
    ctx.require('q', 'guess')
    family = ctx.config.build_map()
    q = int(ctx.params['q'])
    start = find_periodic_orbit(family, q, ctx.params['guess'])
    points = orbit(family, start, 0, q - 1)
    n = ctx.config.order
    field = IvfField(family, n)
    power_field = IvfField(iterate_power(family, q), n)
    norm_n = np.linalg.norm(field(points), axis=-1)
    norm_qn = np.linalg.norm(power_field(points), axis=-1)
    ctx.write_csv(
        'periodic_field.csv',
        ['point_index'] + coord_header(family.dim)
        + ['norm_Xqn', 'norm_Xn'],
        ([i, *p, a, b] for i, (p, a, b)
         in enumerate(zip(points, norm_qn, norm_n))),
    )
    logger.info(f'{q}-periodic orbit: max |X_qn| {norm_qn.max():.2e}, '
                f'min |X_n| {norm_n.min():.2e}')
    ctx.stats.add_field(field)
    ctx.stats.add_field(power_field)
    ctx.stats.add_stats(points=q)


PIPELINES: dict[str, Callable[[ExperimentContext], None]] = {
    'iterate': run_iterate,
    'flow-error': run_flow_error,
    'dh-scan': run_dh_scan,
    'restore-field': run_restore_field,
    'section': run_section,
    'invariant-series': run_invariant_series,
    'seed-levelset': run_seed_levelset,
    'coeff-dump': run_coeff_dump,
    'periodic-field': run_periodic_field,
}


def run_experiment(ctx: ExperimentContext) -> None:
    kind = ctx.config.kind
    logger.info(f'Running {kind} experiment')
    PIPELINES[kind](ctx)


# field evaluations of one Romberg run that stops after five refinements
ROMBERG_EVALS = 8 * 2 ** 5 + 1


def _seed_count(params: dict[str, Any]) -> int:
    if 'seeds' in params:
        return len(params['seeds'])
    if 'seed_grid' in params:
        return Grid.from_dict(params['seed_grid']).size
    if 'random_seeds' in params:
        return int(params['random_seeds']['count'])
    return 1


def estimate_map_applications(config: ExperimentConfig) -> int:
    """Rough number of base-map applications a run performs."""
    kind, params = config.kind, config.params
    if kind == 'coeff-dump':
        return 0
    power = int(config.raw['map'].get('power', 1))
    settings = config.integrator_settings()
    steps = nominal_steps(settings, config.epsilon * power)
    orders = config.orders if 'ivf' in config.raw or 'n_list' in params \
        else [1]
    epsilons = params.get('epsilons', [config.epsilon])

    if kind == 'iterate':
        seeds = _seed_count(params)
        num = int(params.get('num_iterates', 1000))
        if params.get('mode', 'map') == 'flow':
            return estimate_cost(config.order, seeds, steps * num, power)
        return seeds * num * power
    if kind == 'flow-error':
        size = Grid.from_dict(config.raw['grid']).size
        total = sum(estimate_cost(n, size, steps, power) for n in orders)
        if 'epsilons' in params:
            total += sum(
                estimate_cost(n, size, nominal_steps(settings, eps * power),
                              power)
                for n in orders for eps in epsilons
            )
        return total
    if kind == 'dh-scan':
        size = Grid.from_dict(config.raw['grid']).size
        return sum(2 * size * ROMBERG_EVALS * 2 * n * power
                   for n in orders for _ in epsilons)
    if kind == 'restore-field':
        samples = int(params.get('samples', 100))
        return sum(samples * 2 * n * power for n in orders for _ in epsilons)
    if kind == 'section':
        crossings = _seed_count(params) * int(
            params.get('crossings_per_seed', 100))
        # a handful of Newton corrections per crossing
        return estimate_cost(config.order, crossings, 4 * steps, power)
    if kind == 'invariant-series':
        samples = int(params.get('num_iterates', 1000)) \
            // int(params.get('every', 1)) + 1
        return samples * ROMBERG_EVALS * 2 * config.order * power
    if kind == 'seed-levelset':
        count = int(params.get('count', 10)) * len(
            params.get('psi_values', DEFAULT_PSI))
        return count * ROMBERG_EVALS * 2 * config.order * power
    q = int(params.get('q', 1))
    return (q + 1) * 2 * config.order * power * q
