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
Experiment configuration: loading, hierarchical defaults and validation.

An experiment is described by one JSON (or YAML) document. Defaults for the
numerical settings are discovered pytest-style: every ivflow.yaml between the
experiment file's directory and the filesystem root is merged, root first,
and the experiment document is applied on top.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ivflow.adiabatic import PATHS
from ivflow.errors import ConfigError
from ivflow.integrator import IntegratorSettings, settings_problems
from ivflow.maps import MAP_KINDS, Domain, MapFamily, make_map


logger = logging.getLogger(__name__)


KINDS = (
    'iterate', 'flow-error', 'dh-scan', 'restore-field', 'section',
    'invariant-series', 'seed-levelset', 'coeff-dump', 'periodic-field',
)

# blocks each experiment kind cannot run without
REQUIRED_BLOCKS: dict[str, tuple[str, ...]] = {
    'iterate': ('map', 'params'),
    'flow-error': ('map', 'ivf', 'grid'),
    'dh-scan': ('map', 'grid', 'params'),
    'restore-field': ('map', 'params'),
    'section': ('map', 'ivf', 'section', 'params'),
    'invariant-series': ('map', 'ivf', 'params'),
    'seed-levelset': ('map', 'ivf', 'section', 'params'),
    'coeff-dump': ('ivf',),
    'periodic-field': ('map', 'ivf', 'params'),
}

# params each experiment kind cannot run without
REQUIRED_PARAMS: dict[str, tuple[str, ...]] = {
    'restore-field': ('epsilons',),
    'invariant-series': ('x0',),
    'periodic-field': ('q', 'guess'),
}

KNOWN_KEYS = {
    'kind', 'map', 'ivf', 'integrator', 'invariant', 'section', 'grid',
    'params', 'output', 'workers', 'seed', 'chunk_size', 'description',
}

# what an ivflow.yaml defaults file may provide
DEFAULT_KEYS = {'integrator', 'invariant', 'section', 'workers', 'seed'}

SECTION_TYPES = ('angle_difference', 'coordinate')

POSITIVE_INT_PARAMS = (
    'num_iterates', 'crossings_per_seed', 'max_iterates', 'count', 'q',
    'samples', 'every', 'bins',
)


def _deep_merge(base: dict[str, Any], top: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in top.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ConfigLoader:
    """Loads an experiment document and merges hierarchical defaults."""

    DEFAULTS_FILENAME = 'ivflow.yaml'

    def __init__(self, start_dir: str | None = None) -> None:
        self.start_dir = Path(start_dir or os.getcwd()).resolve()
        self.config_files: list[Path] = []

    def discover_configs(self) -> list[Path]:
        """ivflow.yaml files from start_dir up to the root, root first."""
        configs = []
        current = self.start_dir
        logger.debug(f'Starting defaults discovery from: {current}')
        while True:
            config_file = current / self.DEFAULTS_FILENAME
            if config_file.is_file():
                logger.debug(f'Found defaults file: {config_file}')
                configs.append(config_file)
            parent = current.parent
            if parent == current:
                break
            current = parent
        configs.reverse()
        return configs

    def load_config(self, config_file: Path) -> dict[str, Any]:
        """Parse one YAML/JSON document into a mapping.

        Raises ConfigError if the file is not a mapping or cannot be parsed.
        """
        try:
            with open(config_file, 'r') as f:
                if Path(config_file).suffix == '.json':
                    config = json.load(f)
                else:
                    config = yaml.safe_load(f)
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError([f'Failed to parse {config_file}: {e}'])

        if config is None:
            logger.warning(f'Config file is empty: {config_file}')
            return {}
        if not isinstance(config, dict):
            raise ConfigError([
                f'Invalid config format in {config_file}: expected a '
                f'mapping, got {type(config).__name__}'
            ])
        return config

    def validate_defaults(
        self, config: dict[str, Any], config_file: Path
    ) -> None:
        unknown = set(config) - DEFAULT_KEYS
        if unknown:
            raise ConfigError([
                f'{config_file}: defaults may not set '
                f'{", ".join(sorted(unknown))}'
            ])

    def merge_defaults(self) -> dict[str, Any]:
        self.config_files = self.discover_configs()
        merged: dict[str, Any] = {}
        for config_file in self.config_files:
            config = self.load_config(config_file)
            self.validate_defaults(config, config_file)
            merged = _deep_merge(merged, config)
        return merged

    def load(self, path: str) -> dict[str, Any]:
        """Experiment document at `path` on top of the discovered defaults."""
        document = self.load_config(Path(path))
        return _deep_merge(self.merge_defaults(), document)


def load_experiment(path: str) -> dict[str, Any]:
    loader = ConfigLoader(str(Path(path).resolve().parent))
    return loader.load(path)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_vectors(
    problems: list[str], where: str, value: Any, dim: int | None = None
) -> None:
    if not isinstance(value, list) or not value:
        problems.append(f'{where} must be a non-empty list')
        return
    rows = value if isinstance(value[0], list) else [value]
    for row in rows:
        if not all(_is_number(v) for v in row):
            problems.append(f'{where} must contain numbers only')
            return
        if dim is not None and len(row) != dim:
            problems.append(f'{where} entries must have {dim} coordinates')
            return


def _map_dim(block: dict[str, Any]) -> int | None:
    kind = block.get('map')
    if kind == 'standard':
        return 2
    if kind == 'froeschle':
        return 4
    if kind == 'flow':
        field = (block.get('params') or {}).get('field', 'pendulum')
        return 1 if field == 'linear' else 2
    return None


def _validate_map(block: Any, problems: list[str]) -> None:
    if not isinstance(block, dict):
        problems.append('map must be a mapping')
        return
    if block.get('map') not in MAP_KINDS:
        problems.append(
            f'map.map must be one of {", ".join(MAP_KINDS)}, '
            f'got {block.get("map")!r}'
        )
    if 'epsilon' not in block:
        problems.append('map.epsilon is required')
    elif not _is_number(block['epsilon']):
        problems.append('map.epsilon must be a number')
    power = block.get('power', 1)
    if not _is_int(power) or power < 1:
        problems.append('map.power must be a positive integer')
    params = block.get('params', {})
    if not isinstance(params, dict):
        problems.append('map.params must be a mapping')
    domain = block.get('domain')
    if domain is not None:
        if not isinstance(domain, dict):
            problems.append('map.domain must be a mapping')
        else:
            radius = domain.get('action_radius')
            if radius is not None and (not _is_number(radius) or radius <= 0):
                problems.append('map.domain.action_radius must be positive')
            dim = _map_dim(block)
            for key in ('lower', 'upper'):
                if domain.get(key) is not None:
                    _check_vectors(problems, f'map.domain.{key}',
                                   domain[key], dim)


def _validate_section(block: Any, problems: list[str]) -> None:
    if not isinstance(block, dict):
        problems.append('section must be a mapping')
        return
    kind = block.get('type', 'angle_difference')
    if kind not in SECTION_TYPES:
        problems.append(
            f'section.type must be one of {", ".join(SECTION_TYPES)}'
        )
    if kind == 'coordinate' and not _is_int(block.get('index')):
        problems.append('section.index is required for coordinate sections')
    for key in ('newton_tol', 'transversality_floor'):
        if key in block and (not _is_number(block[key]) or block[key] < 0):
            problems.append(f'section.{key} must be a non-negative number')
    if 'newton_tol' in block and _is_number(block['newton_tol']) \
            and block['newton_tol'] == 0:
        problems.append('section.newton_tol must be positive')
    if 'newton_max_iter' in block and (
            not _is_int(block['newton_max_iter'])
            or block['newton_max_iter'] < 1):
        problems.append('section.newton_max_iter must be a positive integer')


def _validate_invariant(block: Any, problems: list[str]) -> None:
    if not isinstance(block, dict):
        problems.append('invariant must be a mapping')
        return
    if 'quad_tol' in block and (not _is_number(block['quad_tol'])
                                or block['quad_tol'] <= 0):
        problems.append('invariant.quad_tol must be positive')
    if 'max_romberg_levels' in block and (
            not _is_int(block['max_romberg_levels'])
            or block['max_romberg_levels'] < 2):
        problems.append('invariant.max_romberg_levels must be an integer >= 2')
    if block.get('path', 'straight') not in PATHS:
        problems.append(f'invariant.path must be one of {", ".join(PATHS)}')
    if 'base_point' in block:
        _check_vectors(problems, 'invariant.base_point', block['base_point'])


def _validate_grid(block: Any, problems: list[str]) -> None:
    if not isinstance(block, dict):
        problems.append('grid must be a mapping')
        return
    missing = [k for k in ('lower', 'upper', 'resolution') if k not in block]
    for key in missing:
        problems.append(f'grid.{key} is required')
    if missing:
        return
    lower, upper, resolution = (block['lower'], block['upper'],
                                block['resolution'])
    _check_vectors(problems, 'grid.lower', lower)
    _check_vectors(problems, 'grid.upper', upper)
    if isinstance(lower, list) and isinstance(upper, list) \
            and len(lower) != len(upper):
        problems.append('grid.lower and grid.upper differ in length')
    counts = resolution if isinstance(resolution, list) else [resolution]
    if not all(_is_int(r) and r >= 1 for r in counts):
        problems.append('grid.resolution must hold positive integers')


def _validate_orders(values: Any, where: str, problems: list[str]) -> None:
    orders = values if isinstance(values, list) else [values]
    if not orders or not all(_is_int(n) and 1 <= n <= 64 for n in orders):
        problems.append(f'{where} must be an integer order in [1, 64]')


def validate(config: Any) -> list[str]:
    """Schema and cross-field checks; returns the problems, never raises."""
    if not isinstance(config, dict):
        return ['configuration must be a mapping']
    problems: list[str] = []

    unknown = set(config) - KNOWN_KEYS
    if unknown:
        problems.append(f'unknown keys: {", ".join(sorted(unknown))}')

    kind = config.get('kind')
    if kind not in KINDS:
        problems.append(
            f'kind must be one of {", ".join(KINDS)}, got {kind!r}'
        )
        return problems

    for block in REQUIRED_BLOCKS[kind]:
        if block not in config:
            problems.append(f'missing {block} block required by {kind}')
    params = config.get('params', {})
    if not isinstance(params, dict):
        problems.append('params must be a mapping')
        params = {}
    for key in REQUIRED_PARAMS.get(kind, ()):
        if key not in params:
            problems.append(f'params.{key} is required by {kind}')
    if kind == 'iterate' and params.get('mode', 'map') not in ('map', 'flow'):
        problems.append('params.mode must be map or flow')
    if kind == 'iterate' and params.get('mode') == 'flow' \
            and 'ivf' not in config:
        problems.append('missing ivf block required by iterate in flow mode')

    if 'map' in config:
        _validate_map(config['map'], problems)
    if 'ivf' in config:
        ivf = config['ivf']
        if not isinstance(ivf, dict) or 'n' not in ivf:
            problems.append('ivf.n is required')
        else:
            _validate_orders(ivf['n'], 'ivf.n', problems)
    if 'integrator' in config:
        if isinstance(config['integrator'], dict):
            problems.extend(settings_problems(config['integrator']))
        else:
            problems.append('integrator must be a mapping')
    if 'invariant' in config:
        _validate_invariant(config['invariant'], problems)
    if 'section' in config:
        _validate_section(config['section'], problems)
    if 'grid' in config:
        _validate_grid(config['grid'], problems)

    for key in ('n_list',):
        if key in params:
            _validate_orders(params[key], f'params.{key}', problems)
    for key in ('epsilons',):
        if key in params:
            values = params[key]
            if not isinstance(values, list) or not values \
                    or not all(_is_number(v) for v in values):
                problems.append(f'params.{key} must be a list of numbers')
    for key in POSITIVE_INT_PARAMS:
        if key in params and (not _is_int(params[key]) or params[key] < 1):
            problems.append(f'params.{key} must be a positive integer')

    workers = config.get('workers', 0)
    if not _is_int(workers) or workers < 0:
        problems.append('workers must be a non-negative integer')
    chunk = config.get('chunk_size', 64)
    if not _is_int(chunk) or chunk < 1:
        problems.append('chunk_size must be a positive integer')
    if 'seed' in config and not _is_int(config['seed']):
        problems.append('seed must be an integer')
    if 'output' in config and not isinstance(config['output'], str):
        problems.append('output must be a directory path')
    return problems


class ExperimentConfig:
    """A validated experiment document with typed accessors."""

    def __init__(self, raw: dict[str, Any], source: str | None = None) -> None:
        self.raw: dict[str, Any] = raw
        self.source: str | None = source
        self.kind: str = raw['kind']
        self.params: dict[str, Any] = dict(raw.get('params') or {})
        self.workers: int = int(raw.get('workers', 0))
        self.chunk_size: int = int(raw.get('chunk_size', 64))
        self.seed: int = int(raw.get('seed', 0))
        self.output: str | None = raw.get('output')

    @classmethod
    def from_dict(
        cls, raw: dict[str, Any], source: str | None = None
    ) -> ExperimentConfig:
        problems = validate(raw)
        if problems:
            raise ConfigError(problems)
        return cls(raw, source)

    @classmethod
    def from_file(cls, path: str) -> ExperimentConfig:
        return cls.from_dict(load_experiment(path), source=path)

    def digest(self) -> str:
        """SHA-256 over the canonical JSON form of the merged document."""
        canonical = json.dumps(self.raw, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @property
    def order(self) -> int:
        n = self.raw['ivf']['n']
        return n[0] if isinstance(n, list) else n

    @property
    def orders(self) -> list[int]:
        if 'n_list' in self.params:
            return list(self.params['n_list'])
        n = self.raw['ivf']['n']
        return list(n) if isinstance(n, list) else [n]

    @property
    def epsilon(self) -> float:
        return float(self.raw['map']['epsilon'])

    def domain(self) -> Domain:
        block = self.raw['map'].get('domain') or {}
        return Domain(
            lower=tuple(block['lower']) if block.get('lower') else None,
            upper=tuple(block['upper']) if block.get('upper') else None,
            action_radius=block.get('action_radius'),
        )

    def build_map(self, epsilon: float | None = None) -> MapFamily:
        block = self.raw['map']
        return make_map(
            block['map'], self.epsilon if epsilon is None else epsilon,
            params=block.get('params'), power=int(block.get('power', 1)),
            domain=self.domain(),
        )

    def integrator_settings(self) -> IntegratorSettings:
        return IntegratorSettings.from_dict(self.raw.get('integrator'))

    def invariant_options(self) -> dict[str, Any]:
        block = dict(self.raw.get('invariant') or {})
        if 'base_point' in block:
            block['base_point'] = np.asarray(block['base_point'], dtype=float)
        return block

    def section_options(self) -> dict[str, Any]:
        return dict(self.raw.get('section') or {})
