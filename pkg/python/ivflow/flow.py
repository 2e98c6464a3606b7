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
Trajectories of interpolating vector fields and map-versus-flow error grids.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from ivflow.errors import NumericalFailure
from ivflow.integrator import STAGES, IntegratorSettings, integrate
from ivflow.ivf import IvfField
from ivflow.maps import MapFamily


logger = logging.getLogger(__name__)


class ChunkMapper(Protocol):
    def map_array(
        self, func: Callable[[np.ndarray], np.ndarray], items: np.ndarray
    ) -> np.ndarray: ...


def map_points(
    func: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
    pool: ChunkMapper | None = None
) -> np.ndarray:
    if pool is None:
        return func(points)
    return pool.map_array(func, points)


def advance(
    field: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
    t: float | np.ndarray, settings: IntegratorSettings
) -> np.ndarray:
    """Phi^t of the field applied to x (lifted coordinates, not reduced)."""
    return integrate(field, x, t, settings)


def flow_orbit(
    field: IvfField, x0: np.ndarray, num_steps: int,
    settings: IntegratorSettings, step: float | None = None
) -> np.ndarray:
    """x, Phi^h(x), Phi^2h(x), ... with h the field's natural step.

    Angles are reduced after every step; shape (num_steps+1,) + x0.shape.
    """
    h = field.step if step is None else step
    state = field.family.wrap(x0)
    states = [state]
    for _ in range(num_steps):
        state = field.family.wrap(advance(field, state, h, settings))
        states.append(state)
    return np.stack(states)


@dataclasses.dataclass(frozen=True)
class Grid:
    """Axis-aligned box sampled uniformly, endpoints included."""
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self) -> None:
        if not len(self.lower) == len(self.upper) == len(self.resolution):
            raise ValueError('Grid bounds and resolution differ in length')
        if any(r < 1 for r in self.resolution):
            raise ValueError('Grid resolution must be positive')

    @classmethod
    def from_dict(cls, block: dict[str, Any]) -> Grid:
        lower = tuple(float(v) for v in block['lower'])
        resolution = block['resolution']
        if isinstance(resolution, int):
            resolution = [resolution] * len(lower)
        return cls(lower, tuple(float(v) for v in block['upper']),
                   tuple(int(r) for r in resolution))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, r) if r > 1 else np.array([lo])
                for lo, hi, r in zip(self.lower, self.upper, self.resolution)]

    def points(self) -> np.ndarray:
        """Row-major: the last coordinate varies fastest."""
        mesh = np.meshgrid(*self.axes(), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _error_chunk(
    field: IvfField, settings: IntegratorSettings, points: np.ndarray
) -> np.ndarray:
    family = field.family
    try:
        flowed = advance(field, points, field.step, settings)
        mapped = family.lifted_forward(points)
        return np.linalg.norm(flowed - mapped, axis=-1)
    except NumericalFailure:
        if len(points) == 1:
            return np.array([np.nan])
    # Isolate the failing points so the rest of the chunk still completes
    return np.concatenate([
        _error_chunk(field, settings, points[i:i + 1])
        for i in range(len(points))
    ])


def flowmap_error_grid(
    family: MapFamily, n: int, grid: Grid | np.ndarray,
    settings: IntegratorSettings, pool: ChunkMapper | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """log10 |Phi^eps_{X_n}(x0) - F(x0)| for every grid point.

    Returns (points, log10_err); failed points are NaN.
    """
    points = grid.points() if isinstance(grid, Grid) else np.asarray(grid)
    return points, flowmap_errors(IvfField(family, n), points, settings, pool)


def flowmap_errors(
    field: IvfField, points: np.ndarray, settings: IntegratorSettings,
    pool: ChunkMapper | None = None
) -> np.ndarray:
    """log10 error of the time-step flow of `field` against its map."""
    family, n = field.family, field.n
    errors = map_points(
        lambda chunk: _error_chunk(field, settings, chunk), points, pool
    )
    with np.errstate(divide='ignore'):
        log_err = np.log10(np.maximum(errors, np.finfo(float).tiny))
    log_err[np.isnan(errors)] = np.nan
    failed = int(np.count_nonzero(np.isnan(errors)))
    if failed:
        logger.warning(f'{failed} of {len(points)} grid points failed')
    if failed < len(points):
        logger.info(
            f'Error grid {family.name} eps={family.epsilon} n={n}: '
            f'max log10 error {np.nanmax(log_err):.3f}'
        )
    return log_err


def estimate_cost(
    n: int, points: int, steps: int = 1, power: int = 1
) -> int:
    """Map applications for `steps` integration steps of X_n at `points`."""
    return steps * STAGES * 2 * n * power * points


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log ys against log xs."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0) & np.isfinite(ys)
    if np.count_nonzero(keep) < 2:
        raise ValueError('Slope fit needs at least two positive samples')
    slope, _ = np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)
    return float(slope)


def field_error(
    family: MapFamily, n: int, exact: Callable[[np.ndarray], np.ndarray],
    points: np.ndarray
) -> float:
    """max |X_n - Y| over points, for maps that are time-eps flows of Y."""
    field = IvfField(family, n)
    diff = field(points) - exact(points)
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def order_ladder(
    make: Callable[[float], MapFamily], n: int, epsilons: Sequence[float],
    measure: Callable[[MapFamily, int], float]
) -> tuple[list[float], float]:
    """Errors along an eps ladder and their fitted log-log slope.

    The slope is NaN when fewer than two errors are positive and finite.
    """
    errors = [measure(make(eps), n) for eps in epsilons]
    try:
        slope = fit_slope(epsilons, errors)
    except ValueError as exc:
        logger.warning(f'No slope for n={n}: {exc}')
        slope = float('nan')
    return errors, slope
