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
Adiabatic invariants h_n of symplectic near-identity maps.

h_n(x) is the line integral of the one-form nu_n = omega(X_n, .) from a base
point x_b to x. The integral runs over straight segments in the chart with
angles reduced to (-pi, pi], so h_n is multivalued on the cylinder; values
are measured relative to the base point (h_n(x_b) = 0).

Quadrature is the trapezoidal rule with Romberg extrapolation, run for a
whole batch of endpoints at once. A point is accepted as soon as two
consecutive diagonal entries differ by less than quad_tol, and drops out of
later levels.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Callable, Sequence

import numpy as np

from ivflow.errors import DomainEscape, QuadratureFailure
from ivflow.flow import ChunkMapper, map_points
from ivflow.ivf import IvfField
from ivflow.maps import MapFamily


logger = logging.getLogger(__name__)

PATHS = ('straight', 'axis')

# Field evaluations per vectorized call during quadrature
_BATCH = 1 << 14


def pairing(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """omega(u, v) for the standard structure pairing i with i+d."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    m = u.shape[-1]
    if m % 2:
        raise ValueError(
            f'Symplectic pairing needs an even dimension, got {m}'
        )
    d = m // 2
    return np.sum(u[..., :d] * v[..., d:] - u[..., d:] * v[..., :d], axis=-1)


def one_form(field: IvfField, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """nu_n(x)(v) = omega(X_n(x), v)."""
    if field.family.dim % 2:
        raise ValueError(
            f'One-form needs an even dimension, map {field.family.name} '
            f'has {field.family.dim}'
        )
    return pairing(field(x), v)


def default_base_point(family: MapFamily) -> np.ndarray:
    """(0, 0) for the standard map and pendulum, p4 for the Froeschle map."""
    kind = family.name.split('^')[0]
    if kind == 'froeschle':
        return np.array([np.pi, np.pi, 0.0, 0.0])
    return np.zeros(family.dim)


@dataclasses.dataclass(frozen=True, eq=False)
class InvariantSpec:
    field: IvfField
    base_point: np.ndarray
    quad_tol: float = 1e-8
    max_romberg_levels: int = 20
    path: str = 'straight'
    initial_panels: int = 8

    def __post_init__(self) -> None:
        family = self.field.family
        base = np.asarray(self.base_point, dtype=float)
        object.__setattr__(self, 'base_point', base)
        if family.dim % 2:
            raise ValueError(
                f'Adiabatic invariant needs an even dimension, '
                f'map {family.name} has {family.dim}'
            )
        if not family.symplectic:
            raise ValueError(f'Map {family.name} is not declared symplectic')
        if base.shape != (family.dim,):
            raise ValueError(
                f'Base point has shape {base.shape}, expected ({family.dim},)'
            )
        if not np.all(family.contains(base)):
            raise ValueError(f'Base point {base} is outside the domain')
        if not self.quad_tol > 0:
            raise ValueError(f'quad_tol must be positive, got {self.quad_tol}')
        if self.max_romberg_levels < 2:
            raise ValueError('max_romberg_levels must be at least 2')
        if self.path not in PATHS:
            raise ValueError(
                f'Unknown path rule {self.path!r} (expected one of '
                f'{", ".join(PATHS)})'
            )

    @property
    def family(self) -> MapFamily:
        return self.field.family

    @classmethod
    def for_field(cls, field: IvfField, **kwargs: Any) -> InvariantSpec:
        base = kwargs.pop('base_point', None)
        if base is None:
            base = default_base_point(field.family)
        return cls(field=field, base_point=base, **kwargs)


@dataclasses.dataclass
class _Quadrature:
    values: np.ndarray
    achieved: np.ndarray
    escape_s: np.ndarray
    best: np.ndarray

    @property
    def failed(self) -> np.ndarray:
        return np.isnan(self.values)


def _segment_integrals(
    spec: InvariantSpec, starts: np.ndarray, ends: np.ndarray
) -> _Quadrature:
    """Romberg integrals of omega(X_n(a + s(b-a)), b-a) over s in [0, 1]."""
    deltas = ends - starts
    count = len(deltas)
    values = np.full(count, np.nan)
    achieved = np.full(count, np.inf)
    escape_s = np.full(count, np.nan)
    best = np.full(count, np.nan)

    def evaluate(
        s: np.ndarray, active: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Integrand at nodes s for the active points; drops escapers."""
        keep = np.ones(len(active), dtype=bool)
        out = np.empty((len(s), len(active)))
        rows = max(1, _BATCH // max(1, len(active)))
        for lo in range(0, len(s), rows):
            nodes = s[lo:lo + rows]
            while True:
                idx = active[keep]
                pts = starts[idx] + nodes[:, None, None] * deltas[idx]
                try:
                    out[lo:lo + rows, keep] = pairing(
                        spec.field(pts), deltas[idx]
                    )
                    break
                except DomainEscape as exc:
                    if exc.where is None:
                        hit = np.arange(len(idx))
                        at = np.zeros(len(idx), dtype=int)
                    else:
                        at, hit = np.unravel_index(
                            np.asarray(exc.where), (len(nodes), len(idx))
                        )
                    for node, point in zip(at, hit):
                        target = idx[point]
                        if np.isnan(escape_s[target]) \
                                or nodes[node] < escape_s[target]:
                            escape_s[target] = nodes[node]
                    mask = np.ones(len(idx), dtype=bool)
                    mask[np.unique(hit)] = False
                    keep[np.flatnonzero(keep)[~mask]] = False
                    if not keep.any():
                        break
        return out, keep

    active = np.arange(count)
    panels = spec.initial_panels
    f, keep = evaluate(np.linspace(0.0, 1.0, panels + 1), active)
    f = f[:, keep]
    active = active[keep]
    row = [(f.sum(axis=0) - 0.5 * (f[0] + f[-1])) / panels]
    diff = np.full(len(active), np.inf)

    for level in range(1, spec.max_romberg_levels):
        if not len(active):
            break
        panels *= 2
        nodes = (2 * np.arange(panels // 2) + 1) / panels
        f, keep = evaluate(nodes, active)
        if not keep.all():
            f = f[:, keep]
            active = active[keep]
            row = [r[keep] for r in row]
        new_row = [0.5 * row[0] + f.sum(axis=0) / panels]
        for i in range(1, level + 1):
            new_row.append(
                new_row[i - 1] + (new_row[i - 1] - row[i - 1]) / (4 ** i - 1)
            )
        diff = np.abs(new_row[-1] - row[-1])
        done = diff < spec.quad_tol
        values[active[done]] = new_row[-1][done]
        best[active] = new_row[-1]
        achieved[active[done]] = diff[done]
        row = [r[~done] for r in new_row]
        diff = diff[~done]
        active = active[~done]

    if len(active):
        achieved[active] = diff
        logger.debug(
            f'{len(active)} quadratures unconverged after '
            f'{spec.max_romberg_levels} levels'
        )
    return _Quadrature(values, achieved, escape_s, best)


def invariant_batch(
    spec: InvariantSpec, points: np.ndarray, strict: bool = False
) -> np.ndarray:
    """h_n at every point of an array of shape (..., m).

    Failed quadratures are NaN unless `strict`, in which case the first
    failure is raised as QuadratureFailure.
    """
    family = spec.family
    points = family.wrap(np.asarray(points, dtype=float))
    shape = points.shape[:-1]
    flat = points.reshape(-1, family.dim)
    base = np.broadcast_to(spec.base_point, flat.shape)

    if spec.path == 'straight':
        legs = [(base, flat)]
    else:
        d = family.dim // 2
        corner = np.concatenate([flat[:, :d], base[:, d:]], axis=-1)
        legs = [(base, corner), (corner, flat)]

    total = np.zeros(len(flat))
    for start, end in legs:
        quad = _segment_integrals(spec, np.array(start), np.array(end))
        if strict and quad.failed.any():
            i = int(np.flatnonzero(quad.failed)[0])
            if not np.isnan(quad.escape_s[i]):
                raise QuadratureFailure(None, None, s=float(quad.escape_s[i]))
            raise QuadratureFailure(quad.best[i], quad.achieved[i])
        total += quad.values

    failed = int(np.count_nonzero(np.isnan(total)))
    if failed:
        logger.warning(
            f'{failed} of {len(total)} invariant quadratures failed'
        )
    return total.reshape(shape)


def invariant(spec: InvariantSpec, x: np.ndarray) -> float:
    """h_n(x); raises QuadratureFailure when Romberg does not converge."""
    return float(invariant_batch(spec, np.asarray(x)[None], strict=True)[0])


def limit_hamiltonian(family: MapFamily | str, x: np.ndarray) -> np.ndarray:
    """Closed-form h_0 of the standard map, pendulum flow or Froeschle map."""
    if isinstance(family, str):
        kind, params = family, {}
    else:
        kind, params = family.name.split('^')[0], family.params
    x = np.asarray(x, dtype=float)
    if kind in ('standard', 'flow:pendulum'):
        return 0.5 * x[..., 1] ** 2 - np.cos(x[..., 0])
    if kind == 'froeschle':
        a1 = params.get('a1', 1.0)
        a2 = params.get('a2', 0.5)
        a3 = params.get('a3', 1.25)
        eta = params.get('eta', 0.5)
        j1, j2 = x[..., 2], x[..., 3]
        return (0.5 * a1 * j1 ** 2 + a2 * j1 * j2 + 0.5 * a3 * j2 ** 2
                - np.cos(x[..., 0]) - eta * np.cos(x[..., 1]))
    raise ValueError(f'No closed-form limit Hamiltonian for {kind!r}')


def delta_h(
    spec: InvariantSpec, points: np.ndarray, pool: ChunkMapper | None = None
) -> np.ndarray:
    """|h_n(F(x)) - h_n(x)| per point, NaN where a quadrature failed."""
    family = spec.family
    points = np.asarray(points, dtype=float)

    def chunk(block: np.ndarray) -> np.ndarray:
        both = np.concatenate([block, family.forward(block)])
        h = invariant_batch(spec, both)
        return np.abs(h[len(block):] - h[:len(block)])

    return map_points(chunk, points, pool)


@dataclasses.dataclass(frozen=True)
class DeltaHRow:
    n: int
    epsilon: float
    max_delta_h: float
    failures: int


def delta_h_scan(
    make_family: Callable[[float], MapFamily], n_list: Sequence[int],
    epsilon_list: Sequence[float], points: np.ndarray,
    quad_tol: float = 1e-8, max_romberg_levels: int = 20,
    base_point: np.ndarray | None = None, path: str = 'straight',
    pool: ChunkMapper | None = None,
    progress: Callable[[IvfField], None] | None = None
) -> list[DeltaHRow]:
    """max over points of |h_n(F_eps(x)) - h_n(x)| for every (n, eps).

    `progress` receives the field of every finished (n, eps) cell.
    """
    rows = []
    for eps in epsilon_list:
        family = make_family(eps)
        for n in n_list:
            spec = InvariantSpec.for_field(
                IvfField(family, n), base_point=base_point,
                quad_tol=quad_tol, max_romberg_levels=max_romberg_levels,
                path=path,
            )
            delta = delta_h(spec, points, pool)
            failures = int(np.count_nonzero(np.isnan(delta)))
            worst = float(np.nanmax(delta)) if failures < len(delta) \
                else float('nan')
            logger.info(f'dh scan eps={eps:g} n={n}: max {worst:.3e}, '
                        f'{failures} failures')
            rows.append(DeltaHRow(int(n), float(eps), worst, failures))
            if progress is not None:
                progress(spec.field)
    return rows


def optimal_order(rows: Sequence[DeltaHRow]) -> dict[float, int]:
    """For each eps, the order n with the smallest max Delta h_n."""
    best: dict[float, DeltaHRow] = {}
    for row in rows:
        if np.isnan(row.max_delta_h):
            continue
        current = best.get(row.epsilon)
        if current is None or row.max_delta_h < current.max_delta_h:
            best[row.epsilon] = row
    return {eps: row.n for eps, row in best.items()}


def path_dependence(spec: InvariantSpec, points: np.ndarray) -> float:
    """max |h_n(straight) - h_n(axis-parallel)| over points."""
    straight = dataclasses.replace(spec, path='straight')
    axis = dataclasses.replace(spec, path='axis')
    diff = np.abs(invariant_batch(straight, points)
                  - invariant_batch(axis, points))
    return float(np.nanmax(diff))


def invariant_series(
    spec: InvariantSpec, x0: np.ndarray, num_iterates: int, every: int = 1,
    pool: ChunkMapper | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(k, h_n(F^k(x0))) for k = 0, every, 2*every, ... up to num_iterates.

    An escaping orbit yields the series up to the escape.
    """
    family = spec.family
    state = family.wrap(np.asarray(x0, dtype=float))
    indices = [0]
    samples = [state]
    for k in range(1, num_iterates + 1):
        state = family.forward(state)
        if family.domain.bounded and not np.all(family.contains(state)):
            logger.warning(f'Orbit left the domain at iterate {k}')
            break
        if k % every == 0:
            indices.append(k)
            samples.append(state)
    values = map_points(
        lambda block: invariant_batch(spec, block), np.stack(samples), pool
    )
    return np.array(indices), values


def invariant_histogram(
    values: np.ndarray, bins: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Counts and bin edges of the finite invariant values."""
    finite = np.asarray(values)[np.isfinite(values)]
    return np.histogram(finite, bins=bins)
