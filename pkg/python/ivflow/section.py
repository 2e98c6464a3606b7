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
Poincaré sections for maps.

An orbit of the map is scanned for consecutive iterates x_k, x_{k+1} on
opposite sides of Sigma = {g = 0}. The crossing is then placed on Sigma by
flowing x_k along the interpolating vector field: y_k = Phi^{t_k}(x_k) with
g(y_k) = 0 and t_k between 0 and eps. The orbit itself is never touched by
the projection step.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from ivflow import integrator
from ivflow.adiabatic import InvariantSpec, invariant_batch
from ivflow.errors import NumericalFailure
from ivflow.flow import ChunkMapper, advance, map_points
from ivflow.integrator import IntegratorSettings
from ivflow.ivf import IvfField
from ivflow.maps import MapFamily, wrap_angle


logger = logging.getLogger(__name__)

# consecutive iterates with |g| below tolerance that mark an in-section orbit
DEGENERATE_RUN = 3


@dataclasses.dataclass(frozen=True, eq=False)
class SectionSpec:
    g: Callable[[np.ndarray], np.ndarray]
    grad_g: Callable[[np.ndarray], np.ndarray]
    newton_tol: float = 1e-11
    newton_max_iter: int = 30
    transversality_floor: float = 1e-6
    # g is a wrapped angle difference: sign changes through +-pi are not
    # crossings
    wrap_guard: bool = False
    name: str = 'section'

    def __post_init__(self) -> None:
        if not self.newton_tol > 0:
            raise ValueError(
                f'newton_tol must be positive, got {self.newton_tol}'
            )
        if self.newton_max_iter < 1:
            raise ValueError('newton_max_iter must be at least 1')
        if not self.transversality_floor >= 0:
            raise ValueError('transversality_floor must be non-negative')


def angle_difference_section(
    i: int = 0, j: int = 1, dim: int = 4, **settings: Any
) -> SectionSpec:
    """g(x) = wrap(x_i - x_j), the surface psi_i = psi_j."""
    grad = np.zeros(dim)
    grad[i] = 1.0
    grad[j] = -1.0

    def g(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return wrap_angle(x[..., i] - x[..., j])

    def grad_g(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(grad, np.shape(x))

    return SectionSpec(g=g, grad_g=grad_g, wrap_guard=True,
                       name=f'x{i} = x{j}', **settings)


def coordinate_section(
    i: int, value: float = 0.0, dim: int = 2, angle: bool = False,
    **settings: Any
) -> SectionSpec:
    """g(x) = x_i - value (wrapped when coordinate i is an angle)."""
    grad = np.zeros(dim)
    grad[i] = 1.0

    def g(x: np.ndarray) -> np.ndarray:
        diff = np.asarray(x, dtype=float)[..., i] - value
        return wrap_angle(diff) if angle else diff

    def grad_g(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(grad, np.shape(x))

    return SectionSpec(g=g, grad_g=grad_g, wrap_guard=angle,
                       name=f'x{i} = {value:g}', **settings)


@dataclasses.dataclass(frozen=True, eq=False)
class CrossingRecord:
    k: int
    x_k: np.ndarray
    t_k: float
    y_k: np.ndarray
    residual: float
    direction: int
    seed_id: int = 0

    @property
    def psi(self) -> float:
        return float(self.y_k[0])

    @property
    def phi(self) -> float:
        """arg(J1 + i J2) for four-dimensional states, NaN otherwise."""
        if len(self.y_k) != 4:
            return float('nan')
        return float(np.arctan2(self.y_k[3], self.y_k[2]))


@dataclasses.dataclass
class CrossingScan:
    """Crossing pairs (k, x_k, x_{k+1}) of one orbit."""
    pairs: list[tuple[int, np.ndarray, np.ndarray]]
    in_section: bool = False
    escaped_at: int | None = None

    def __iter__(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> tuple[int, np.ndarray, np.ndarray]:
        return self.pairs[i]


class _Scanner:
    """Iterates a batch of seeds together and reports crossing pairs.

    Pairs whose left end already sits on Sigma are held back until the run
    of near-zero g values ends; a run of DEGENERATE_RUN iterates marks the
    seed as an in-section orbit and drops them.
    """

    def __init__(
        self, family: MapFamily, spec: SectionSpec, seeds: np.ndarray
    ) -> None:
        self.family = family
        self.spec = spec
        self.state = family.wrap(np.atleast_2d(seeds))
        self.g = spec.g(self.state)
        self.k = 0
        count = len(self.state)
        self.alive = np.ones(count, dtype=bool)
        self.in_section = np.zeros(count, dtype=bool)
        self.escaped_at = np.full(count, -1)
        self.zero_run = np.zeros(count, dtype=int)
        self.pending: list[list[tuple[int, int, np.ndarray, np.ndarray]]] = [
            [] for _ in range(count)
        ]
        self.has_pending = np.zeros(count, dtype=bool)
        # previous pair ended exactly on Sigma
        self.landed = np.zeros(count, dtype=bool)

    def step(self) -> list[tuple[int, int, np.ndarray, np.ndarray]]:
        """Advance one iterate; returns (seed, k, x_k, x_{k+1}) tuples."""
        family = self.family
        spec = self.spec
        nxt = family.forward(self.state)
        if family.domain.bounded:
            escaped = self.alive & ~family.contains(nxt)
            self.escaped_at[escaped] = self.k + 1
            self.alive &= ~escaped
        nxt = np.where(self.alive[:, None], nxt, self.state)
        g_next = spec.g(nxt)

        small = np.abs(self.g) < spec.newton_tol
        self.zero_run = np.where(small, self.zero_run + 1, 0)
        degenerate = self.alive & (self.zero_run >= DEGENERATE_RUN)
        for s in np.flatnonzero(degenerate):
            logger.info(f'Seed {s} lies in the section, no crossings kept')
            self.pending[s] = []
        self.has_pending &= ~degenerate
        self.in_section |= degenerate
        self.alive &= ~degenerate

        cross = self.alive & (self.g * g_next <= 0)
        if spec.wrap_guard:
            half = np.pi / 2
            cross &= (np.abs(self.g) < half) & (np.abs(g_next) < half)
        # x_k was already reported as the right end of pair k-1
        cross &= ~(self.landed & (self.g == 0))
        self.landed = cross & (g_next == 0)

        out: list[tuple[int, int, np.ndarray, np.ndarray]] = []
        for s in np.flatnonzero(cross | self.has_pending):
            if self.has_pending[s] and not small[s]:
                out.extend(self.pending[s])
                self.pending[s] = []
                self.has_pending[s] = False
            if cross[s]:
                pair = (int(s), self.k, self.state[s].copy(), nxt[s].copy())
                if small[s]:
                    self.pending[s].append(pair)
                    self.has_pending[s] = True
                else:
                    out.append(pair)

        self.state = nxt
        self.g = g_next
        self.k += 1
        return out

    def flush(self) -> list[tuple[int, int, np.ndarray, np.ndarray]]:
        out = [p for s in range(len(self.state)) if not self.in_section[s]
               for p in self.pending[s]]
        self.pending = [[] for _ in self.pending]
        self.has_pending[:] = False
        return out


def detect_crossings(
    family: MapFamily, x0: np.ndarray, num_iterates: int, spec: SectionSpec
) -> CrossingScan:
    """Crossing pairs among the first num_iterates iterates of x0."""
    scanner = _Scanner(family, spec, np.asarray(x0, dtype=float)[None])
    pairs = []
    for _ in range(num_iterates):
        if not scanner.alive[0]:
            break
        pairs.extend(scanner.step())
    pairs.extend(scanner.flush())
    escaped = int(scanner.escaped_at[0])
    if escaped >= 0:
        logger.warning(f'Orbit left the domain at iterate {escaped}')
    return CrossingScan(
        pairs=[(k, a, b) for _, k, a, b in pairs],
        in_section=bool(scanner.in_section[0]),
        escaped_at=escaped if escaped >= 0 else None,
    )


def _project(
    field: IvfField, x: np.ndarray, spec: SectionSpec,
    settings: IntegratorSettings
) -> np.ndarray:
    """Batched projection; rows are [t, y..., residual, direction, ok]."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    count, dim = x.shape
    tau = field.step
    lower, upper = min(0.0, tau), max(0.0, tau)

    t = np.zeros(count)
    y = x.copy()
    s = spec.g(x)
    slope = np.zeros(count)
    done = np.abs(s) < spec.newton_tol
    failed = np.zeros(count, dtype=bool)

    if done.any():
        slope[done] = np.sum(spec.grad_g(x[done]) * field(x[done]), axis=-1)

    s_lo = s.copy()
    lo = np.zeros(count)
    hi = np.full(count, tau)
    s_hi = np.zeros(count)
    open_ = ~done
    if open_.any():
        end = advance(field, x[open_], tau, settings)
        s_hi[open_] = spec.g(end)
        on_end = open_ & (np.abs(s_hi) < spec.newton_tol)
        if on_end.any():
            t[on_end] = tau
            y[on_end] = advance(field, x[on_end], tau, settings)
            slope[on_end] = np.sum(
                spec.grad_g(y[on_end]) * field(y[on_end]), axis=-1
            )
            done |= on_end
    bracketed = ~done & (s_lo * s_hi < 0)
    with np.errstate(divide='ignore', invalid='ignore'):
        secant = tau * s_lo / (s_lo - s_hi)
    t = np.where(bracketed, secant, t)

    for _ in range(spec.newton_max_iter):
        active = ~done & ~failed
        if not active.any():
            break
        ya = advance(field, x[active], t[active], settings)
        sa = spec.g(ya)
        da = np.sum(spec.grad_g(ya) * field(ya), axis=-1)
        idx = np.flatnonzero(active)

        conv = np.abs(sa) < spec.newton_tol
        y[idx[conv]] = ya[conv]
        slope[idx[conv]] = da[conv]
        done[idx[conv]] = True

        idx, sa, da = idx[~conv], sa[~conv], da[~conv]
        ta = t[idx]
        br = bracketed[idx]
        same = np.sign(sa) == np.sign(s_lo[idx])
        lo[idx] = np.where(br & same, ta, lo[idx])
        s_lo[idx] = np.where(br & same, sa, s_lo[idx])
        hi[idx] = np.where(br & ~same, ta, hi[idx])

        with np.errstate(divide='ignore', invalid='ignore'):
            newton = ta - sa / da
        left = np.where(br, np.minimum(lo[idx], hi[idx]), lower)
        right = np.where(br, np.maximum(lo[idx], hi[idx]), upper)
        usable = (np.abs(da) >= spec.transversality_floor) \
            & np.isfinite(newton) & (newton >= left) & (newton <= right)
        t[idx] = np.where(usable, newton,
                          np.where(br, 0.5 * (lo[idx] + hi[idx]), np.nan))
        failed[idx[~usable & ~br]] = True

    failed |= ~done
    tangent = done & (np.abs(slope) < spec.transversality_floor)
    if tangent.any():
        logger.warning(
            f'Skipped {int(tangent.sum())} tangential crossings '
            f'(|grad g . X| < {spec.transversality_floor:g})'
        )
    if (failed & ~tangent).any():
        logger.warning(
            f'Projection did not converge for {int((failed & ~tangent).sum())}'
            ' crossings'
        )
    ok = done & ~tangent
    residual = np.abs(spec.g(y))
    return np.column_stack([
        t, field.family.wrap(y), residual, np.sign(slope), ok.astype(float)
    ])


def _project_isolating(
    field: IvfField, x: np.ndarray, spec: SectionSpec,
    settings: IntegratorSettings
) -> np.ndarray:
    try:
        return _project(field, x, spec, settings)
    except NumericalFailure as exc:
        if len(x) == 1:
            logger.warning(f'Projection failed: {exc}')
            row = np.full((1, field.family.dim + 4), np.nan)
            row[0, -1] = 0.0
            return row
    return np.concatenate([
        _project_isolating(field, x[i:i + 1], spec, settings)
        for i in range(len(x))
    ])


def project_crossings(
    field: IvfField, points: np.ndarray, spec: SectionSpec,
    settings: IntegratorSettings, pool: ChunkMapper | None = None
) -> np.ndarray:
    """Project a batch of pre-crossing states; one result row per point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not len(points):
        return np.empty((0, field.family.dim + 4))
    return map_points(
        lambda chunk: _project_isolating(field, chunk, spec, settings),
        points, pool
    )


def _record(
    row: np.ndarray, k: int, x_k: np.ndarray, dim: int, seed_id: int = 0
) -> CrossingRecord | None:
    if row[-1] != 1.0:
        return None
    return CrossingRecord(
        k=k, x_k=x_k, t_k=float(row[0]), y_k=row[1:dim + 1].copy(),
        residual=float(row[dim + 1]), direction=int(row[dim + 2]),
        seed_id=seed_id,
    )


def project_crossing(
    field: IvfField, x_k: np.ndarray, spec: SectionSpec,
    settings: IntegratorSettings, k: int = 0
) -> CrossingRecord | None:
    """Place one crossing on Sigma; None when it is tangential or fails."""
    x_k = np.asarray(x_k, dtype=float)
    row = _project_isolating(field, x_k[None], spec, settings)[0]
    return _record(row, k, x_k, field.family.dim)


@dataclasses.dataclass
class SectionCloud:
    records: list[CrossingRecord]
    # per seed: complete, exhausted, escaped or in-section
    flags: list[str]

    @property
    def coords(self) -> np.ndarray:
        return np.array([r.y_k for r in self.records])

    @property
    def psi(self) -> np.ndarray:
        return np.array([r.psi for r in self.records])

    @property
    def phi(self) -> np.ndarray:
        return np.array([r.phi for r in self.records])

    def count(self, flag: str) -> int:
        return sum(1 for f in self.flags if f == flag)


def section_cloud(
    family: MapFamily, field: IvfField, spec: SectionSpec,
    seeds: np.ndarray, crossings_per_seed: int,
    settings: IntegratorSettings, max_iterates: int | None = None,
    block: int = 500, pool: ChunkMapper | None = None,
    progress: Callable[[int], None] | None = None
) -> SectionCloud:
    """Collect crossings_per_seed projected crossings for every seed.

    Records are ordered by seed, then by iterate index.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if max_iterates is None:
        max_iterates = 1000 * crossings_per_seed
    scanner = _Scanner(family, spec, seeds)
    per_seed: list[list[CrossingRecord]] = [[] for _ in seeds]
    dim = family.dim

    def absorb(pairs: list[tuple[int, int, np.ndarray, np.ndarray]]) -> None:
        pairs = [p for p in pairs if len(per_seed[p[0]]) < crossings_per_seed]
        if not pairs:
            return
        rows = project_crossings(
            field, np.stack([p[2] for p in pairs]), spec, settings, pool
        )
        for (seed, k, x_k, _), row in zip(pairs, rows):
            record = _record(row, k, x_k, dim, seed)
            if record is not None and len(per_seed[seed]) < crossings_per_seed:
                per_seed[seed].append(record)
        if progress is not None:
            progress(sum(len(r) for r in per_seed))

    while scanner.k < max_iterates:
        wanted = np.array([len(r) < crossings_per_seed for r in per_seed])
        scanner.alive &= wanted
        if not scanner.alive.any():
            break
        pairs = []
        for _ in range(min(block, max_iterates - scanner.k)):
            pairs.extend(scanner.step())
        absorb(pairs)
    absorb(scanner.flush())

    flags = []
    for s, records in enumerate(per_seed):
        if scanner.in_section[s]:
            flags.append('in-section')
        elif scanner.escaped_at[s] >= 0:
            flags.append('escaped')
        elif len(records) >= crossings_per_seed:
            flags.append('complete')
        else:
            flags.append('exhausted')
    partial = sum(1 for f in flags if f != 'complete')
    if partial:
        logger.warning(f'{partial} of {len(flags)} seeds gave partial clouds')
    return SectionCloud(
        records=[r for records in per_seed for r in records], flags=flags
    )


def _j_gradient(
    spec: InvariantSpec, states: np.ndarray, delta: float
) -> np.ndarray:
    """Central-difference gradient of h_n in (J1, J2)."""
    shifted = []
    for axis in (2, 3):
        for sign in (1.0, -1.0):
            moved = states.copy()
            moved[..., axis] += sign * delta
            shifted.append(moved)
    h = invariant_batch(spec, np.stack(shifted))
    return np.stack([(h[0] - h[1]) / (2 * delta),
                     (h[2] - h[3]) / (2 * delta)], axis=-1)


def _with_angles(psi: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.column_stack([psi, psi, actions])


def _level_bisect(
    spec: InvariantSpec, psi: np.ndarray, energy: float, j2_max: float,
    scan_points: int
) -> np.ndarray:
    """J2 > 0 with h_n(psi, psi, 0, J2) = E per psi; NaN when unbracketed."""
    ladder = np.linspace(0.0, j2_max, scan_points + 1)
    states = np.zeros((len(psi), len(ladder), 4))
    states[..., 0] = psi[:, None]
    states[..., 1] = psi[:, None]
    states[..., 3] = ladder
    f = invariant_batch(spec, states) - energy
    found = np.full(len(psi), np.nan)
    lo = np.zeros(len(psi))
    hi = np.zeros(len(psi))
    f_lo = np.zeros(len(psi))
    for i in range(len(psi)):
        change = np.flatnonzero(f[i, :-1] * f[i, 1:] <= 0)
        if not len(change):
            logger.warning(
                f'No level h = {energy:g} bracket for psi = {psi[i]:g} '
                f'with 0 < J2 <= {j2_max:g}'
            )
            continue
        c = change[0]
        lo[i], hi[i], f_lo[i] = ladder[c], ladder[c + 1], f[i, c]
        found[i] = 0.0
    active = np.isfinite(found)
    for _ in range(60):
        if not active.any():
            break
        mid = 0.5 * (lo + hi)
        trial = _with_angles(psi[active], np.column_stack(
            [np.zeros(active.sum()), mid[active]]
        ))
        fm = np.full(len(psi), np.nan)
        fm[active] = invariant_batch(spec, trial) - energy
        same = active & (np.sign(fm) == np.sign(f_lo))
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, fm, f_lo)
        hi = np.where(active & ~same, mid, hi)
        found = np.where(active, mid, found)
        active &= ~((np.abs(fm) <= spec.quad_tol) | (hi - lo < 1e-13))
    return found


def refine_levelset(
    spec: InvariantSpec, states: np.ndarray, energy: float,
    delta: float = 1e-4, max_iter: int = 20
) -> np.ndarray:
    """Newton steps along grad h in the action plane onto {h_n = E}."""
    states = np.array(states, dtype=float)
    for _ in range(max_iter):
        miss = invariant_batch(spec, states) - energy
        open_ = np.abs(miss) > spec.quad_tol
        if not open_.any():
            break
        grad = _j_gradient(spec, states[open_], delta)
        norm2 = np.sum(grad ** 2, axis=-1)
        states[open_, 2:] -= (miss[open_] / norm2)[:, None] * grad
    return states


def _trace_levels(
    spec: InvariantSpec, psi: np.ndarray, start: np.ndarray, count: int,
    settings: IntegratorSettings, delta: float
) -> list[list[np.ndarray]]:
    """Follow (J1', J2') = (-dh/dJ2, dh/dJ1) once around each level curve."""

    def rhs_for(angles: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        def rhs(actions: np.ndarray) -> np.ndarray:
            grad = _j_gradient(spec, _with_angles(angles, actions), delta)
            return np.stack([-grad[..., 1], grad[..., 0]], axis=-1)
        return rhs

    spacing = 2 * np.pi / count
    actions = start.copy()
    phase = np.arctan2(actions[:, 1], actions[:, 0])
    travelled = np.zeros(len(psi))
    points: list[list[np.ndarray]] = [[a.copy()] for a in actions]
    active = np.ones(len(psi), dtype=bool)

    while active.any():
        idx = np.flatnonzero(active)
        rhs = rhs_for(psi[idx])
        velocity = rhs(actions[idx])
        r2 = np.sum(actions[idx] ** 2, axis=-1)
        omega = np.abs(actions[idx, 0] * velocity[:, 1]
                       - actions[idx, 1] * velocity[:, 0]) / r2
        dt = (spacing / 4) / np.maximum(omega, 1e-12)
        moved = integrator.integrate(rhs, actions[idx], dt, settings)
        new_phase = np.arctan2(moved[:, 1], moved[:, 0])
        step = np.abs(wrap_angle(new_phase - phase[idx]))
        for j, i in enumerate(idx):
            before = travelled[i]
            after = before + step[j]
            while (len(points[i]) < count
                   and len(points[i]) * spacing <= after):
                frac = (len(points[i]) * spacing - before) / step[j]
                points[i].append(
                    actions[i] + frac * (moved[j] - actions[i])
                )
            travelled[i] = after
            if len(points[i]) >= count:
                active[i] = False
        actions[idx] = moved
        phase[idx] = new_phase
    return points


def seed_levelset(
    invariant_spec: InvariantSpec, section_spec: SectionSpec, energy: float,
    psi_values: Sequence[float], count: int,
    settings: IntegratorSettings | None = None, j2_max: float = 2 * np.pi,
    scan_points: int = 32, delta: float = 1e-4
) -> list[np.ndarray]:
    """Initial conditions on Sigma (psi1 = psi2) intersected with {h_n = E}.

    For every psi the level curve in the (J1, J2) plane is found by bisection
    along J1 = 0, J2 > 0 and then followed with the auxiliary Hamiltonian
    field; points are taken every 2*pi/count of arg(J1 + i J2) and pulled
    back onto the level.
    """
    if invariant_spec.family.dim != 4:
        raise ValueError('Level-set seeding needs a four-dimensional map')
    if settings is None:
        settings = IntegratorSettings(
            abs_tol=1e-8, rel_tol=1e-8, h_init=1e-3, h_min=1e-12
        )
    psi = np.asarray(list(psi_values), dtype=float)
    j2 = _level_bisect(invariant_spec, psi, energy, j2_max, scan_points)
    keep = np.isfinite(j2)
    psi = psi[keep]
    start = np.column_stack([np.zeros(keep.sum()), j2[keep]])

    try:
        curves = _trace_levels(invariant_spec, psi, start, count, settings,
                               delta)
    except NumericalFailure:
        curves = []
        for i in range(len(psi)):
            try:
                curves.extend(_trace_levels(
                    invariant_spec, psi[i:i + 1], start[i:i + 1], count,
                    settings, delta
                ))
            except NumericalFailure as exc:
                logger.warning(
                    f'Level curve for psi = {psi[i]:g} truncated: {exc}'
                )
                curves.append([start[i]])

    seeds = []
    for angle, curve in zip(psi, curves):
        states = _with_angles(np.full(len(curve), angle), np.array(curve))
        seeds.extend(refine_levelset(invariant_spec, states, energy))
    on_section = [s for s in seeds
                  if abs(section_spec.g(s)) <= section_spec.newton_tol]
    logger.info(f'{len(on_section)} level-set seeds at h = {energy:g}')
    return on_section
