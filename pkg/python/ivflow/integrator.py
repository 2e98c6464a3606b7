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
Embedded Runge-Kutta-Fehlberg 7(8) integrator for batches of states.

All points of a batch advance with one shared step size. Per-point
durations are handled by rescaling time: for durations t_i the system
dy/dtau = t_i f(y) is integrated over tau in [0, 1], so a single step
sequence serves points that must stop at different times.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Callable

import numpy as np

from ivflow.errors import DomainEscape, IntegrationFailure


logger = logging.getLogger(__name__)


# Fehlberg 7(8) tableau
_A: tuple[tuple[float, ...], ...] = (
    (),
    (2 / 27,),
    (1 / 36, 1 / 12),
    (1 / 24, 0, 1 / 8),
    (5 / 12, 0, -25 / 16, 25 / 16),
    (1 / 20, 0, 0, 1 / 4, 1 / 5),
    (-25 / 108, 0, 0, 125 / 108, -65 / 27, 125 / 54),
    (31 / 300, 0, 0, 0, 61 / 225, -2 / 9, 13 / 900),
    (2, 0, 0, -53 / 6, 704 / 45, -107 / 9, 67 / 90, 3),
    (-91 / 108, 0, 0, 23 / 108, -976 / 135, 311 / 54, -19 / 60, 17 / 6,
     -1 / 12),
    (2383 / 4100, 0, 0, -341 / 164, 4496 / 1025, -301 / 82, 2133 / 4100,
     45 / 82, 45 / 164, 18 / 41),
    (3 / 205, 0, 0, 0, 0, -6 / 41, -3 / 205, -3 / 41, 3 / 41, 6 / 41, 0),
    (-1777 / 4100, 0, 0, -341 / 164, 4496 / 1025, -289 / 82, 2193 / 4100,
     51 / 82, 33 / 164, 12 / 41, 0, 1),
)

_B8: tuple[float, ...] = (
    0, 0, 0, 0, 0, 34 / 105, 9 / 35, 9 / 35, 9 / 280, 9 / 280, 0,
    41 / 840, 41 / 840,
)

_ERR = 41 / 840

STAGES = len(_A)


@dataclasses.dataclass(frozen=True)
class IntegratorSettings:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-11
    h_init: float = 1e-2
    h_min: float = 1e-14
    h_max: float = 1.0
    max_steps: int = 100000
    max_norm: float = 1e8

    def __post_init__(self) -> None:
        problems = settings_problems(dataclasses.asdict(self))
        if problems:
            raise ValueError('; '.join(problems))

    @classmethod
    def from_dict(cls, block: dict[str, Any] | None) -> IntegratorSettings:
        block = block or {}
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in block.items() if k in known})


def settings_problems(values: dict[str, Any]) -> list[str]:
    """Consistency checks on integrator settings, one message per problem."""
    defaults = IntegratorSettings.__dataclass_fields__
    merged = {name: f.default for name, f in defaults.items()}
    merged.update(values)
    problems = []
    for name in ('abs_tol', 'rel_tol', 'h_init', 'h_min', 'h_max',
                 'max_norm'):
        value = merged[name]
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            problems.append(f'integrator.{name} must be a number')
        elif not value > 0:
            problems.append(f'integrator.{name} must be positive, got {value}')
    if problems:
        return problems
    if not merged['h_min'] <= merged['h_init'] <= merged['h_max']:
        problems.append(
            'integrator step bounds must satisfy h_min <= h_init <= h_max'
        )
    max_steps = merged['max_steps']
    if isinstance(max_steps, bool) or not isinstance(max_steps, int) \
            or max_steps < 1:
        problems.append('integrator.max_steps must be a positive integer')
    return problems


def _rkf78_step(
    f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float
) -> tuple[np.ndarray, np.ndarray]:
    k: list[np.ndarray] = [f(y)]
    for row in _A[1:]:
        incr = np.zeros_like(y)
        for a, kj in zip(row, k):
            if a:
                incr += a * kj
        k.append(f(y + h * incr))
    y_new = y.copy()
    for b, kj in zip(_B8, k):
        if b:
            y_new += h * b * kj
    err = h * _ERR * (k[0] + k[10] - k[11] - k[12])
    return y_new, err


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
    t: float | np.ndarray, settings: IntegratorSettings
) -> np.ndarray:
    """Flow of the autonomous field rhs for time t (scalar or per point).

    Raises IntegrationFailure on step underflow, on exhausting max_steps,
    when a state would exceed max_norm (blow up) and when the field reports
    a domain escape; the exception carries the time reached by every point
    and the last accepted state.
    """
    x = np.array(x, dtype=float)
    durations = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    span = float(np.max(np.abs(durations), initial=0.0))
    if span == 0.0:
        return x

    scale = durations[..., None]

    def f(y: np.ndarray) -> np.ndarray:
        return scale * rhs(y)

    h = min(settings.h_init, settings.h_max, span) / span
    h_min = settings.h_min / span
    h_max = settings.h_max / span
    tau = 0.0
    y = x
    attempts = 0
    while 1.0 - tau > 1e-15:
        if attempts >= settings.max_steps:
            raise IntegrationFailure('max steps', tau * durations, y)
        attempts += 1
        h = min(h, 1.0 - tau)
        try:
            y_new, err = _rkf78_step(f, y, h)
        except DomainEscape as exc:
            raise IntegrationFailure(
                'domain escape', tau * durations, y
            ) from exc

        tol = settings.abs_tol + settings.rel_tol * np.maximum(
            np.abs(y), np.abs(y_new)
        )
        with np.errstate(invalid='ignore'):
            ratio = float(np.max(np.abs(err) / tol, initial=0.0))
        if not np.isfinite(ratio) or not np.all(np.isfinite(y_new)):
            ratio = np.inf

        if ratio <= 1.0:
            if np.max(np.abs(y_new)) > settings.max_norm:
                raise IntegrationFailure('blow up', tau * durations, y)
            tau += h
            y = y_new
        if ratio == 0.0:
            factor = 4.0
        else:
            factor = min(4.0, max(0.125, 0.8 * ratio ** (-1 / 8)))
        h_next = min(h * factor, h_max)
        if ratio > 1.0 and h_next < h_min:
            raise IntegrationFailure('step underflow', tau * durations, y)
        h = h_next

    logger.debug(f'Integrated {y.shape[:-1]} points over {span:g} '
                 f'in {attempts} attempts')
    return y


def nominal_steps(settings: IntegratorSettings, duration: float) -> int:
    """Accepted steps over `duration` if every step grows by the max factor.

    A lower bound used for cost estimates; rejected steps are not counted.
    """
    span = abs(duration)
    h = min(settings.h_init, settings.h_max, span)
    elapsed, steps = 0.0, 0
    limit = 1e-15 * max(span, 1.0)
    while span - elapsed > limit and steps < settings.max_steps:
        elapsed += min(h, span - elapsed)
        h = min(4.0 * h, settings.h_max)
        steps += 1
    return steps
