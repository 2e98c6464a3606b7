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
Interpolating vector field of a near-identity map.

X_n(x, eps) = eps^-1 sum_{k=1..n} p_nk (x_k - x_{-k}) where x_k = F^k(x):
the velocity at t=0 of the degree-2n polynomial through the 2n+1 iterates
placed at times k*eps. Iterates are recomputed for every evaluation and the
differences are taken on the lift, so the result is a plain tangent vector.
"""

from __future__ import annotations

import logging
import threading

import numpy as np

from ivflow.coeffs import CoeffTable, coeff_table, lagrange_basis
from ivflow.maps import MapFamily


logger = logging.getLogger(__name__)


def curve_derivative(
    samples: np.ndarray, table: CoeffTable, epsilon: float
) -> np.ndarray:
    """v_n = eps^-1 sum_k p_nk gamma(k eps) for samples gamma(-n eps..n eps).

    `samples` has the node index on axis 0.
    """
    if epsilon == 0:
        raise ValueError('Curve derivative needs a non-zero spacing')
    samples = np.asarray(samples, dtype=float)
    n = table.n
    if samples.shape[0] != 2 * n + 1:
        raise ValueError(
            f'Expected {2 * n + 1} samples for order {n}, '
            f'got {samples.shape[0]}'
        )
    return _combine(samples[n + 1:] - samples[n - 1::-1], table, epsilon)


def _combine(
    differences: np.ndarray, table: CoeffTable, epsilon: float
) -> np.ndarray:
    # differences[k-1] = x_k - x_{-k}
    return np.tensordot(table.positive, differences, axes=(0, 0)) / epsilon


class IvfField:
    """X_n bound to one map family at its fixed eps.

    Callable on arrays of shape (..., m). `eval_count` counts evaluated
    points; it is diagnostics only.
    """

    def __init__(self, family: MapFamily, n: int) -> None:
        self.family: MapFamily = family
        self.table: CoeffTable = coeff_table(n)
        self.n: int = self.table.n
        self._lock = threading.Lock()
        self._eval_count = 0

    def __repr__(self) -> str:
        return (f'IvfField({self.family.name}, '
                f'eps={self.family.epsilon}, n={self.n})')

    @property
    def step(self) -> float:
        """Natural time step: eps for F, q*eps for the q-th iterate."""
        return self.family.step

    @property
    def eval_count(self) -> int:
        with self._lock:
            return self._eval_count

    def _count(self, x: np.ndarray) -> None:
        with self._lock:
            self._eval_count += int(np.prod(x.shape[:-1], dtype=int))

    def iterates(self, x: np.ndarray) -> np.ndarray:
        """Lifted iterates x_{-n}..x_n stacked on a new leading axis."""
        x = np.asarray(x, dtype=float)
        family = self.family
        check = family.domain.bounded
        forward = [x]
        backward = [x]
        for k in range(1, self.n + 1):
            forward.append(family.lifted_forward(forward[-1]))
            if check:
                family.domain.check(forward[-1], family.angle_mask, k)
            backward.append(family.lifted_inverse(backward[-1]))
            if check:
                family.domain.check(backward[-1], family.angle_mask, -k)
        return np.stack(backward[:0:-1] + forward)

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.family.dim:
            raise ValueError(
                f'State dimension {x.shape[-1]} does not match map '
                f'dimension {self.family.dim}'
            )
        self._count(x)
        if self.step == 0:
            if self.family.limit_field is None:
                raise ValueError(
                    f'X_n at eps=0 needs the limit field of {self.family.name}'
                )
            return self.family.limit_field(x)
        return curve_derivative(self.iterates(x), self.table, self.step)

    __call__ = eval

    def interp_curve(self, x: np.ndarray, t: float) -> np.ndarray:
        """Degree-2n polynomial through the iterates, evaluated at time t."""
        if self.step == 0:
            raise ValueError('Interpolating curve is undefined at eps=0')
        if abs(t) > self.n * abs(self.step) * (1 + 1e-12):
            raise ValueError(
                f'|t|={abs(t):g} is outside the node range '
                f'{self.n * abs(self.step):g}'
            )
        samples = self.iterates(x)
        basis = lagrange_basis(self.n, t / self.step)
        value = np.tensordot(basis, samples, axes=(0, 0))
        return self.family.wrap(value)


def interp_curve(field: IvfField, x: np.ndarray, t: float) -> np.ndarray:
    return field.interp_curve(x, t)


def reversibility_defect(
    field: IvfField, points: np.ndarray, reversor: np.ndarray | None = None,
    tol: float = 1e-10
) -> float:
    """max |X_n(Rx) + R X_n(x)| over the sample points.

    R must be an involution that conjugates the map to its inverse at the
    sample points; anything else is rejected.
    """
    family = field.family
    if reversor is None:
        reversor = family.reversor
    if reversor is None:
        raise ValueError(f'Map {family.name} declares no reversor')
    reversor = np.asarray(reversor, dtype=float)
    if not np.allclose(reversor @ reversor, np.eye(family.dim), atol=1e-14):
        raise ValueError('Reversor is not an involution')

    points = np.atleast_2d(np.asarray(points, dtype=float))
    mirrored = points @ reversor.T
    conjugate = family.lifted_forward(mirrored) @ reversor.T
    mismatch = np.max(np.abs(family.lifted_inverse(points) - conjugate))
    if mismatch > tol * max(1.0, float(np.max(np.abs(points)))):
        raise ValueError(
            f'Matrix is not a reversor of {family.name} '
            f'(F^-1 - R F R = {mismatch:.2e})'
        )

    defect = field(mirrored) + field(points) @ reversor.T
    return float(np.max(np.abs(defect)))
