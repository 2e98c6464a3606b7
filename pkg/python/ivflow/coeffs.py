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
Lagrange-derivative coefficients p_nk.

For 2n+1 equispaced nodes k = -n..n, p_nk is the derivative at 0 of the
Lagrange basis polynomial attached to node k. The interpolating vector field
is a linear combination of map iterates with these weights.

Floats come from the ratio recurrence

    p_n1 = n/(n+1),    p_n,k+1 = -p_nk * k(n-k) / ((k+1)(n+k+1))

which stays at machine precision and never forms a factorial. The same
recurrence run on Fractions gives the exact rationals used by the identity
checks (moment sums cancel catastrophically in floating point).
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import math
from fractions import Fraction
from typing import Iterator

import numpy as np


MAX_ORDER = 64


@dataclasses.dataclass(frozen=True, eq=False)
class CoeffTable:
    """p_{n,-n}..p_{n,n}, stored both as floats and as exact rationals."""
    n: int
    values: np.ndarray
    exact: tuple[Fraction, ...]

    def p(self, k: int) -> float:
        if abs(k) > self.n:
            raise ValueError(f'|k|={abs(k)} exceeds order {self.n}')
        return float(self.values[k + self.n])

    @property
    def positive(self) -> np.ndarray:
        """p_n1..p_nn."""
        return self.values[self.n + 1:]

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(-self.n, self.n + 1)


def _check_order(n: int) -> None:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise ValueError(f'Interpolation order must be an integer, got {n!r}')
    if not 1 <= n <= MAX_ORDER:
        raise ValueError(
            f'Interpolation order must lie in [1, {MAX_ORDER}], got {n}; '
            'large orders only amplify Runge oscillations'
        )


@functools.lru_cache(maxsize=None)
def coeff_table(n: int) -> CoeffTable:
    _check_order(n)
    n = int(n)

    floats = [0.0] * (n + 1)
    exact = [Fraction(0)] * (n + 1)
    floats[1] = n / (n + 1)
    exact[1] = Fraction(n, n + 1)
    for k in range(1, n):
        ratio_num = k * (n - k)
        ratio_den = (k + 1) * (n + k + 1)
        floats[k + 1] = -floats[k] * ratio_num / ratio_den
        exact[k + 1] = -exact[k] * Fraction(ratio_num, ratio_den)

    values = np.array([-v for v in reversed(floats[1:])] + floats)
    values.setflags(write=False)
    full_exact = tuple([-v for v in reversed(exact[1:])] + exact)
    return CoeffTable(n=n, values=values, exact=full_exact)


def closed_form(n: int, k: int) -> Fraction:
    """(-1)^(k+1) (n!)^2 / (k (n+k)! (n-k)!) in exact integer arithmetic."""
    if k == 0:
        return Fraction(0)
    sign = 1 if k > 0 else -1
    k = abs(k)
    value = Fraction(
        math.factorial(n) ** 2,
        k * math.factorial(n + k) * math.factorial(n - k)
    )
    return sign * (value if k % 2 == 1 else -value)


def moment_sum(table: CoeffTable, j: int) -> float:
    """Sum over k of p_nk k^j; 1 for j=1, 0 for j=0 and 2 <= j <= 2n."""
    if not 0 <= j <= 2 * table.n:
        raise ValueError(f'Moment order must lie in [0, {2 * table.n}], got {j}')
    total = sum(
        (p * Fraction(k) ** j for k, p in zip(range(-table.n, table.n + 1),
                                              table.exact)),
        Fraction(0)
    )
    return float(total)


def harmonic(n: int) -> float:
    return float(sum((Fraction(1, k) for k in range(1, n + 1)), Fraction(0)))


def abs_sum(table: CoeffTable) -> float:
    """Sum of |p_nk| for k=1..n, which equals H_n / 2."""
    return float(sum((abs(p) for p in table.exact[table.n + 1:]), Fraction(0)))


def signed_sum(table: CoeffTable) -> float:
    """Sum of p_nk for k=1..n, which equals H_2n - H_n."""
    return float(sum(table.exact[table.n + 1:], Fraction(0)))


def lagrange_basis(n: int, tau: float | np.ndarray) -> np.ndarray:
    """Basis polynomials pi_nk(tau) for k=-n..n on the integer nodes.

    Returns an array of shape (2n+1,) + shape(tau).
    """
    _check_order(n)
    tau = np.asarray(tau, dtype=float)
    nodes = np.arange(-n, n + 1)
    basis = np.empty((2 * n + 1,) + tau.shape)
    for i, k in enumerate(nodes):
        others = nodes[nodes != k]
        # pi_n'(k) = (-1)^(n-k) (n+k)! (n-k)!
        denom = (-1) ** (n - k) * math.factorial(n + k) * math.factorial(n - k)
        basis[i] = np.prod(tau[..., None] - others, axis=-1) / float(denom)
    return basis


def derivative_error_bound(n: int, eps: float, dmax: float) -> float:
    """Bound on |gamma'(0) - v_n| for a curve with |gamma^(2n+1)| <= dmax."""
    return (abs(eps) ** (2 * n) * math.factorial(n) ** 2
            / math.factorial(2 * n + 1) * dmax)


CSV_HEADER = ('k', 'p_nk', 'exact')


def csv_rows(table: CoeffTable) -> Iterator[tuple[int, float, str]]:
    for k, value, exact in zip(table.nodes, table.values, table.exact):
        yield int(k), float(value), str(exact)


def dump_csv(table: CoeffTable, path: str) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for k, value, exact in csv_rows(table):
            writer.writerow([k, repr(value), exact])
