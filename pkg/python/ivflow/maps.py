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
Registry of near-identity map families F_eps(x) = x + eps G_eps(x).

Every family works on arrays of shape (..., m) so whole grids or seed sets
are mapped in one call. Internally states live on the universal cover: angle
coordinates are never reduced while iterates are being generated, which keeps
differences x_k - x_{-k} free of 2*pi jumps. Public `forward`/`inverse`
reduce angles to (-pi, pi]; the `lifted_*` variants do not.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Any, Callable

import numpy as np
import scipy.optimize

from ivflow.errors import DomainEscape, InverseFailure, NumericalFailure
from ivflow import integrator


logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

Vector = np.ndarray
VectorFunction = Callable[[np.ndarray], np.ndarray]


def wrap_angle(a: np.ndarray | float) -> np.ndarray:
    """Reduce to the fundamental domain (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TWO_PI)


def wrap(x: np.ndarray, angle_mask: tuple[bool, ...]) -> np.ndarray:
    x = np.array(x, dtype=float)
    mask = np.asarray(angle_mask, dtype=bool)
    if mask.any():
        x[..., mask] = wrap_angle(x[..., mask])
    return x


def displacement(
    a: np.ndarray, b: np.ndarray, angle_mask: tuple[bool, ...]
) -> np.ndarray:
    """a - b with angle components taken as the shortest wrapped difference."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    mask = np.asarray(angle_mask, dtype=bool)
    if mask.any():
        d[..., mask] = wrap_angle(d[..., mask])
    return d


@dataclasses.dataclass(frozen=True)
class Domain:
    """Box in lifted coordinates plus a radius bound on the action variables.

    Unset bounds mean unbounded. Escapes are reported, never clamped.
    """
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    action_radius: float | None = None

    @property
    def bounded(self) -> bool:
        return (self.lower is not None or self.upper is not None
                or self.action_radius is not None)

    def contains(
        self, x: np.ndarray, angle_mask: tuple[bool, ...]
    ) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.all(np.isfinite(x), axis=-1)
        if self.lower is not None:
            inside &= np.all(x >= np.asarray(self.lower), axis=-1)
        if self.upper is not None:
            inside &= np.all(x <= np.asarray(self.upper), axis=-1)
        if self.action_radius is not None:
            actions = x[..., ~np.asarray(angle_mask, dtype=bool)]
            inside &= np.linalg.norm(actions, axis=-1) <= self.action_radius
        return inside

    def check(
        self, x: np.ndarray, angle_mask: tuple[bool, ...], index: int,
        partial: Any = None
    ) -> None:
        """Raise DomainEscape for iterate `index` if any point of x is out."""
        inside = self.contains(x, angle_mask)
        if not np.all(inside):
            where = np.flatnonzero(~np.ravel(inside))
            raise DomainEscape(index, where=where, partial=partial)


UNBOUNDED = Domain()


@dataclasses.dataclass(frozen=True, eq=False)
class MapFamily:
    """A near-identity map at a fixed parameter value.

    `power` is the number of base-map applications one call performs
    (iterate_power); the natural time step of the family is eps * power.
    `reversor` is a linear involution R with F^-1 = R F R, `symmetry` a
    linear map S with F S = S F.
    """
    name: str
    dim: int
    epsilon: float
    lifted_forward: VectorFunction
    lifted_inverse: VectorFunction
    angle_mask: tuple[bool, ...]
    limit_field: VectorFunction | None = None
    reversor: np.ndarray | None = None
    symmetry: np.ndarray | None = None
    symplectic: bool = False
    fixed_points: tuple[tuple[float, ...], ...] = ()
    params: dict[str, Any] = dataclasses.field(default_factory=dict)
    power: int = 1
    domain: Domain = UNBOUNDED

    def __post_init__(self) -> None:
        if len(self.angle_mask) != self.dim:
            raise ValueError(
                f'Map {self.name}: angle mask has {len(self.angle_mask)} '
                f'entries for dimension {self.dim}'
            )

    @property
    def step(self) -> float:
        return self.epsilon * self.power

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return wrap(x, self.angle_mask)

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return displacement(a, b, self.angle_mask)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.wrap(self.lifted_forward(np.asarray(x, dtype=float)))

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return self.wrap(self.lifted_inverse(np.asarray(x, dtype=float)))

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.domain.contains(x, self.angle_mask)


def pendulum_field(x: np.ndarray) -> np.ndarray:
    """x' = y, y' = -sin x."""
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 1], -np.sin(x[..., 0])], axis=-1)


def linear_field(a: float) -> VectorFunction:
    def field(x: np.ndarray) -> np.ndarray:
        return a * np.asarray(x, dtype=float)
    return field


def standard_map(epsilon: float, domain: Domain = UNBOUNDED) -> MapFamily:
    """Chirikov standard map (x, y) -> (x + eps y', y') with y' = y - eps sin x."""
    eps = float(epsilon)

    def lifted_forward(state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        y_new = state[..., 1] - eps * np.sin(state[..., 0])
        return np.stack([state[..., 0] + eps * y_new, y_new], axis=-1)

    def lifted_inverse(state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        x_old = state[..., 0] - eps * state[..., 1]
        return np.stack(
            [x_old, state[..., 1] + eps * np.sin(x_old)], axis=-1
        )

    return MapFamily(
        name='standard', dim=2, epsilon=eps,
        lifted_forward=lifted_forward, lifted_inverse=lifted_inverse,
        angle_mask=(True, False),
        limit_field=pendulum_field,
        symmetry=-np.eye(2),
        symplectic=True,
        fixed_points=((0.0, 0.0), (np.pi, 0.0)),
        domain=domain,
    )


FROESCHLE_DEFAULTS: dict[str, float] = {
    'a1': 1.0, 'a2': 0.5, 'a3': 1.25, 'eta': 0.5,
}


def froeschle_map(
    epsilon: float, a1: float = 1.0, a2: float = 0.5, a3: float = 1.25,
    eta: float = 0.5, domain: Domain = UNBOUNDED
) -> MapFamily:
    """Froeschlé-like map on T^2 x R^2 in coordinates (psi1, psi2, J1, J2).

    The actions are kicked first, then the angles drift with the new
    actions through the quadratic form (a1, a2; a2, a3).
    """
    eps = float(epsilon)
    if a1 <= 0 or a1 * a3 - a2 ** 2 <= 0:
        logger.warning(
            f'Froeschle map: quadratic form ({a1}, {a2}; {a2}, {a3}) is not '
            'positive definite, the limit Hamiltonian levels are not compact'
        )

    def lifted_forward(state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        j1 = state[..., 2] - eps * np.sin(state[..., 0])
        j2 = state[..., 3] - eps * eta * np.sin(state[..., 1])
        return np.stack([
            state[..., 0] + eps * (a1 * j1 + a2 * j2),
            state[..., 1] + eps * (a2 * j1 + a3 * j2),
            j1, j2,
        ], axis=-1)

    def lifted_inverse(state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        j1, j2 = state[..., 2], state[..., 3]
        psi1 = state[..., 0] - eps * (a1 * j1 + a2 * j2)
        psi2 = state[..., 1] - eps * (a2 * j1 + a3 * j2)
        return np.stack([
            psi1, psi2,
            j1 + eps * np.sin(psi1),
            j2 + eps * eta * np.sin(psi2),
        ], axis=-1)

    def limit_field(state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        j1, j2 = state[..., 2], state[..., 3]
        return np.stack([
            a1 * j1 + a2 * j2,
            a2 * j1 + a3 * j2,
            -np.sin(state[..., 0]),
            -eta * np.sin(state[..., 1]),
        ], axis=-1)

    return MapFamily(
        name='froeschle', dim=4, epsilon=eps,
        lifted_forward=lifted_forward, lifted_inverse=lifted_inverse,
        angle_mask=(True, True, False, False),
        limit_field=limit_field,
        symmetry=-np.eye(4),
        symplectic=True,
        # p1 elliptic-elliptic, p2/p3 hyperbolic-elliptic,
        # p4 hyperbolic-hyperbolic
        fixed_points=(
            (0.0, 0.0, 0.0, 0.0),
            (0.0, np.pi, 0.0, 0.0),
            (np.pi, 0.0, 0.0, 0.0),
            (np.pi, np.pi, 0.0, 0.0),
        ),
        params={'a1': a1, 'a2': a2, 'a3': a3, 'eta': eta},
        domain=domain,
    )


def flow_map(
    field: VectorFunction, epsilon: float, integ_tol: float = 1e-12,
    dim: int = 2, angle_mask: tuple[bool, ...] | None = None,
    name: str = 'flow', reversor: np.ndarray | None = None,
    symmetry: np.ndarray | None = None, symplectic: bool = False,
    fixed_points: tuple[tuple[float, ...], ...] = (),
    domain: Domain = UNBOUNDED
) -> MapFamily:
    """Time-eps map of an autonomous vector field, inverse by integrating back."""
    eps = float(epsilon)
    settings = integrator.IntegratorSettings(
        abs_tol=integ_tol, rel_tol=integ_tol
    )
    if angle_mask is None:
        angle_mask = (False,) * dim

    def lifted_forward(state: np.ndarray) -> np.ndarray:
        return integrator.integrate(field, state, eps, settings)

    def lifted_inverse(state: np.ndarray) -> np.ndarray:
        return integrator.integrate(field, state, -eps, settings)

    return MapFamily(
        name=name, dim=dim, epsilon=eps,
        lifted_forward=lifted_forward, lifted_inverse=lifted_inverse,
        angle_mask=tuple(angle_mask),
        limit_field=field,
        reversor=None if reversor is None else np.asarray(reversor, float),
        symmetry=None if symmetry is None else np.asarray(symmetry, float),
        symplectic=symplectic,
        fixed_points=fixed_points,
        domain=domain,
    )


def fixed_point_inverse(
    lifted_forward: VectorFunction, tol: float = 1e-13, max_iter: int = 50
) -> VectorFunction:
    """Inverse of a near-identity map by the iteration x <- x' - eps G(x).

    With eps G(x) = F(x) - x the iteration contracts whenever eps |DG| < 1.
    """
    def lifted_inverse(target: np.ndarray) -> np.ndarray:
        target = np.asarray(target, dtype=float)
        guess = target.copy()
        for _ in range(max_iter):
            update = target - (lifted_forward(guess) - guess)
            change = np.max(np.abs(update - guess), initial=0.0)
            guess = update
            if change <= tol * max(1.0, np.max(np.abs(guess), initial=0.0)):
                return guess
        raise InverseFailure(
            f'Fixed-point inverse did not converge in {max_iter} iterations '
            f'(last change {change:.3e})'
        )
    return lifted_inverse


def custom_map(
    name: str, forward: VectorFunction, epsilon: float, dim: int,
    angle_mask: tuple[bool, ...] | None = None,
    inverse: VectorFunction | None = None, **metadata: Any
) -> MapFamily:
    """Wrap a user-supplied lifted map; the inverse is solved if not given."""
    if inverse is None:
        inverse = fixed_point_inverse(forward)
    return MapFamily(
        name=name, dim=dim, epsilon=float(epsilon),
        lifted_forward=forward, lifted_inverse=inverse,
        angle_mask=tuple(angle_mask or (False,) * dim),
        **metadata
    )


def lift(
    image: np.ndarray, origin: np.ndarray, angle_mask: tuple[bool, ...]
) -> np.ndarray:
    """Representative of image closest to origin (deck shift by 2*pi*Z)."""
    mask = np.asarray(angle_mask, dtype=bool)
    if not mask.any():
        return image
    shift = np.round((image[..., mask] - origin[..., mask]) / TWO_PI)
    image = np.array(image)
    image[..., mask] -= TWO_PI * shift
    return image


def iterate_power(base: MapFamily, q: int) -> MapFamily:
    """F^q, taken on the lift closest to the identity.

    Near a q-periodic orbit of rotation p/q the plain lift of F^q moves the
    angles by 2*pi*p; subtracting that deck shift leaves the near-identity
    map whose interpolating field is X_{q,n}.
    """
    if q < 1:
        raise ValueError(f'Iterate power must be >= 1, got {q}')
    if q == 1:
        return base

    def compose(step: VectorFunction) -> VectorFunction:
        def composed(state: np.ndarray) -> np.ndarray:
            origin = np.asarray(state, dtype=float)
            current = origin
            for i in range(q):
                current = step(current)
                if base.domain.bounded:
                    base.domain.check(current, base.angle_mask, i + 1)
            return lift(current, origin, base.angle_mask)
        return composed

    return dataclasses.replace(
        base,
        name=f'{base.name}^{q}',
        lifted_forward=compose(base.lifted_forward),
        lifted_inverse=compose(base.lifted_inverse),
        power=base.power * q,
    )


def orbit(
    family: MapFamily, x0: np.ndarray, k_min: int, k_max: int,
    lifted: bool = False
) -> np.ndarray:
    """x_k = F^k(x0) for k_min <= k <= k_max, shape (k_max-k_min+1,)+x0.shape.

    Iterates are generated on the lift; angles are reduced on output unless
    `lifted` is set. On escape, DomainEscape carries the computed part of the
    orbit (in index order) and the escape index.
    """
    if k_min > 0 or k_max < 0:
        raise ValueError(f'Orbit range [{k_min}, {k_max}] must contain 0')
    x0 = np.asarray(x0, dtype=float)
    finish = (lambda s: s) if lifted else family.wrap

    forward = [x0]
    backward: list[np.ndarray] = []

    def partial() -> np.ndarray:
        states = list(reversed(backward)) + forward
        return finish(np.stack(states))

    for k in range(1, k_max + 1):
        nxt = family.lifted_forward(forward[-1])
        if family.domain.bounded and not np.all(family.contains(nxt)):
            raise DomainEscape(k, partial=partial())
        forward.append(nxt)
    for k in range(1, -k_min + 1):
        prev = family.lifted_inverse(backward[-1] if backward else x0)
        if family.domain.bounded and not np.all(family.contains(prev)):
            raise DomainEscape(-k, partial=partial())
        backward.append(prev)
    return partial()


def symplectic_defect(
    family: MapFamily, points: np.ndarray, h: float = 1e-6
) -> float:
    """max |J^T Omega J - Omega| over points, J by central differences."""
    if family.dim % 2:
        raise ValueError('Symplectic check needs an even dimension')
    d = family.dim // 2
    omega = np.block([[np.zeros((d, d)), np.eye(d)],
                      [-np.eye(d), np.zeros((d, d))]])
    points = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for x in points:
        jac = np.empty((family.dim, family.dim))
        for i in range(family.dim):
            dx = np.zeros(family.dim)
            dx[i] = h
            jac[:, i] = (family.lifted_forward(x + dx)
                         - family.lifted_forward(x - dx)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(jac.T @ omega @ jac - omega))))
    return worst


def find_periodic_orbit(
    family: MapFamily, q: int, guess: np.ndarray, tol: float = 1e-12,
    residual_tol: float = 1e-10
) -> np.ndarray:
    """Solve F^q(x) = x (modulo 2*pi in the angles) starting from guess.

    The root is accepted when max |F^q(x) - x| <= residual_tol, whatever
    the solver reports: hybr flags 'xtol too small' once it sits on the
    root to machine precision.
    """
    power = iterate_power(family, q)
    guess = np.asarray(guess, dtype=float)

    def residual(x: np.ndarray) -> np.ndarray:
        return power.lifted_forward(x) - x

    solution = scipy.optimize.root(residual, guess, method='hybr', tol=tol)
    worst = float(np.max(np.abs(residual(solution.x))))
    if not worst <= residual_tol:
        raise NumericalFailure(
            f'Periodic orbit search (q={q}) failed: {solution.message} '
            f'(residual {worst:.2e})'
        )
    logger.debug(f'Periodic orbit q={q} at {solution.x}, residual {worst:.2e}')
    return family.wrap(solution.x)


def _flow_field(params: dict[str, Any]) -> tuple[VectorFunction, int, dict]:
    kind = params.get('field', 'pendulum')
    if kind == 'pendulum':
        return pendulum_field, 2, {
            'reversor': np.diag([-1.0, 1.0]), 'symmetry': -np.eye(2),
            'symplectic': True, 'fixed_points': ((0.0, 0.0),),
        }
    if kind == 'linear':
        return linear_field(float(params.get('a', 1.0))), 1, {}
    raise ValueError(f'Unknown flow field: {kind!r}')


MAP_KINDS = ('standard', 'froeschle', 'flow')


def make_map(
    kind: str, epsilon: float, params: dict[str, Any] | None = None,
    power: int = 1, domain: Domain = UNBOUNDED
) -> MapFamily:
    """Build a registered family from its configuration block."""
    params = dict(params or {})
    if kind == 'standard':
        family = standard_map(epsilon, domain=domain)
    elif kind == 'froeschle':
        merged = dict(FROESCHLE_DEFAULTS)
        merged.update(params)
        family = froeschle_map(epsilon, domain=domain, **merged)
    elif kind == 'flow':
        field, dim, extra = _flow_field(params)
        family = flow_map(
            field, epsilon, integ_tol=float(params.get('integ_tol', 1e-12)),
            dim=dim, name=f'flow:{params.get("field", "pendulum")}',
            domain=domain, **extra
        )
    else:
        raise ValueError(
            f'Unknown map {kind!r} (expected one of {", ".join(MAP_KINDS)})'
        )
    return iterate_power(family, power)
