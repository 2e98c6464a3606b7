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
Exception hierarchy.

Configuration problems and numerical failures are both RuntimeErrors so the
CLI can report them as input errors; the subclasses carry whatever partial
state was computed before the failure.
"""

from __future__ import annotations

from typing import Any


class ConfigError(RuntimeError):
    """Schema or cross-field violation in an experiment configuration."""

    def __init__(self, problems: list[str]) -> None:
        self.problems: list[str] = list(problems)
        super().__init__(
            'Invalid configuration:\n  ' + '\n  '.join(self.problems)
        )


class NumericalFailure(RuntimeError):
    pass


class DomainEscape(NumericalFailure):
    """An iterate left the declared domain.

    `index` is the iterate index k at which the escape happened, `where`
    the flat indices of the escaping points when a batch was evaluated,
    and `partial` whatever states were computed before the escape.
    """

    def __init__(
        self, index: int, where: Any = None, partial: Any = None
    ) -> None:
        self.index: int = index
        self.where: Any = where
        self.partial: Any = partial
        super().__init__(f'Iterate {index} left the domain')


class IntegrationFailure(NumericalFailure):

    def __init__(
        self, reason: str, t_reached: Any, state: Any
    ) -> None:
        self.reason: str = reason
        self.t_reached: Any = t_reached
        self.state: Any = state
        super().__init__(f'Integration failed ({reason})')


class QuadratureFailure(NumericalFailure):
    """Romberg extrapolation did not reach the requested tolerance.

    `best` is the last diagonal entry, `achieved` the difference between
    the last two diagonal entries. `s` is set to the path parameter of the
    offending node when the failure is a domain escape along the path.
    """

    def __init__(
        self, best: Any, achieved: Any, s: float | None = None
    ) -> None:
        self.best: Any = best
        self.achieved: Any = achieved
        self.s: float | None = s
        if s is not None:
            message = f'Path left the domain at s={s:g}'
        else:
            message = f'Romberg did not converge (difference {achieved})'
        super().__init__(message)


class InverseFailure(NumericalFailure):
    pass
