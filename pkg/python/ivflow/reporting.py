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
Table row formatting for run summaries using rich.
"""

from __future__ import annotations

from rich.table import Table


def format_value(value: int | float | str) -> str:
    if isinstance(value, float):
        if value != 0 and (abs(value) < 1e-3 or abs(value) >= 1e6):
            return f'{value:.3e}'
        return f'{value:.3f}'
    return str(value)


def table_dump_row(
    table: Table, name: str, value: int | float | str,
    failed: bool = False
) -> None:
    """Add a row to a rich Table, highlighted when it reports a failure."""
    style: str | None = 'red' if failed else None
    table.add_row(name, format_value(value), style=style)
