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
Run statistics and the run manifest.
"""

from __future__ import annotations

import platform
import threading
from typing import Any

import numpy as np
import psutil
import scipy
from rich.table import Table

import ivflow
from ivflow.reporting import table_dump_row


class RunStats(object):
    """Counters accumulated by the pipelines, safe to update from workers."""

    FAILURE_KEYS = ('failures', 'skipped_crossings', 'partial_seeds')

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.stats: dict[str, int | float] = {
            'points': 0, 'failures': 0, 'field_evals': 0,
            'map_applications': 0, 'crossings': 0, 'skipped_crossings': 0,
            'partial_seeds': 0, 'duration': 0.0,
        }

    def add_stats(self, **counts: int | float) -> None:
        with self.lock:
            for key, value in counts.items():
                self.stats[key] = self.stats.get(key, 0) + value

    def add_field(self, field: Any) -> None:
        """Fold in the evaluation count of an interpolating field."""
        evals = field.eval_count
        self.add_stats(
            field_evals=evals,
            map_applications=evals * 2 * field.n * field.family.power,
        )

    @property
    def failed(self) -> int:
        return int(sum(self.stats[k] for k in self.FAILURE_KEYS))

    def dump_table(self, table: Table) -> None:
        for key, value in self.stats.items():
            if key == 'duration':
                continue
            table_dump_row(
                table, key.replace('_', ' '), value,
                failed=key in self.FAILURE_KEYS and value != 0
            )
        table_dump_row(table, 'wall time (s)', float(self.stats['duration']))

    def manifest(
        self, digest: str, kind: str, artifacts: list[str],
        status: str = 'ok', failure: str | None = None
    ) -> dict[str, Any]:
        with self.lock:
            counts = dict(self.stats)
        return {
            'kind': kind,
            'status': status,
            'failure': failure,
            'config_sha256': digest,
            'versions': {
                'ivflow': ivflow.__version__,
                'numpy': np.__version__,
                'scipy': scipy.__version__,
                'python': platform.python_version(),
            },
            'host': {
                'cpu_count': psutil.cpu_count(logical=True),
                'platform': platform.platform(),
            },
            'wall_time': counts.pop('duration'),
            'counts': counts,
            'artifacts': sorted(artifacts),
        }
