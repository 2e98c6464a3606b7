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
Live progress line for long sweeps.

The line counts work units (pool chunks), failed units, throughput and an
estimated time to completion. It is redrawn in place on stderr so that the
log output keeps scrolling above it.
"""

from __future__ import annotations

import threading
import time

from rich.console import Console
from rich.live import Live
from rich.text import Text


BAR_WIDTH = 30


def _format_duration(seconds: float) -> str:
    if seconds < 60:
        return f'{seconds:.1f}s'
    minutes, secs = divmod(int(seconds), 60)
    if minutes < 60:
        return f'{minutes}m{secs:02d}s'
    hours, minutes = divmod(minutes, 60)
    return f'{hours}h{minutes:02d}m'


class LiveDisplay:
    """Progress over work units.

    Totals may grow while the display is running: every pool.map call adds
    its own chunks, so a multi-stage experiment shows one cumulative line.
    """

    def __init__(self, console: Console, label: str = 'Work') -> None:
        self.console = console
        self.label = label
        self.lock = threading.Lock()
        self.total: int = 0
        self.completed: int = 0
        self.failed: int = 0
        self.live: Live | None = None
        self.t0: float = time.monotonic()

    @property
    def running(self) -> bool:
        return self.live is not None

    def start(self, total: int = 0) -> None:
        self.total = total
        self.t0 = time.monotonic()
        self.live = Live(self._render(), console=self.console,
                         auto_refresh=False, transient=False)
        self.live.start()

    def stop(self) -> None:
        if self.live is not None:
            self.live.stop()
            self.live = None

    def add_total(self, extra: int) -> None:
        with self.lock:
            self.total += extra
            self._refresh()

    def advance(self, count: int = 1, failed: int = 0) -> None:
        if not self.running:
            return
        with self.lock:
            self.completed += count
            self.failed += failed
            self._refresh()

    def _refresh(self) -> None:
        if self.live is not None:
            self.live.update(self._render(), refresh=True)

    def _eta(self, elapsed: float) -> str:
        if not self.completed or self.completed >= self.total:
            return '--'
        rate = self.completed / elapsed if elapsed > 0 else 0.0
        if rate <= 0:
            return '--'
        return _format_duration((self.total - self.completed) / rate)

    def _render(self) -> Text:
        elapsed = time.monotonic() - self.t0
        frac = self.completed / self.total if self.total else 0.0
        filled = min(BAR_WIDTH, int(frac * BAR_WIDTH))
        if self.completed and not filled:
            filled = 1

        line = Text(f'{self.label} ')
        line.append('━' * filled, style='green')
        line.append('─' * (BAR_WIDTH - filled), style='dim')
        line.append(f' {self.completed}/{self.total}')
        if self.failed:
            line.append(f'  {self.failed} failed', style='red')
        line.append(f'  {_format_duration(elapsed)} elapsed'
                    f', eta {self._eta(elapsed)}', style='dim')
        return line
