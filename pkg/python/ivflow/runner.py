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
Experiment runner: worker pool, orchestration and run manifest.

Work is split into chunks of a fixed size (never derived from the worker
count), dispatched to worker threads through a queue and reassembled by
chunk index, so artifacts do not depend on how many workers ran.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
import time
from collections import deque
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import psutil
from rich.console import Console
from rich.table import Table

from ivflow.config import ExperimentConfig
from ivflow.experiments import ExperimentContext, estimate_map_applications, \
    run_experiment
from ivflow.live_display import LiveDisplay
from ivflow.stats import RunStats


logger = logging.getLogger(__name__)


@dataclasses.dataclass
class _Job:
    index: int
    func: Callable[[Any], Any]
    payload: Any
    batch: _Batch


class _Batch:
    """Results of one map() call, filled in by the workers."""

    def __init__(self, size: int) -> None:
        self.results: list[Any] = [None] * size
        self.errors: dict[int, BaseException] = {}
        self.remaining = size
        self.cond = threading.Condition()

    def done(
        self, index: int, result: Any, error: BaseException | None
    ) -> None:
        with self.cond:
            if error is not None:
                self.errors[index] = error
            else:
                self.results[index] = result
            self.remaining -= 1
            self.cond.notify_all()

    def wait(self) -> None:
        with self.cond:
            while self.remaining > 0:
                self.cond.wait(timeout=0.5)


class _DispatchQueue:
    """Blocking FIFO of jobs; None tells a worker to exit."""

    def __init__(self) -> None:
        self._deque: deque[_Job | None] = deque()
        self._cond: threading.Condition = threading.Condition()

    def put(self, item: _Job | None) -> None:
        with self._cond:
            self._deque.append(item)
            self._cond.notify()

    def get(self) -> _Job | None:
        with self._cond:
            while not self._deque:
                self._cond.wait()
            return self._deque.popleft()


class Worker(threading.Thread):

    def __init__(self, pool: WorkerPool) -> None:
        super().__init__(daemon=True)
        self.pool: WorkerPool = pool

    def run(self) -> None:
        while True:
            job = self.pool.queue.get()
            if job is None:
                return
            self.pool.execute(job)


class WorkerPool:
    """Thread pool over fixed-size chunks with ordered results."""

    def __init__(
        self, workers: int = 0, chunk_size: int = 64,
        display: LiveDisplay | None = None
    ) -> None:
        if workers == 0:
            workers = psutil.cpu_count(logical=True) or 1
        self.nb_threads: int = workers
        self.chunk_size: int = chunk_size
        self.display: LiveDisplay | None = display
        self.queue = _DispatchQueue()
        self.threads: list[Worker] = []

    def __enter__(self) -> WorkerPool:
        self.start()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.stop()

    def start(self) -> None:
        if self.nb_threads > 1 and not self.threads:
            for _ in range(self.nb_threads):
                worker = Worker(self)
                worker.start()
                self.threads.append(worker)
            logger.debug(f'Started {self.nb_threads} worker threads')

    def stop(self) -> None:
        for _ in self.threads:
            self.queue.put(None)
        for worker in self.threads:
            worker.join()
        self.threads = []

    def execute(self, job: _Job) -> None:
        try:
            result = job.func(job.payload)
            error = None
        except BaseException as e:
            result, error = None, e
        job.batch.done(job.index, result, error)
        if self.display is not None:
            self.display.advance(failed=int(error is not None))

    def map(
        self, func: Callable[[Any], Any], items: Sequence[Any]
    ) -> list[Any]:
        """func over items, results in item order.

        The first failing item (by index) has its exception re-raised.
        """
        batch = _Batch(len(items))
        if self.display is not None:
            self.display.add_total(len(items))
        jobs = [_Job(i, func, item, batch) for i, item in enumerate(items)]
        if self.threads:
            for job in jobs:
                self.queue.put(job)
            batch.wait()
        else:
            for job in jobs:
                self.execute(job)
        if batch.errors:
            raise batch.errors[min(batch.errors)]
        return batch.results

    def map_array(
        self, func: Callable[[np.ndarray], np.ndarray], items: np.ndarray
    ) -> np.ndarray:
        """func over chunk_size slices of items, concatenated on axis 0."""
        items = np.asarray(items)
        if not len(items):
            return func(items)
        chunks = [items[i:i + self.chunk_size]
                  for i in range(0, len(items), self.chunk_size)]
        return np.concatenate(self.map(func, chunks))


@dataclasses.dataclass
class RunResult:
    out_dir: Path
    artifacts: list[str]
    stats: RunStats
    status: str = 'ok'


def dump_summary(stats: RunStats, kind: str, console: Console) -> None:
    table = Table(show_header=False)
    table.add_column('Quantity')
    table.add_column('Value', justify='right')
    table.add_row(f'Run summary: {kind}', '', style='bold', end_section=True)
    stats.dump_table(table)
    console.print(table)


def _report_cost(
    config: ExperimentConfig, stats: RunStats, quiet: bool
) -> None:
    try:
        cost = estimate_map_applications(config)
    except (KeyError, TypeError, ValueError) as e:
        # left to the pipeline, which reports the real problem
        logger.debug(f'No cost estimate: {e}')
        return
    stats.add_stats(estimated_map_applications=cost)
    logger.info(f'Estimated cost: about {cost:.3g} map applications')
    if not quiet:
        Console(stderr=True, highlight=False).print(
            f'{config.kind}: about {cost:.3g} map applications'
        )


def run(
    config: ExperimentConfig, out_dir: str | None = None,
    workers: int | None = None, quiet: bool = False
) -> RunResult:
    """Run one experiment and write its artifacts plus manifest.json.

    Any exception (numerical failure, config problem found by a pipeline,
    I/O error) still leaves the artifacts written so far, a failure.log and
    a manifest with status 'failed'; it is then re-raised.
    """
    out = Path(out_dir or config.output or 'ivflow-out')
    out.mkdir(parents=True, exist_ok=True)
    stats = RunStats()
    _report_cost(config, stats, quiet)
    display = None
    if not quiet:
        display = LiveDisplay(Console(highlight=False, stderr=True),
                              label=config.kind)
        display.start(0)

    pool = WorkerPool(
        config.workers if workers is None else workers,
        config.chunk_size, display
    )
    ctx = ExperimentContext(config, pool, out, stats)
    status, failure = 'ok', None
    start = time.time()
    try:
        with pool:
            run_experiment(ctx)
    except Exception as e:
        status, failure = 'failed', f'{type(e).__name__}: {e}'
        logger.error(f'Experiment {config.kind} failed: {failure}')
        try:
            ctx.write_text('failure.log', failure + '\n')
        except OSError as log_error:
            logger.warning(f'Could not write failure.log: {log_error}')
        raise
    finally:
        if display is not None:
            display.stop()
        stats.add_stats(duration=time.time() - start)
        ctx.write_json('manifest.json', stats.manifest(
            config.digest(), config.kind, ctx.artifacts, status, failure
        ))
        if not quiet:
            dump_summary(stats, config.kind, Console())

    logger.info(f'Wrote {len(ctx.artifacts)} artifacts to {out}')
    return RunResult(out, list(ctx.artifacts), stats, status)
