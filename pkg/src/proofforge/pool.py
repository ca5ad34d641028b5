"""Bounded worker pool with per-job timeout and retry.

Jobs are independent and identified by id; results merge by id regardless of
completion order.  Timeouts are enforced on the waiting side: a job that
overruns is recorded as timed out and abandoned (its thread finishes in the
background), which is the only portable client-side guarantee threads offer.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Generic, Hashable, Iterable, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class JobResult(Generic[R]):
    job_id: Hashable
    value: Optional[R] = None
    error: Optional[Exception] = None
    timed_out: bool = False
    attempts: int = 0
    elapsed_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None and not self.timed_out


def run_jobs(
    jobs: Iterable[tuple[Hashable, T]],
    worker: Callable[[T], R],
    max_parallel: int = 8,
    timeout_s: float | None = None,
    retries: int = 0,
    retry_backoff_s: float = 0.0,
) -> dict[Hashable, JobResult[R]]:
    """Run ``worker`` over all jobs with bounded parallelism.

    A job is retried on exception up to ``retries`` times; a timeout is
    terminal (no retry, the attempt may still be running).
    """
    jobs = list(jobs)
    results: dict[Hashable, JobResult[R]] = {}
    if not jobs:
        return results

    def attempt_job(payload: T) -> R:
        return worker(payload)

    with ThreadPoolExecutor(max_workers=max_parallel) as executor:
        pending = {
            executor.submit(attempt_job, payload): (job_id, payload, 1, time.monotonic())
            for job_id, payload in jobs
        }
        while pending:
            done_futures = []
            for future in list(pending):
                job_id, payload, attempt, started = pending[future]
                remaining = None
                if timeout_s is not None:
                    remaining = timeout_s - (time.monotonic() - started)
                    if remaining <= 0 and not future.done():
                        results[job_id] = JobResult(
                            job_id, timed_out=True, attempts=attempt,
                            elapsed_s=time.monotonic() - started,
                        )
                        future.cancel()
                        done_futures.append(future)
                        continue
                if not future.done():
                    continue
                done_futures.append(future)
                elapsed = time.monotonic() - started
                exc = future.exception()
                if exc is None:
                    results[job_id] = JobResult(
                        job_id, value=future.result(), attempts=attempt, elapsed_s=elapsed
                    )
                elif attempt <= retries:
                    if retry_backoff_s:
                        time.sleep(retry_backoff_s * 2 ** (attempt - 1))
                    new_future = executor.submit(attempt_job, payload)
                    pending[new_future] = (job_id, payload, attempt + 1, time.monotonic())
                else:
                    results[job_id] = JobResult(
                        job_id, error=exc, attempts=attempt, elapsed_s=elapsed
                    )
            for future in done_futures:
                pending.pop(future, None)
            if pending:
                time.sleep(0.005)
    return results


__all__ = ["JobResult", "run_jobs"]
