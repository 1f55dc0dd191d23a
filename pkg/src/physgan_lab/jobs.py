"""Bounded worker pool for independent, seeded jobs."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Job:
    """One isolated unit of work; `fn` must be a module-level function."""

    key: tuple[Any, ...]
    fn: Callable[..., Any]
    args: tuple[Any, ...] = field(default_factory=tuple)


def run_jobs(jobs: Sequence[Job], max_workers: int = 1) -> list[tuple[tuple[Any, ...], Any]]:
    """Run jobs and return (key, result) pairs sorted by key.

    With `max_workers == 1` jobs run in this process, in key order. Otherwise
    they run in a process pool; if any job fails, the failure of the job with
    the smallest key is re-raised after the pool has drained.
    """
    ordered = sorted(jobs, key=lambda j: j.key)
    keys = [j.key for j in ordered]
    if len(set(keys)) != len(keys):
        raise ValueError("Job keys must be unique")
    if max_workers <= 1 or len(ordered) <= 1:
        results = []
        for job in ordered:
            logger.debug(f"Running job {job.key}")
            results.append((job.key, job.fn(*job.args)))
        return results

    logger.info(f"Running {len(ordered)} jobs on {max_workers} workers")
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        futures = [(job.key, pool.submit(job.fn, *job.args)) for job in ordered]
        outcomes = []
        for key, future in futures:
            try:
                outcomes.append((key, future.result(), None))
            except Exception as e:  # noqa: BLE001
                logger.error(f"Job {key} failed: {e}")
                outcomes.append((key, None, e))
    for key, _, error in outcomes:
        if error is not None:
            raise error
    return [(key, result) for key, result, _ in outcomes]
