"""Deterministic parallel evaluation of candidate genotypes.

A generation of candidates is packaged into immutable jobs, evaluated by a
pool of in-process workers, and returned as immutable results keyed by job
id. All randomness an evaluation needs comes from the job's derived seed,
so results are identical for any worker count and any completion order. A
single-machine pool is the only transport here, but jobs and results are the
whole wire contract, so a remote transport could be swapped in behind
:func:`evaluate_all`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .genotype import Genotype

log = logging.getLogger(__name__)

WORKERS_ENV = "EVONAS_WORKERS"


def derive_seed(root_seed: int, *parts: int) -> int:
    """Stable 63-bit seed for (root, experiment, generation, index) and the like."""
    key = ":".join(str(int(p)) for p in (root_seed, *parts)).encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def resolve_worker_count(cli_value: int | None, default: int = 1) -> int:
    """Worker count from the CLI flag, else the environment, else ``default``."""
    if cli_value is not None:
        return max(1, cli_value)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    return default


@dataclass(frozen=True)
class EvalJob:
    """One evaluation request: a genotype plus everything needed to score it."""

    job_id: tuple[int, int, int]  # (experiment, generation, index)
    genotype: Genotype
    seed: int
    train_config: Any = None


@dataclass(frozen=True)
class EvalResult:
    """Outcome of one job; ``params`` is 0 and ``perf`` None when it failed."""

    job_id: tuple[int, int, int]
    perf: float | None
    params: int
    status: str
    millis: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


Evaluator = Callable[[Genotype, int], tuple[float, int]]


def _run_job(job: EvalJob, evaluator: Evaluator) -> EvalResult:
    started = time.perf_counter_ns()
    try:
        perf, params = evaluator(job.genotype, job.seed)
        status, perf, params = "ok", float(perf), int(params)
    except Exception as exc:  # a failing candidate must not sink the pool
        log.warning("evaluation %s failed: %r", job.job_id, exc)
        status, perf, params = f"failed: {exc!r}", None, 0
    millis = (time.perf_counter_ns() - started) // 1_000_000
    return EvalResult(job.job_id, perf, params, status, int(millis))


def evaluate_all(
    jobs: list[EvalJob],
    evaluator: Evaluator,
    worker_count: int = 1,
    trace_path=None,
) -> list[EvalResult]:
    """Evaluate every job; exactly one result per job, ordered by job id.

    A worker exception marks only its own job as failed. With ``trace_path``
    set, one JSON line per result is appended for postmortem inspection.
    """
    if worker_count < 1:
        raise ValueError(f"worker_count must be at least 1, got {worker_count}")
    ids = [job.job_id for job in jobs]
    if len(set(ids)) != len(ids):
        raise ValueError("job ids must be unique within a batch")

    if worker_count == 1 or len(jobs) <= 1:
        results = [_run_job(job, evaluator) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            results = list(pool.map(lambda j: _run_job(j, evaluator), jobs))
    results.sort(key=lambda r: r.job_id)

    if trace_path is not None:
        with Path(trace_path).open("a") as fh:
            for r in results:
                fh.write(
                    json.dumps(
                        {
                            "job_id": list(r.job_id),
                            "status": r.status,
                            "perf": r.perf,
                            "params": r.params,
                            "millis": r.millis,
                        }
                    )
                    + "\n"
                )
    return results
