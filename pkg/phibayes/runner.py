import asyncio
import json
import logging
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from pathlib import Path
from types import TracebackType
from typing import Any

import pandas as pd
from aiofile import async_open

from phibayes.config import ExperimentConfig
from phibayes.errors import ConfigError
from phibayes.response import ReplicationResponse

logger = logging.getLogger(__name__)

JOBS_ENV = "PHIBAYES_JOBS"

Worker = Callable[[ExperimentConfig, Any, int], ReplicationResponse]


def resolve_jobs(jobs: int | None) -> int:
    """
    Worker count from --jobs, else from PHIBAYES_JOBS, else 1
    """
    if jobs is None:
        value = os.environ.get(JOBS_ENV, "1")
        try:
            jobs = int(value)
        except ValueError:
            raise ConfigError(f"{JOBS_ENV}={value!r} is not an integer") from None
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}")
    return jobs


class StudyRunner:
    def __init__(
        self, cfg: ExperimentConfig, jobs: int = 1, gnuplot: bool = False, timestamp: str | None = None
    ) -> None:
        """
        Runs the replications of a study on a bounded worker pool and writes its artifacts to
        <output_dir>/<study>/<timestamp>_<config hash>/

        Args:
            cfg: validated configuration
            jobs: worker processes, replications run inline with 1
            gnuplot: also emit a plot.gp script next to rows.csv
            timestamp: run directory timestamp, defaults to now
        """
        self.cfg = cfg
        self.jobs = jobs
        self.gnuplot = gnuplot
        self.config_hash = cfg.config_hash()
        self.timestamp = timestamp or datetime.now().strftime("%Y%m%dT%H%M%S")
        self.pool: ProcessPoolExecutor | None = None
        self.run_dir: Path | None = None
        self._write_lock = asyncio.Lock()

    async def __aenter__(self) -> "StudyRunner":
        """
        Enter method for context manager
        """
        await self.open()
        return self

    async def __aexit__(
        self,
        exception_type: type[BaseException] | None,
        exception_value: BaseException | None,
        traceback: TracebackType | None,
    ) -> None:
        """
        Exit method to cleanup for context manager

        Args:
            exception_type: exception type being raised
            exception_value: message from exception being raised
            traceback: traceback from exception being raised
        """
        await self.close()

    async def open(self) -> None:
        """
        Create the run directory and the worker pool
        """
        base = Path(self.cfg.study.output_dir) / self.cfg.study.kind
        run_dir = base / f"{self.timestamp}_{self.config_hash}"
        suffix = 1
        while run_dir.exists():
            run_dir = base / f"{self.timestamp}_{self.config_hash}_{suffix}"
            suffix += 1
        (run_dir / "chains").mkdir(parents=True)
        self.run_dir = run_dir
        if self.jobs > 1:
            self.pool = ProcessPoolExecutor(max_workers=self.jobs)
        logger.info(f"Run directory {run_dir} is created, {self.jobs} worker(s)")

    async def close(self) -> None:
        """
        Shut the worker pool down
        """
        if self.pool is not None:
            self.pool.shutdown(wait=True, cancel_futures=True)
            self.pool = None

    async def run(self, worker: Worker, tasks: Sequence[Any], chain_jobs: int = 1) -> list[ReplicationResponse]:
        """
        Execute every task and write the artifacts each one produced

        Args:
            worker: picklable function (cfg, task, chain_jobs) -> ReplicationResponse
            tasks: replication tasks, results keep this order
            chain_jobs: threads per replication for its chains

        Returns:
            list: responses in task order
        """
        logger.info(f"{len(tasks)} replication(s) of {self.cfg.study.kind} are requested")
        if self.pool is None:
            responses = [worker(self.cfg, task, chain_jobs) for task in tasks]
        else:
            loop = asyncio.get_running_loop()
            futures = [loop.run_in_executor(self.pool, worker, self.cfg, task, chain_jobs) for task in tasks]
            responses = list(await asyncio.gather(*futures))

        for response in responses:
            for name, content in sorted(response.artifacts.items()):
                await self.write(name, content)
        failures = sum(response.failed for response in responses)
        if failures:
            logger.warning(f"{failures} of {len(responses)} replication(s) failed")
        return responses

    async def write(self, name: str, content: str) -> Path:
        """
        Write a text file inside the run directory, the only way run artifacts reach the disk

        Args:
            name: path relative to the run directory
            content: file content

        Returns:
            Path: path of the written file
        """
        path = self.run_dir / name
        async with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            async with async_open(path, "w") as afp:
                await afp.write(content)
        return path

    async def emit(self, rows: pd.DataFrame, summary: dict) -> None:
        """
        Write rows.csv, summary.json and, when requested, plot.gp
        """
        await self.write("rows.csv", rows.to_csv(index=False, float_format="%.17g"))
        await self.write("summary.json", json.dumps(summary, indent=2, sort_keys=True, allow_nan=True) + "\n")
        if self.gnuplot:
            await self.write("plot.gp", gnuplot_script(rows))
        logger.info(f"Results of {self.cfg.study.kind} are written to {self.run_dir}")


def gnuplot_script(rows: pd.DataFrame) -> str:
    """
    Gnuplot stub plotting every numeric column of rows.csv against the replication index
    """
    columns = [c for c in rows.columns if c not in ("replication", "label", "failed", "error")]
    numeric = [c for c in columns if pd.api.types.is_numeric_dtype(rows[c])]
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 'replication'",
    ]
    plots = [f"'rows.csv' using 'replication':'{column}' with points title '{column}'" for column in numeric]
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"
