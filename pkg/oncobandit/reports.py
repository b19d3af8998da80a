"""Step logs, summary and aggregate tables, activity tables and manifests."""

from __future__ import annotations

import asyncio
import io
import json
import logging
from pathlib import Path
from typing import Any

import aiofiles
import numpy as np
import pandas as pd

from .const import (
    ACTIVITY_SUFFIX,
    AGGREGATE_FILE,
    DEFAULT_WINDOW,
    DOMAIN,
    FAILURES_FILE,
    MANIFEST_FILE,
    STEP_LOG_SUFFIX,
    SUMMARY_CAVEAT,
    SUMMARY_FILE,
    VERSION,
)
from .errors import ReportError
from .runner import CellFailure, RunResult

_LOGGER = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["mode", "reward", "agent", "seed", "r", "r_star", "regret", "normalized", "mean_score"]
BLOCK = ["mode", "reward"]


def step_log_lines(result: RunResult) -> str:
    """One JSON object per step, keys sorted."""
    return "".join(json.dumps(step.as_dict(), sort_keys=True) + "\n" for step in result.steps)


def summary_frame(results: list[RunResult]) -> pd.DataFrame:
    """One row per cell."""
    return pd.DataFrame([result.summary() for result in results], columns=SUMMARY_COLUMNS)


def aggregate_frame(results: list[RunResult]) -> pd.DataFrame:
    """Mean and sample standard deviation over seeds, ranked within each block.

    Rank 1 is the highest mean cumulative reward within a (mode, reward) block.
    """
    summary = summary_frame(results)
    if summary.empty:
        return pd.DataFrame()
    grouped = summary.groupby([*BLOCK, "agent"], sort=False)
    table = grouped.agg(
        seeds=("seed", "count"),
        r_mean=("r", "mean"),
        r_sd=("r", "std"),
        regret_mean=("regret", "mean"),
        regret_sd=("regret", "std"),
        normalized_mean=("normalized", "mean"),
        normalized_sd=("normalized", "std"),
    ).reset_index()
    table["rank"] = (
        table.groupby(BLOCK, sort=False)["r_mean"].rank(ascending=False, method="min").astype(int)
    )
    return table


def activity_frame(result: RunResult, window: int = DEFAULT_WINDOW) -> pd.DataFrame:
    """Per-window action counts; the last window may be shorter."""
    if window < 1:
        raise ValueError("window must be at least 1")
    actions = np.array([step.action for step in result.steps], dtype=np.int64)
    rows = []
    for start in range(0, len(actions), window):
        chunk = actions[start : start + window]
        counts = np.bincount(chunk, minlength=len(result.drugs))
        rows.append([start // window, start, start + len(chunk), *counts.tolist()])
    return pd.DataFrame(rows, columns=["window", "start", "end", *result.drugs])


def _csv(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.10g", lineterminator="\n")
    return buffer.getvalue()


def manifest(config: dict[str, Any], results: list[RunResult]) -> dict[str, Any]:
    """Echoed configuration plus resolved hyperparameters of every agent."""
    agents = {result.config.agent.name: result.config.agent.as_dict() for result in results}
    return {
        "generator": f"{DOMAIN} {VERSION}",
        "config": config,
        "agents": dict(sorted(agents.items())),
        "runs": sorted({result.config.label for result in results}),
    }


async def _write(path: Path, content: str) -> None:
    async with aiofiles.open(path, "w", encoding="utf-8") as fh:
        await fh.write(content)


async def async_emit_reports(
    results: list[RunResult],
    out: Path | str,
    *,
    failures: list[CellFailure] | None = None,
    window: int = DEFAULT_WINDOW,
    config: dict[str, Any] | None = None,
) -> list[Path]:
    """Write every report for a set of completed runs into ``out``."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ReportError(f"cannot create output directory {out}: {err}") from err
    files: dict[Path, str] = {}
    for result in results:
        label = result.config.label
        files[out / f"{label}{STEP_LOG_SUFFIX}"] = step_log_lines(result)
        files[out / f"{label}{ACTIVITY_SUFFIX}"] = _csv(activity_frame(result, window))
    files[out / SUMMARY_FILE] = SUMMARY_CAVEAT + "\n" + _csv(summary_frame(results))
    files[out / AGGREGATE_FILE] = _csv(aggregate_frame(results))
    files[out / MANIFEST_FILE] = json.dumps(
        manifest(config or {}, results), indent=4, sort_keys=True
    ) + "\n"
    if failures:
        files[out / FAILURES_FILE] = "".join(
            f"{failure.key}: {failure.message}\n" for failure in failures
        )
    try:
        await asyncio.gather(*(_write(path, content) for path, content in files.items()))
    except OSError as err:
        raise ReportError(f"cannot write reports to {out}: {err}") from err
    _LOGGER.info("Wrote %s report files to %s", len(files), out)
    return list(files)


def emit_reports(results: list[RunResult], out: Path | str, **kwargs: Any) -> list[Path]:
    """Blocking wrapper around :func:`async_emit_reports`."""
    return asyncio.run(async_emit_reports(results, out, **kwargs))
